#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "zfn/localize.hpp"
#include "zfn/report.hpp"
#include "zfn/scorer.hpp"
#include "zfn/synth.hpp"

namespace zfn {

// One exit code per stage so callers can tell where a run failed.
namespace exit_code {
constexpr int config = 2;
constexpr int synth = 3;
constexpr int reconstruct = 4;
constexpr int ingest = 5;
constexpr int mask = 6;
constexpr int localize = 7;
constexpr int metrics = 8;
constexpr int score = 9;
constexpr int evaluate = 10;
constexpr int report = 11;
}  // namespace exit_code

class StageError : public std::runtime_error {
public:
    StageError(std::string stage, int code, const std::string& message)
        : std::runtime_error("stage " + stage + ": " + message),
          stage_(std::move(stage)),
          code_(code) {}

    const std::string& stage() const { return stage_; }
    int code() const { return code_; }

private:
    std::string stage_;
    int code_;
};

struct PipelineConfig {
    std::string workdir = "out";
    std::uint64_t seed = 20240817;
    int threads = 1;

    bool synth_enabled = true;
    SynthSpec synth;
    std::string train_manifest;  // used when synth is off
    std::string mask_manifest;
    std::string test_manifest;
    bool compute_golden = true;  // derive the reference reconstruction from train originals

    PatchConfig patch;
    bool use_mask = true;
    std::string embedder = "baseline";  // baseline | external
    std::string feat_dir;

    std::vector<std::string> kinds = kClassifierKinds;
    int iterations = 500;
    int folds = 5;
    bool nested_search = false;
    std::string threshold_source = "loocv";  // loocv | refit
    bool emit_svg = true;
};

nlohmann::ordered_json config_to_json(const PipelineConfig& config);
PipelineConfig config_from_json(const nlohmann::json& j);

// Reads the file, applies the ZFN_SEED environment override when set.
PipelineConfig load_config(const std::string& path);

struct PipelineResult {
    std::string data_dir;  // empty without the synthetic stage
    std::string metrics_csv;
    std::string model_json;
    std::string report_json;
    std::string report_md;
    std::string report_svg;  // empty when not emitted
    EvalReport report;
};

// reconstruct/ingest -> mask build -> metrics (patch localization
// inside) -> score fit -> evaluate/report. Throws StageError.
PipelineResult run_pipeline(const PipelineConfig& config);

}  // namespace zfn
