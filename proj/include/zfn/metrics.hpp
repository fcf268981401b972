#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "zfn/features.hpp"
#include "zfn/localize.hpp"
#include "zfn/maskweight.hpp"
#include "zfn/recon.hpp"

namespace zfn {

// One row of the metric dataset. Values align with the table schema;
// absent sidecar losses stay unset rather than defaulting to zero.
struct MetricRecord {
    std::string image_id;
    int label = 0;
    std::vector<std::optional<double>> values;
    std::string provenance;
};

struct MetricTable {
    std::vector<std::string> schema;
    std::vector<MetricRecord> records;
};

struct MetricsOptions {
    PatchConfig patch;
    bool use_mask = true;
    std::string embedder = "baseline";
    std::string feat_dir;
    std::string provenance;
    int threads = 1;
};

// Feature names in emission order: whole-image metrics, then the
// unmasked family, then (when the mask is on) the masked family. Each
// family holds diff aggregates, top-p pixel aggregates, and per-distance
// patch aggregates.
std::vector<std::string> metric_schema(bool use_mask);

inline constexpr const char* kAggregateNames[7] = {"sum", "max",    "min", "mean",
                                                   "q1",  "median", "q3"};

std::vector<std::pair<std::string, std::optional<double>>> image_level(const ReconPair& pair,
                                                                       const Embedder& embedder);

std::vector<std::pair<std::string, double>> pixel_level(const DiffMap& diff, int p);

std::vector<std::pair<std::string, double>> patch_level(
    const std::vector<PatchCandidate>& candidates, const ReconPair& pair);

MetricRecord collect(const ReconPair& pair, const WeightMask* mask, const MetricsOptions& opts);

MetricTable collect_table(const std::vector<ReconPair>& pairs, const WeightMask* mask,
                          const MetricsOptions& opts);

// image_id,label,<schema...>; floats carry 17 significant digits, absent
// values are empty cells.
void write_metrics_csv(const MetricTable& table, const std::string& path);
MetricTable read_metrics_csv(const std::string& path);

}  // namespace zfn
