#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "zfn/tensor.hpp"

namespace zfn {

struct Rect {
    int row0 = 0;
    int col0 = 0;
    int rows = 0;
    int cols = 0;

    bool intersects(const Rect& o) const {
        return row0 < o.row0 + o.rows && o.row0 < row0 + rows && col0 < o.col0 + o.cols &&
               o.col0 < col0 + cols;
    }
    bool contains(int r, int c) const {
        return r >= row0 && r < row0 + rows && c >= col0 && c < col0 + cols;
    }
};

// Registered circuit-like scenes: a grid of two-pad components on a dark
// board, per-component placement jitter, pixel noise, and a barcode-like
// zone whose texture is randomized per image. Abnormal images carry one
// defect each: a component shifted by defect_magnitude pixels, a missing
// component, or a bright solder bridge across a component's pad gap.
struct SynthSpec {
    int image_size = 128;
    int grid_rows = 4;
    int grid_cols = 4;
    double jitter_sigma = 0.5;
    double noise_sigma = 0.02;
    Rect high_variation_zone{0, 0, 32, 32};
    std::vector<std::string> defect_kinds{"shift", "missing", "bridge"};
    double defect_magnitude = 5.0;
    int train_normals = 20;
    int mask_normals = 30;
    int test_normals = 24;
    int test_abnormals = 12;
    std::uint64_t seed = 20240817u;
};

void validate_synth_spec(const SynthSpec& spec);
nlohmann::ordered_json synth_spec_to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const nlohmann::json& j);

struct GroundTruthBox {
    Rect box;
    std::string kind;
};

struct SynthImage {
    std::string image_id;
    std::string role;  // train | mask | test
    int label = 0;
    ImageTensor image;
    std::vector<GroundTruthBox> boxes;
};

struct SynthDataset {
    SynthSpec spec;
    std::vector<SynthImage> images;
};

SynthDataset generate(const SynthSpec& spec, int threads = 1);

// Layout under out_dir: images/*.png (16-bit gray), train_manifest.csv,
// mask_manifest.csv, test_manifest.csv (reconstruction column pointing
// at recon/golden.zfnt, produced by the reconstruction stage), and
// ground_truth.json.
void write_dataset(const SynthDataset& dataset, const std::string& out_dir);

constexpr const char* kGoldenReconRelPath = "recon/golden.zfnt";

std::map<std::string, std::vector<GroundTruthBox>> load_ground_truth(const std::string& path);

}  // namespace zfn
