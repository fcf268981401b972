#pragma once

#include <string>
#include <vector>

#include "zfn/recon.hpp"
#include "zfn/tensor.hpp"

namespace zfn {

// Pixel weights in [0, 1]; low values damp regions that differ a lot even
// on normal parts (high natural variation), high values keep stable
// regions at full strength.
struct WeightMask {
    int height = 0;
    int width = 0;
    std::vector<float> weights;
    int holdout_used = 0;

    float at(int r, int c) const {
        return weights[static_cast<std::size_t>(r) * width + c];
    }
};

// Mean absolute difference over held-out normal pairs, min-max normalized,
// then flipped (1 - n). A constant mean difference map normalizes to all
// zeros and flips to an all-ones mask.
WeightMask build_mask(const std::vector<ReconPair>& holdout_normals);

DiffMap apply_mask(const DiffMap& diff, const WeightMask& mask);

// Tensor payload plus a JSON sidecar recording holdout size and source
// content hashes.
void save_mask(const WeightMask& mask, const std::string& path);
WeightMask load_mask(const std::string& path);
void write_mask_provenance(const WeightMask& mask,
                           const std::vector<ReconPair>& holdout_normals,
                           const std::string& mask_path);

}  // namespace zfn
