#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "zfn/tensor.hpp"

namespace zfn {

enum class DistanceKind {
    frechet,
    ssim,
    braycurtis,
    canberra,
    euclidean,
    cosine,
    wasserstein,
    hamming,
    minkowski3,
    jensenshannon,
};

inline constexpr std::array<DistanceKind, 10> kAllDistanceKinds = {
    DistanceKind::frechet,    DistanceKind::ssim,      DistanceKind::braycurtis,
    DistanceKind::canberra,   DistanceKind::euclidean, DistanceKind::cosine,
    DistanceKind::wasserstein, DistanceKind::hamming,  DistanceKind::minkowski3,
    DistanceKind::jensenshannon,
};

std::string distance_kind_name(DistanceKind kind);
std::optional<DistanceKind> parse_distance_kind(std::string_view name);

// Vector-form distance for every kind except frechet, which needs the
// 2-D patch structure.
double vector_distance(DistanceKind kind, const std::vector<double>& u,
                       const std::vector<double>& v);

// Patches are channel-reduced to gray, then flattened row-major for the
// vector kinds; frechet fits a Gaussian per patch over grid-cell
// embeddings and compares the two fits.
double patch_distance(DistanceKind kind, const ImageTensor& a, const ImageTensor& b);

// Corner detection (contiguous-arc segment test on a 16-pixel circle),
// 256-bit descriptors from a fixed seeded pair pattern in a 31x31 window,
// mutual-nearest-neighbor matching with a 0.8 ratio test. Result is
// 1 - 2|matches| / (|Ka| + |Kb|); 0 when both keypoint sets are empty,
// 1 when exactly one is. Images too small for the descriptor window give
// 1 and set *undersized.
double keypoint_match_distance(const ImageTensor& a, const ImageTensor& b,
                               bool* undersized = nullptr);

}  // namespace zfn
