#pragma once

#include <string>
#include <utility>
#include <vector>

#include "zfn/features.hpp"
#include "zfn/recon.hpp"
#include "zfn/tensor.hpp"

namespace zfn {

struct PatchConfig {
    int p = 100;
    int n = 4;
    int alpha = 4;
    int q = 250;
};

void validate_patch_config(const PatchConfig& cfg);

enum class Shift {
    center,
    top_left,
    top_center,
    top_right,
    center_left,
    center_right,
    bottom_left,
    bottom_center,
    bottom_right,
};

inline constexpr int kShiftCount = 9;
std::string shift_name(Shift s);

struct PatchBounds {
    int row0 = 0;
    int col0 = 0;
    int size = 0;

    bool overlaps(int other_row0, int other_col0, int other_rows, int other_cols) const {
        return row0 < other_row0 + other_rows && other_row0 < row0 + size &&
               col0 < other_col0 + other_cols && other_col0 < col0 + size;
    }
};

struct PatchCandidate {
    int center_row = 0;
    int center_col = 0;
    int size = 0;
    Shift shift = Shift::center;
    PatchBounds bounds;
    double score = 0.0;
};

// Coordinates of the p largest diff values, ordered by descending value;
// equal values fall back to row-major order.
std::vector<std::pair<int, int>> top_p_pixels(const DiffMap& diff, int p);

// n zoom levels with side alpha*i around one seed: the centered window
// plus eight copies shifted by half the side in each compass direction,
// clamped inside the image by translation (size preserved). Level-major,
// shift enumeration order within a level.
std::vector<PatchCandidate> make_candidates(int seed_row, int seed_col, const PatchConfig& cfg,
                                            int height, int width);

ImageTensor extract_patch(const ImageTensor& image, const PatchBounds& bounds);

// Scores every candidate of every seed with the Fréchet distance between
// original-patch and reconstruction-patch feature fits, then keeps the q
// highest. Ties keep generation order: seed, then level, then shift.
std::vector<PatchCandidate> rank_candidates(const ReconPair& pair,
                                            const std::vector<std::pair<int, int>>& seeds,
                                            const PatchConfig& cfg, const Embedder& embedder,
                                            int threads = 1);

}  // namespace zfn
