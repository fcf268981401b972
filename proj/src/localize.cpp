#include "zfn/localize.hpp"

#include <algorithm>
#include <stdexcept>

#include "zfn/parallel.hpp"

namespace zfn {

void validate_patch_config(const PatchConfig& cfg) {
    if (cfg.p < 1) throw std::runtime_error("patch config: p must be >= 1");
    if (cfg.n < 1) throw std::runtime_error("patch config: n must be >= 1");
    if (cfg.alpha < 1) throw std::runtime_error("patch config: alpha must be >= 1");
    const long total = static_cast<long>(cfg.p) * cfg.n * kShiftCount;
    if (cfg.q < 1 || cfg.q > total) {
        throw std::runtime_error("patch config: q must lie in [1, p*n*9]");
    }
}

std::string shift_name(Shift s) {
    switch (s) {
        case Shift::center: return "center";
        case Shift::top_left: return "top-left";
        case Shift::top_center: return "top-center";
        case Shift::top_right: return "top-right";
        case Shift::center_left: return "center-left";
        case Shift::center_right: return "center-right";
        case Shift::bottom_left: return "bottom-left";
        case Shift::bottom_center: return "bottom-center";
        case Shift::bottom_right: return "bottom-right";
    }
    throw std::runtime_error("unknown shift");
}

std::vector<std::pair<int, int>> top_p_pixels(const DiffMap& diff, int p) {
    const std::size_t total = diff.values.size();
    if (p < 1 || static_cast<std::size_t>(p) > total) {
        throw std::runtime_error("top_p_pixels: p out of range");
    }
    std::vector<std::size_t> order(total);
    for (std::size_t i = 0; i < total; ++i) order[i] = i;
    std::partial_sort(order.begin(), order.begin() + p, order.end(),
                      [&diff](std::size_t a, std::size_t b) {
                          if (diff.values[a] != diff.values[b]) {
                              return diff.values[a] > diff.values[b];
                          }
                          return a < b;
                      });
    std::vector<std::pair<int, int>> out;
    out.reserve(static_cast<std::size_t>(p));
    for (int i = 0; i < p; ++i) {
        out.emplace_back(static_cast<int>(order[i] / diff.width),
                         static_cast<int>(order[i] % diff.width));
    }
    return out;
}

std::vector<PatchCandidate> make_candidates(int seed_row, int seed_col, const PatchConfig& cfg,
                                            int height, int width) {
    validate_patch_config(cfg);
    const int max_side = cfg.alpha * cfg.n;
    if (height < max_side || width < max_side) {
        throw std::runtime_error("make_candidates: image smaller than the largest patch size");
    }
    if (seed_row < 0 || seed_row >= height || seed_col < 0 || seed_col >= width) {
        throw std::runtime_error("make_candidates: seed outside image");
    }
    std::vector<PatchCandidate> out;
    out.reserve(static_cast<std::size_t>(cfg.n) * kShiftCount);
    for (int level = 1; level <= cfg.n; ++level) {
        const int s = cfg.alpha * level;
        const int base_row = seed_row - ((s + 1) / 2 - 1);
        const int base_col = seed_col - ((s + 1) / 2 - 1);
        const int off = s / 2;
        constexpr int kOffsets[kShiftCount][2] = {
            {0, 0},  {-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1},
        };
        for (int si = 0; si < kShiftCount; ++si) {
            PatchCandidate cand;
            cand.center_row = seed_row;
            cand.center_col = seed_col;
            cand.size = s;
            cand.shift = static_cast<Shift>(si);
            cand.bounds.size = s;
            cand.bounds.row0 = std::clamp(base_row + kOffsets[si][0] * off, 0, height - s);
            cand.bounds.col0 = std::clamp(base_col + kOffsets[si][1] * off, 0, width - s);
            out.push_back(cand);
        }
    }
    return out;
}

ImageTensor extract_patch(const ImageTensor& image, const PatchBounds& bounds) {
    if (bounds.size < 1 || bounds.row0 < 0 || bounds.col0 < 0 ||
        bounds.row0 + bounds.size > image.height || bounds.col0 + bounds.size > image.width) {
        throw std::runtime_error("extract_patch: bounds outside image");
    }
    ImageTensor patch = make_tensor(bounds.size, bounds.size, image.channels);
    for (int r = 0; r < bounds.size; ++r) {
        const std::size_t src =
            (static_cast<std::size_t>(bounds.row0 + r) * image.width + bounds.col0) *
            image.channels;
        const std::size_t dst = static_cast<std::size_t>(r) * bounds.size * image.channels;
        std::copy_n(image.data.begin() + static_cast<std::ptrdiff_t>(src),
                    static_cast<std::size_t>(bounds.size) * image.channels,
                    patch.data.begin() + static_cast<std::ptrdiff_t>(dst));
    }
    return patch;
}

std::vector<PatchCandidate> rank_candidates(const ReconPair& pair,
                                            const std::vector<std::pair<int, int>>& seeds,
                                            const PatchConfig& cfg, const Embedder& embedder,
                                            int threads) {
    validate_patch_config(cfg);
    if (static_cast<int>(seeds.size()) != cfg.p) {
        throw std::runtime_error("rank_candidates: seed count does not match config p");
    }
    std::vector<PatchCandidate> all(static_cast<std::size_t>(cfg.p) * cfg.n * kShiftCount);
    const std::size_t per_seed = static_cast<std::size_t>(cfg.n) * kShiftCount;
    parallel_for(seeds.size(), threads, [&](std::size_t si) {
        auto cands = make_candidates(seeds[si].first, seeds[si].second, cfg, pair.original.height,
                                     pair.original.width);
        for (std::size_t ci = 0; ci < cands.size(); ++ci) {
            PatchCandidate& cand = cands[ci];
            const ImageTensor pa = extract_patch(pair.original, cand.bounds);
            const ImageTensor pb = extract_patch(pair.reconstruction, cand.bounds);
            cand.score =
                frechet_distance(fit_gaussian(embedder.embed(pa)), fit_gaussian(embedder.embed(pb)));
            all[si * per_seed + ci] = cand;
        }
    });
    std::stable_sort(all.begin(), all.end(),
                     [](const PatchCandidate& a, const PatchCandidate& b) { return a.score > b.score; });
    all.resize(static_cast<std::size_t>(cfg.q));
    return all;
}

}  // namespace zfn
