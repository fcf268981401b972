#include "zfn/distances.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>

#include "zfn/features.hpp"
#include "zfn/rng.hpp"

namespace zfn {

std::string distance_kind_name(DistanceKind kind) {
    switch (kind) {
        case DistanceKind::frechet: return "frechet";
        case DistanceKind::ssim: return "ssim";
        case DistanceKind::braycurtis: return "braycurtis";
        case DistanceKind::canberra: return "canberra";
        case DistanceKind::euclidean: return "euclidean";
        case DistanceKind::cosine: return "cosine";
        case DistanceKind::wasserstein: return "wasserstein";
        case DistanceKind::hamming: return "hamming";
        case DistanceKind::minkowski3: return "minkowski3";
        case DistanceKind::jensenshannon: return "jensenshannon";
    }
    throw std::runtime_error("unknown distance kind");
}

std::optional<DistanceKind> parse_distance_kind(std::string_view name) {
    for (DistanceKind k : kAllDistanceKinds) {
        if (distance_kind_name(k) == name) return k;
    }
    return std::nullopt;
}

namespace {

double euclidean_distance(const std::vector<double>& u, const std::vector<double>& v) {
    double acc = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double d = u[i] - v[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

double cosine_distance(const std::vector<double>& u, const std::vector<double>& v) {
    // sqrt(s)^2 lands an ulp off s, so equal inputs must short-circuit to
    // keep the identity d(a, a) = 0 exact.
    if (u == v) return 0.0;
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if (nu == 0.0 || nv == 0.0) return 1.0;
    return 1.0 - dot / (std::sqrt(nu) * std::sqrt(nv));
}

double canberra_distance(const std::vector<double>& u, const std::vector<double>& v) {
    double acc = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double den = std::abs(u[i]) + std::abs(v[i]);
        if (den > 0.0) acc += std::abs(u[i] - v[i]) / den;
    }
    return acc;
}

double braycurtis_distance(const std::vector<double>& u, const std::vector<double>& v) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        num += std::abs(u[i] - v[i]);
        den += u[i] + v[i];
    }
    if (den == 0.0) return 0.0;
    return num / den;
}

double minkowski3_distance(const std::vector<double>& u, const std::vector<double>& v) {
    double acc = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double d = std::abs(u[i] - v[i]);
        acc += d * d * d;
    }
    return std::cbrt(acc);
}

double hamming_distance(const std::vector<double>& u, const std::vector<double>& v) {
    std::size_t diff = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const bool bu = u[i] >= 0.5;
        const bool bv = v[i] >= 0.5;
        if (bu != bv) ++diff;
    }
    return static_cast<double>(diff) / static_cast<double>(u.size());
}

double wasserstein_distance(std::vector<double> u, std::vector<double> v) {
    std::sort(u.begin(), u.end());
    std::sort(v.begin(), v.end());
    double acc = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) acc += std::abs(u[i] - v[i]);
    return acc / static_cast<double>(u.size());
}

double jensenshannon_distance(const std::vector<double>& u, const std::vector<double>& v) {
    constexpr double kEps = 1e-12;
    const std::size_t n = u.size();
    std::vector<double> p(n), q(n);
    double su = 0.0, sv = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (u[i] < 0.0 || v[i] < 0.0) {
            throw std::runtime_error("jensenshannon: negative bin value");
        }
        p[i] = u[i] + kEps;
        q[i] = v[i] + kEps;
        su += p[i];
        sv += q[i];
    }
    double jsd = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double pi = p[i] / su;
        const double qi = q[i] / sv;
        const double mi = 0.5 * (pi + qi);
        jsd += 0.5 * pi * std::log2(pi / mi) + 0.5 * qi * std::log2(qi / mi);
    }
    return std::max(0.0, jsd);
}

double ssim_value(const std::vector<double>& u, const std::vector<double>& v) {
    const double n = static_cast<double>(u.size());
    double mu = 0.0, mv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        mu += u[i];
        mv += v[i];
    }
    mu /= n;
    mv /= n;
    double var_u = 0.0, var_v = 0.0, cov = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double du = u[i] - mu;
        const double dv = v[i] - mv;
        var_u += du * du;
        var_v += dv * dv;
        cov += du * dv;
    }
    var_u /= n;
    var_v /= n;
    cov /= n;
    constexpr double kC1 = 0.01 * 0.01;
    constexpr double kC2 = 0.03 * 0.03;
    return ((2.0 * mu * mv + kC1) * (2.0 * cov + kC2)) /
           ((mu * mu + mv * mv + kC1) * (var_u + var_v + kC2));
}

std::vector<double> gray_flat(const ImageTensor& t) {
    std::vector<double> g(static_cast<std::size_t>(t.height) * t.width);
    if (t.channels == 1) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = t.data[i];
    } else {
        const double inv_c = 1.0 / t.channels;
        for (int r = 0; r < t.height; ++r) {
            for (int c = 0; c < t.width; ++c) {
                double acc = 0.0;
                for (int ch = 0; ch < t.channels; ++ch) acc += t.at(r, c, ch);
                g[static_cast<std::size_t>(r) * t.width + c] = acc * inv_c;
            }
        }
    }
    return g;
}

}  // namespace

double vector_distance(DistanceKind kind, const std::vector<double>& u,
                       const std::vector<double>& v) {
    if (u.size() != v.size()) throw std::runtime_error("vector_distance: length mismatch");
    if (u.empty()) throw std::runtime_error("vector_distance: empty vectors");
    switch (kind) {
        case DistanceKind::euclidean: return euclidean_distance(u, v);
        case DistanceKind::cosine: return cosine_distance(u, v);
        case DistanceKind::canberra: return canberra_distance(u, v);
        case DistanceKind::braycurtis: return braycurtis_distance(u, v);
        case DistanceKind::minkowski3: return minkowski3_distance(u, v);
        case DistanceKind::hamming: return hamming_distance(u, v);
        case DistanceKind::wasserstein: return wasserstein_distance(u, v);
        case DistanceKind::jensenshannon: return jensenshannon_distance(u, v);
        case DistanceKind::ssim: return ssim_value(u, v);
        case DistanceKind::frechet:
            throw std::runtime_error("frechet distance requires 2-D patches; use patch_distance");
    }
    throw std::runtime_error("unknown distance kind");
}

double patch_distance(DistanceKind kind, const ImageTensor& a, const ImageTensor& b) {
    if (!a.same_dims(b)) throw std::runtime_error("patch_distance: dimension mismatch");
    if (a.height < 1 || a.width < 1) throw std::runtime_error("patch_distance: empty patch");
    if (kind == DistanceKind::frechet) {
        const BaselineEmbedder embedder;
        return frechet_distance(fit_gaussian(embedder.embed(a)), fit_gaussian(embedder.embed(b)));
    }
    return vector_distance(kind, gray_flat(a), gray_flat(b));
}

namespace {

constexpr int kCircleOffsets[16][2] = {
    {-3, 0},  {-3, 1},  {-2, 2},  {-1, 3}, {0, 3},  {1, 3},  {2, 2},  {3, 1},
    {3, 0},   {3, -1},  {2, -2},  {1, -3}, {0, -3}, {-1, -3}, {-2, -2}, {-3, -1},
};
constexpr int kDescriptorRadius = 15;
constexpr int kDescriptorBits = 256;
constexpr double kCornerThreshold = 0.1;
constexpr double kRatioThreshold = 0.8;

struct PairPattern {
    std::array<std::array<int, 4>, kDescriptorBits> pairs;
};

const PairPattern& descriptor_pattern() {
    static const PairPattern pattern = [] {
        PairPattern p;
        Rng rng(0x9e3779b97f4a7c15ULL);
        for (auto& row : p.pairs) {
            for (auto& v : row) {
                v = static_cast<int>(rng.uniform_int(-kDescriptorRadius, kDescriptorRadius));
            }
        }
        return p;
    }();
    return pattern;
}

struct Keypoint {
    int row = 0;
    int col = 0;
    std::array<std::uint64_t, 4> descriptor{};
};

bool segment_test(const std::vector<double>& gray, int w, int r, int c) {
    const double center = gray[static_cast<std::size_t>(r) * w + c];
    unsigned brighter = 0, darker = 0;
    for (int i = 0; i < 16; ++i) {
        const double v =
            gray[static_cast<std::size_t>(r + kCircleOffsets[i][0]) * w + (c + kCircleOffsets[i][1])];
        if (v > center + kCornerThreshold) brighter |= 1u << i;
        if (v < center - kCornerThreshold) darker |= 1u << i;
    }
    const auto has_arc = [](unsigned bits) {
        if (bits == 0xFFFFu) return true;
        const unsigned doubled = bits | (bits << 16);
        int run = 0;
        for (int i = 0; i < 32; ++i) {
            if (doubled & (1u << i)) {
                if (++run >= 9) return true;
            } else {
                run = 0;
            }
        }
        return false;
    };
    return has_arc(brighter) || has_arc(darker);
}

std::vector<Keypoint> detect_keypoints(const std::vector<double>& gray, int h, int w) {
    const PairPattern& pattern = descriptor_pattern();
    std::vector<Keypoint> kps;
    for (int r = kDescriptorRadius; r < h - kDescriptorRadius; ++r) {
        for (int c = kDescriptorRadius; c < w - kDescriptorRadius; ++c) {
            if (!segment_test(gray, w, r, c)) continue;
            Keypoint kp;
            kp.row = r;
            kp.col = c;
            for (int bit = 0; bit < kDescriptorBits; ++bit) {
                const auto& pr = pattern.pairs[bit];
                const double v1 = gray[static_cast<std::size_t>(r + pr[0]) * w + (c + pr[1])];
                const double v2 = gray[static_cast<std::size_t>(r + pr[2]) * w + (c + pr[3])];
                if (v1 < v2) kp.descriptor[bit / 64] |= 1ULL << (bit % 64);
            }
            kps.push_back(kp);
        }
    }
    return kps;
}

int descriptor_hamming(const Keypoint& a, const Keypoint& b) {
    int bits = 0;
    for (int i = 0; i < 4; ++i) bits += std::popcount(a.descriptor[i] ^ b.descriptor[i]);
    return bits;
}

// Best and second-best candidate for each query; the best's tie-break is
// smallest |index difference|, then the smaller index.
struct NearestPick {
    int best = -1;
    int best_dist = std::numeric_limits<int>::max();
    int second_dist = std::numeric_limits<int>::max();
};

std::vector<NearestPick> nearest_in(const std::vector<Keypoint>& queries,
                                    const std::vector<Keypoint>& targets) {
    std::vector<NearestPick> picks(queries.size());
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
        NearestPick& pick = picks[qi];
        for (std::size_t ti = 0; ti < targets.size(); ++ti) {
            const int d = descriptor_hamming(queries[qi], targets[ti]);
            if (d < pick.best_dist) {
                pick.second_dist = pick.best_dist;
                pick.best_dist = d;
                pick.best = static_cast<int>(ti);
            } else if (d == pick.best_dist && pick.best >= 0) {
                const auto gap = [&](int idx) {
                    return std::abs(static_cast<long>(idx) - static_cast<long>(qi));
                };
                if (gap(static_cast<int>(ti)) < gap(pick.best) ||
                    (gap(static_cast<int>(ti)) == gap(pick.best) &&
                     static_cast<int>(ti) < pick.best)) {
                    pick.best = static_cast<int>(ti);
                }
                pick.second_dist = std::min(pick.second_dist, d);
            } else {
                pick.second_dist = std::min(pick.second_dist, d);
            }
        }
    }
    return picks;
}

}  // namespace

double keypoint_match_distance(const ImageTensor& a, const ImageTensor& b, bool* undersized) {
    if (!a.same_dims(b)) throw std::runtime_error("keypoint_match_distance: dimension mismatch");
    if (undersized) *undersized = false;
    const int window = 2 * kDescriptorRadius + 1;
    if (a.height < window || a.width < window) {
        if (undersized) *undersized = true;
        return 1.0;
    }
    const std::vector<double> ga = gray_flat(a);
    const std::vector<double> gb = gray_flat(b);
    const std::vector<Keypoint> ka = detect_keypoints(ga, a.height, a.width);
    const std::vector<Keypoint> kb = detect_keypoints(gb, b.height, b.width);
    if (ka.empty() && kb.empty()) return 0.0;
    if (ka.empty() || kb.empty()) return 1.0;

    const std::vector<NearestPick> fwd = nearest_in(ka, kb);
    const std::vector<NearestPick> rev = nearest_in(kb, ka);
    const auto ratio_ok = [](const NearestPick& pick) {
        if (pick.best_dist == 0) return true;
        if (pick.second_dist == std::numeric_limits<int>::max()) return true;
        return static_cast<double>(pick.best_dist) <
               kRatioThreshold * static_cast<double>(pick.second_dist);
    };
    std::size_t matches = 0;
    for (std::size_t i = 0; i < ka.size(); ++i) {
        const NearestPick& f = fwd[i];
        if (f.best < 0) continue;
        const NearestPick& r = rev[static_cast<std::size_t>(f.best)];
        if (r.best != static_cast<int>(i)) continue;
        if (ratio_ok(f) && ratio_ok(r)) ++matches;
    }
    return 1.0 - 2.0 * static_cast<double>(matches) /
                     static_cast<double>(ka.size() + kb.size());
}

}  // namespace zfn
