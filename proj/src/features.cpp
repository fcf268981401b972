#include "zfn/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <stdexcept>

#include <Eigen/Dense>

namespace zfn {

namespace {

std::vector<double> to_gray(const ImageTensor& t) {
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

std::vector<double> flatten(const FeatureSet& fs) {
    std::vector<double> flat;
    flat.reserve(fs.count() * fs.dim());
    for (const auto& v : fs.vectors) flat.insert(flat.end(), v.begin(), v.end());
    return flat;
}

FeatureSet BaselineEmbedder::embed(const ImageTensor& patch) const {
    if (patch.height < 1 || patch.width < 1) {
        throw std::runtime_error("embed: empty patch");
    }
    const std::vector<double> gray = to_gray(patch);
    const int h = patch.height, w = patch.width;
    const int g = std::min(4, std::min(h, w));
    FeatureSet fs;
    fs.vectors.reserve(static_cast<std::size_t>(g) * g);
    for (int gr = 0; gr < g; ++gr) {
        const int r0 = gr * h / g;
        const int r1 = (gr + 1) * h / g;
        for (int gc = 0; gc < g; ++gc) {
            const int c0 = gc * w / g;
            const int c1 = (gc + 1) * w / g;
            double sum = 0.0, sum2 = 0.0;
            double lo = gray[static_cast<std::size_t>(r0) * w + c0];
            double hi = lo;
            double hsum = 0.0, vsum = 0.0;
            std::size_t hcount = 0, vcount = 0;
            for (int r = r0; r < r1; ++r) {
                for (int c = c0; c < c1; ++c) {
                    const double v = gray[static_cast<std::size_t>(r) * w + c];
                    sum += v;
                    sum2 += v * v;
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                    if (c + 1 < c1) {
                        hsum += std::abs(gray[static_cast<std::size_t>(r) * w + c + 1] - v);
                        ++hcount;
                    }
                    if (r + 1 < r1) {
                        vsum += std::abs(gray[static_cast<std::size_t>(r + 1) * w + c] - v);
                        ++vcount;
                    }
                }
            }
            const double n = static_cast<double>((r1 - r0) * (c1 - c0));
            const double mean = sum / n;
            const double var = std::max(0.0, sum2 / n - mean * mean);
            fs.vectors.push_back({mean, std::sqrt(var),
                                  hcount ? hsum / static_cast<double>(hcount) : 0.0,
                                  vcount ? vsum / static_cast<double>(vcount) : 0.0, lo, hi});
        }
    }
    return fs;
}

ExternalEmbedder::ExternalEmbedder(const std::string& feat_dir) : feat_dir_(feat_dir) {
    if (!std::filesystem::is_directory(feat_dir_)) {
        throw std::runtime_error("external embeddings directory not found: " + feat_dir_);
    }
}

FeatureSet ExternalEmbedder::embed(const ImageTensor& patch) const {
    (void)patch;
    throw std::runtime_error(
        "external embedder serves whole-image embeddings by id; patch embedding is unavailable");
}

bool ExternalEmbedder::has_id(const std::string& image_id) const {
    return std::filesystem::exists(std::filesystem::path(feat_dir_) / (image_id + ".feat"));
}

FeatureSet ExternalEmbedder::embed_id(const std::string& image_id) const {
    const auto path = std::filesystem::path(feat_dir_) / (image_id + ".feat");
    FeatureSet fs;
    fs.vectors = load_matrix(path.string());
    if (fs.vectors.empty() || fs.dim() == 0) {
        throw std::runtime_error("empty embedding file: " + path.string());
    }
    return fs;
}

std::unique_ptr<Embedder> make_embedder(const std::string& kind, const std::string& feat_dir) {
    if (kind == "baseline") return std::make_unique<BaselineEmbedder>();
    if (kind == "external") return std::make_unique<ExternalEmbedder>(feat_dir);
    throw std::runtime_error("unknown embedder kind: " + kind);
}

GaussianStats fit_gaussian(const FeatureSet& fs) {
    const auto& samples = fs.vectors;
    if (samples.empty()) throw std::runtime_error("fit_gaussian: no samples");
    const std::size_t d = samples.front().size();
    if (d == 0) throw std::runtime_error("fit_gaussian: zero-dimensional samples");
    for (const auto& s : samples) {
        if (s.size() != d) throw std::runtime_error("fit_gaussian: ragged sample lengths");
    }
    const std::size_t n = samples.size();
    constexpr double kShrinkage = 1e-6;

    GaussianStats out;
    out.mean.assign(d, 0.0);
    for (const auto& s : samples) {
        for (std::size_t j = 0; j < d; ++j) out.mean[j] += s[j];
    }
    for (auto& v : out.mean) v /= static_cast<double>(n);

    out.cov.assign(d, std::vector<double>(d, 0.0));
    if (n < d) {
        for (std::size_t j = 0; j < d; ++j) {
            double acc = 0.0;
            for (const auto& s : samples) {
                const double c = s[j] - out.mean[j];
                acc += c * c;
            }
            out.cov[j][j] = acc / static_cast<double>(n) + kShrinkage;
        }
        return out;
    }
    std::vector<double> centered(d);
    for (const auto& s : samples) {
        for (std::size_t j = 0; j < d; ++j) centered[j] = s[j] - out.mean[j];
        for (std::size_t j = 0; j < d; ++j) {
            for (std::size_t k = j; k < d; ++k) out.cov[j][k] += centered[j] * centered[k];
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t k = j; k < d; ++k) {
            out.cov[j][k] /= static_cast<double>(n);
            out.cov[k][j] = out.cov[j][k];
        }
        out.cov[j][j] += kShrinkage;
    }
    return out;
}

namespace {

Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    Eigen::VectorXd vals = es.eigenvalues();
    for (Eigen::Index i = 0; i < vals.size(); ++i) vals[i] = std::sqrt(std::max(0.0, vals[i]));
    return es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose();
}

bool bytes_less(const GaussianStats& a, const GaussianStats& b) {
    const int cm = std::memcmp(a.mean.data(), b.mean.data(), a.mean.size() * sizeof(double));
    if (cm != 0) return cm < 0;
    for (std::size_t i = 0; i < a.cov.size(); ++i) {
        const int cc = std::memcmp(a.cov[i].data(), b.cov[i].data(), a.cov[i].size() * sizeof(double));
        if (cc != 0) return cc < 0;
    }
    return false;
}

bool bytes_equal(const GaussianStats& a, const GaussianStats& b) {
    if (std::memcmp(a.mean.data(), b.mean.data(), a.mean.size() * sizeof(double)) != 0) return false;
    for (std::size_t i = 0; i < a.cov.size(); ++i) {
        if (std::memcmp(a.cov[i].data(), b.cov[i].data(), a.cov[i].size() * sizeof(double)) != 0) {
            return false;
        }
    }
    return true;
}

}  // namespace

std::vector<std::vector<double>> matrix_sqrt(const std::vector<std::vector<double>>& m) {
    const auto d = static_cast<Eigen::Index>(m.size());
    Eigen::MatrixXd em(d, d);
    for (Eigen::Index r = 0; r < d; ++r) {
        if (static_cast<Eigen::Index>(m[static_cast<std::size_t>(r)].size()) != d) {
            throw std::runtime_error("matrix_sqrt: matrix must be square");
        }
        for (Eigen::Index c = 0; c < d; ++c) {
            em(r, c) = m[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
        }
    }
    const Eigen::MatrixXd root = matrix_sqrt_psd(em);
    std::vector<std::vector<double>> out(m.size(), std::vector<double>(m.size()));
    for (Eigen::Index r = 0; r < d; ++r) {
        for (Eigen::Index c = 0; c < d; ++c) {
            out[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = root(r, c);
        }
    }
    return out;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
    const std::size_t d = a.mean.size();
    if (d == 0 || b.mean.size() != d || a.cov.size() != d || b.cov.size() != d) {
        throw std::runtime_error("frechet_distance: dimension mismatch");
    }
    for (const auto& stats : {std::cref(a), std::cref(b)}) {
        for (double v : stats.get().mean) {
            if (!std::isfinite(v)) throw std::runtime_error("frechet_distance: non-finite mean");
        }
        for (const auto& row : stats.get().cov) {
            if (row.size() != d) throw std::runtime_error("frechet_distance: ragged covariance");
            for (double v : row) {
                if (!std::isfinite(v)) throw std::runtime_error("frechet_distance: non-finite covariance");
            }
        }
    }
    if (bytes_equal(a, b)) return 0.0;
    const bool swap = bytes_less(b, a);
    const GaussianStats& lo = swap ? b : a;
    const GaussianStats& hi = swap ? a : b;

    Eigen::VectorXd dm(static_cast<Eigen::Index>(d));
    Eigen::MatrixXd sa(d, d), sb(d, d);
    for (std::size_t i = 0; i < d; ++i) {
        dm[static_cast<Eigen::Index>(i)] = lo.mean[i] - hi.mean[i];
        for (std::size_t j = 0; j < d; ++j) {
            sa(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = lo.cov[i][j];
            sb(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = hi.cov[i][j];
        }
    }
    const Eigen::MatrixXd root_a = matrix_sqrt_psd(sa);
    const Eigen::MatrixXd cross = matrix_sqrt_psd(root_a * sb * root_a);
    const double value = dm.squaredNorm() + (sa + sb - 2.0 * cross).trace();
    return std::max(0.0, value);
}

double perceptual_mse(const ImageTensor& a, const ImageTensor& b, const Embedder& embedder) {
    if (!a.same_dims(b)) throw std::runtime_error("perceptual_mse: dimension mismatch");
    const std::vector<double> fa = flatten(embedder.embed(a));
    const std::vector<double> fb = flatten(embedder.embed(b));
    if (fa.size() != fb.size() || fa.empty()) {
        throw std::runtime_error("perceptual_mse: embedding length mismatch");
    }
    return mse(fa, fb);
}

}  // namespace zfn
