#pragma once

#include <memory>
#include <string>
#include <vector>

#include "zfn/tensor.hpp"

namespace zfn {

// A bag of equal-length sample vectors describing one patch or image.
struct FeatureSet {
    std::vector<std::vector<double>> vectors;

    std::size_t count() const { return vectors.size(); }
    std::size_t dim() const { return vectors.empty() ? 0 : vectors.front().size(); }
};

std::vector<double> flatten(const FeatureSet& fs);

// Maps an image patch to a FeatureSet. Feature sets from one embedder
// instance are mutually comparable; mixing embedders is a caller error.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual FeatureSet embed(const ImageTensor& patch) const = 0;
    virtual std::string name() const = 0;
};

// Grid summary statistics: the patch is reduced to a single gray channel,
// divided into a g x g grid (g = min(4, shortest side)), and each cell
// contributes a 6-dim vector: mean, spread, mean absolute horizontal and
// vertical gradient, min, max.
class BaselineEmbedder : public Embedder {
public:
    FeatureSet embed(const ImageTensor& patch) const override;
    std::string name() const override { return "baseline"; }
};

// Reads precomputed embeddings from <image-stem>.feat files (2-D tensors,
// rows = sample vectors) keyed by image id. Serves whole-image embeddings
// only; patch queries are rejected so externally embedded runs never
// silently mix sources.
class ExternalEmbedder : public Embedder {
public:
    explicit ExternalEmbedder(const std::string& feat_dir);
    FeatureSet embed(const ImageTensor& patch) const override;
    FeatureSet embed_id(const std::string& image_id) const;
    bool has_id(const std::string& image_id) const;
    std::string name() const override { return "external"; }

private:
    std::string feat_dir_;
};

std::unique_ptr<Embedder> make_embedder(const std::string& kind, const std::string& feat_dir = "");

struct GaussianStats {
    std::vector<double> mean;
    std::vector<std::vector<double>> cov;
};

// Sample mean and covariance (denominator N) with 1e-6 diagonal
// shrinkage. Fewer samples than dimensions: diagonal covariance only.
GaussianStats fit_gaussian(const FeatureSet& fs);

// Symmetric square root of a PSD matrix via eigendecomposition;
// negative eigenvalues clamp to zero.
std::vector<std::vector<double>> matrix_sqrt(const std::vector<std::vector<double>>& m);

// Squared mean distance plus covariance term
// Tr(Sa + Sb - 2 (Sa^{1/2} Sb Sa^{1/2})^{1/2}).
// Symmetric exactly; zero exactly when both stats are bit-identical.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

// Mean squared distance between the flattened embeddings of two images.
double perceptual_mse(const ImageTensor& a, const ImageTensor& b, const Embedder& embedder);

}  // namespace zfn
