#pragma once

#include <optional>
#include <vector>

#include "zfn/tensor.hpp"

namespace zfn {

// Per-image losses handed over by an external neural reconstruction stage.
// Absent values stay absent; downstream feature extraction marks them
// missing instead of inventing zeros.
struct SidecarLosses {
    std::optional<double> quantization_loss;
    std::optional<double> disc_loss_original;
    std::optional<double> disc_loss_reconstruction;
    std::optional<double> perceptual_loss;

    bool any() const {
        return quantization_loss || disc_loss_original || disc_loss_reconstruction ||
               perceptual_loss;
    }
};

struct ReconPair {
    ImageTensor original;
    ImageTensor reconstruction;
    int label = 0;  // 0 normal, 1 abnormal
    SidecarLosses sidecar;
    std::string image_id;
};

struct LossInputs {
    std::vector<double> encoded;
    std::vector<double> quantized;
    double disc_score_original = 0.5;
    double disc_score_reconstruction = 0.5;
    double grad_norm_rec = 0.0;
    double grad_norm_gan = 0.0;
};

// Per-pixel, per-channel median over the training normals; a registered
// scene's statistical golden sample. The input argument only fixes the
// expected dimensions.
ImageTensor baseline_reconstruct(const std::vector<ImageTensor>& train_normals,
                                 const ImageTensor& input);

// mse(x, x^) + ||E(x) - z_q||^2 + ||z_q - E(x)||^2. Both stop-gradient
// terms reduce to the same squared distance at evaluation time and both
// are included.
double vq_loss(const LossInputs& li, const ReconPair& pair);

double gan_loss(double disc_score_original, double disc_score_reconstruction);

// grad_rec / (grad_gan + 1e-6)
double adaptive_lambda(double grad_norm_rec, double grad_norm_gan);

struct ManifestRow {
    std::string original;
    std::string reconstruction;
    int label = 0;
    SidecarLosses sidecar;
};

// Manifest CSV: original,reconstruction,label,quantization_loss,
// disc_loss_original,disc_loss_reconstruction,perceptual_loss
// (loss columns may be empty). Paths are resolved relative to the
// manifest's directory. read_manifest parses rows without touching the
// referenced files; ingest_pairs additionally loads both images.
std::vector<ManifestRow> read_manifest(const std::string& manifest_path);
std::vector<ReconPair> ingest_pairs(const std::string& manifest_path);

constexpr const char* kManifestHeader =
    "original,reconstruction,label,quantization_loss,disc_loss_original,"
    "disc_loss_reconstruction,perceptual_loss";

}  // namespace zfn
