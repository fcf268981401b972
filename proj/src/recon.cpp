#include "zfn/recon.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "zfn/util.hpp"

namespace zfn {

ImageTensor baseline_reconstruct(const std::vector<ImageTensor>& train_normals,
                                 const ImageTensor& input) {
    if (train_normals.empty()) {
        throw std::runtime_error("baseline_reconstruct: no training images");
    }
    for (const auto& t : train_normals) {
        if (!t.same_dims(input)) {
            throw std::runtime_error("baseline_reconstruct: dimension mismatch between '" +
                                     t.source + "' and input");
        }
    }
    ImageTensor out = make_tensor(input.height, input.width, input.channels);
    const std::size_t n = train_normals.size();
    std::vector<float> column(n);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        for (std::size_t k = 0; k < n; ++k) column[k] = train_normals[k].data[i];
        std::sort(column.begin(), column.end());
        if (n % 2 == 1) {
            out.data[i] = column[n / 2];
        } else {
            out.data[i] = 0.5f * (column[n / 2 - 1] + column[n / 2]);
        }
    }
    return out;
}

double vq_loss(const LossInputs& li, const ReconPair& pair) {
    if (li.encoded.size() != li.quantized.size()) {
        throw std::runtime_error("vq_loss: encoded/quantized size mismatch");
    }
    double commit = 0.0;
    for (std::size_t i = 0; i < li.encoded.size(); ++i) {
        const double d = li.encoded[i] - li.quantized[i];
        commit += d * d;
    }
    return mse(pair.original, pair.reconstruction) + commit + commit;
}

double gan_loss(double disc_score_original, double disc_score_reconstruction) {
    if (disc_score_original <= 0.0 || disc_score_reconstruction >= 1.0) {
        throw std::runtime_error("gan_loss: discriminator scores must lie in (0, 1)");
    }
    return std::log(disc_score_original) + std::log(1.0 - disc_score_reconstruction);
}

double adaptive_lambda(double grad_norm_rec, double grad_norm_gan) {
    return grad_norm_rec / (grad_norm_gan + 1e-6);
}

namespace {

std::optional<double> parse_optional(const std::string& field, const std::string& name,
                                     std::size_t line_no) {
    if (field.empty()) return std::nullopt;
    try {
        std::size_t used = 0;
        const double v = std::stod(field, &used);
        if (used != field.size() || !std::isfinite(v)) throw std::invalid_argument(field);
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("manifest line " + std::to_string(line_no) + ": bad " + name +
                                 " value '" + field + "'");
    }
}

}  // namespace

std::vector<ManifestRow> read_manifest(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("cannot open manifest: " + manifest_path);
    const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
    const auto resolve = [&base](const std::string& s) {
        std::filesystem::path ph(s);
        if (ph.is_absolute()) return ph.string();
        return (base / ph).lexically_normal().string();
    };

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty manifest: " + manifest_path);
    {
        auto header = split_csv_line(line);
        auto expected = split_csv_line(kManifestHeader);
        if (header != expected) {
            throw std::runtime_error("manifest header mismatch in " + manifest_path);
        }
    }

    std::vector<ManifestRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 7) {
            throw std::runtime_error("manifest line " + std::to_string(line_no) + ": expected 7 fields, got " +
                                     std::to_string(f.size()));
        }
        ManifestRow row;
        row.original = resolve(f[0]);
        row.reconstruction = resolve(f[1]);
        if (f[2] != "0" && f[2] != "1") {
            throw std::runtime_error("manifest line " + std::to_string(line_no) + ": label must be 0 or 1, got '" +
                                     f[2] + "'");
        }
        row.label = f[2] == "1" ? 1 : 0;
        row.sidecar.quantization_loss = parse_optional(f[3], "quantization_loss", line_no);
        row.sidecar.disc_loss_original = parse_optional(f[4], "disc_loss_original", line_no);
        row.sidecar.disc_loss_reconstruction = parse_optional(f[5], "disc_loss_reconstruction", line_no);
        row.sidecar.perceptual_loss = parse_optional(f[6], "perceptual_loss", line_no);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::runtime_error("manifest has no data rows: " + manifest_path);
    return rows;
}

std::vector<ReconPair> ingest_pairs(const std::string& manifest_path) {
    const auto rows = read_manifest(manifest_path);
    std::vector<ReconPair> pairs;
    pairs.reserve(rows.size());
    for (const auto& row : rows) {
        ReconPair p;
        p.original = load_image(row.original);
        p.reconstruction = load_image(row.reconstruction);
        if (!p.original.same_dims(p.reconstruction)) {
            throw std::runtime_error("manifest row '" + row.original +
                                     "': original and reconstruction dimensions differ");
        }
        p.label = row.label;
        p.sidecar = row.sidecar;
        p.image_id = path_stem(row.original);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

}  // namespace zfn
