#include "zfn/maskweight.hpp"

#include <algorithm>
#include <stdexcept>

#include <json.hpp>

#include "zfn/util.hpp"

namespace zfn {

WeightMask build_mask(const std::vector<ReconPair>& holdout_normals) {
    if (holdout_normals.empty()) {
        throw std::runtime_error("build_mask: no holdout images");
    }
    for (const auto& p : holdout_normals) {
        if (p.label != 0) {
            throw std::runtime_error("build_mask: holdout must contain only normal images, '" +
                                     p.image_id + "' is labeled abnormal");
        }
        if (!p.original.same_dims(holdout_normals.front().original)) {
            throw std::runtime_error("build_mask: dimension mismatch at '" + p.image_id + "'");
        }
    }

    const int h = holdout_normals.front().original.height;
    const int w = holdout_normals.front().original.width;
    std::vector<double> mean(static_cast<std::size_t>(h) * w, 0.0);
    for (const auto& p : holdout_normals) {
        const DiffMap d = abs_diff(p.original, p.reconstruction);
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += d.values[i];
    }
    const double inv_n = 1.0 / static_cast<double>(holdout_normals.size());
    for (auto& v : mean) v *= inv_n;

    const auto [lo_it, hi_it] = std::minmax_element(mean.begin(), mean.end());
    const double lo = *lo_it, hi = *hi_it;

    WeightMask mask;
    mask.height = h;
    mask.width = w;
    mask.holdout_used = static_cast<int>(holdout_normals.size());
    mask.weights.resize(mean.size());
    if (hi > lo) {
        const double inv_range = 1.0 / (hi - lo);
        for (std::size_t i = 0; i < mean.size(); ++i) {
            // (x * (1/x)) can land one ulp above 1; keep weights in range.
            mask.weights[i] =
                static_cast<float>(std::clamp(1.0 - (mean[i] - lo) * inv_range, 0.0, 1.0));
        }
    } else {
        std::fill(mask.weights.begin(), mask.weights.end(), 1.0f);
    }
    return mask;
}

DiffMap apply_mask(const DiffMap& diff, const WeightMask& mask) {
    if (diff.height != mask.height || diff.width != mask.width) {
        throw std::runtime_error("apply_mask: dimension mismatch");
    }
    DiffMap out;
    out.height = diff.height;
    out.width = diff.width;
    out.values.resize(diff.values.size());
    for (std::size_t i = 0; i < diff.values.size(); ++i) {
        out.values[i] = diff.values[i] * mask.weights[i];
    }
    return out;
}

void save_mask(const WeightMask& mask, const std::string& path) {
    ImageTensor t = make_tensor(mask.height, mask.width, 1);
    t.data = mask.weights;
    save_tensor(t, path);
}

void write_mask_provenance(const WeightMask& mask,
                           const std::vector<ReconPair>& holdout_normals,
                           const std::string& mask_path) {
    nlohmann::ordered_json j;
    j["holdout_used"] = mask.holdout_used;
    auto sources = nlohmann::ordered_json::array();
    for (const auto& p : holdout_normals) {
        nlohmann::ordered_json s;
        s["image_id"] = p.image_id;
        s["original_hash"] = hex64(fnv1a(p.original.data.data(), p.original.data.size() * sizeof(float)));
        s["reconstruction_hash"] =
            hex64(fnv1a(p.reconstruction.data.data(), p.reconstruction.data.size() * sizeof(float)));
        sources.push_back(std::move(s));
    }
    j["sources"] = std::move(sources);
    write_text_file(mask_path + ".json", j.dump(2) + "\n");
}

WeightMask load_mask(const std::string& path) {
    const ImageTensor t = load_image(path);
    if (t.channels != 1) throw std::runtime_error("load_mask: mask must be single channel");
    WeightMask mask;
    mask.height = t.height;
    mask.width = t.width;
    mask.weights = t.data;
    for (float v : mask.weights) {
        if (v < 0.0f || v > 1.0f) {
            throw std::runtime_error("load_mask: weight outside [0, 1] in " + path);
        }
    }
    std::string provenance;
    try {
        provenance = read_text_file(path + ".json");
    } catch (const std::exception&) {
        provenance.clear();
    }
    if (!provenance.empty()) {
        const auto j = nlohmann::json::parse(provenance, nullptr, false);
        if (!j.is_discarded() && j.contains("holdout_used") && j["holdout_used"].is_number_integer()) {
            mask.holdout_used = j["holdout_used"].get<int>();
        }
    }
    return mask;
}

}  // namespace zfn
