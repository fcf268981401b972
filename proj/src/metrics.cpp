#include "zfn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "zfn/distances.hpp"
#include "zfn/parallel.hpp"
#include "zfn/util.hpp"

namespace zfn {

namespace {

void append_aggregates(std::vector<std::pair<std::string, double>>& out, const std::string& prefix,
                       const std::vector<double>& values) {
    const Aggregates agg = aggregate(values);
    const double fields[7] = {agg.sum, agg.max, agg.min, agg.mean, agg.q1, agg.median, agg.q3};
    for (int i = 0; i < 7; ++i) out.emplace_back(prefix + "." + kAggregateNames[i], fields[i]);
}

std::vector<double> to_doubles(const std::vector<float>& v) {
    return std::vector<double>(v.begin(), v.end());
}

}  // namespace

std::vector<std::string> metric_schema(bool use_mask) {
    std::vector<std::string> names = {"img.mse",       "img.perceptual", "img.quant_loss",
                                      "img.disc_orig", "img.disc_recon", "img.keypoint"};
    for (const char* a : kAggregateNames) names.push_back(std::string("img.diff.") + a);
    std::vector<std::string> families = {"raw"};
    if (use_mask) families.push_back("msk");
    for (const auto& fam : families) {
        for (const char* a : kAggregateNames) names.push_back(fam + ".diff." + a);
        for (const char* a : kAggregateNames) names.push_back(fam + ".pix." + a);
        for (DistanceKind kind : kAllDistanceKinds) {
            for (const char* a : kAggregateNames) {
                names.push_back(fam + ".patch." + distance_kind_name(kind) + "." + a);
            }
        }
    }
    return names;
}

std::vector<std::pair<std::string, std::optional<double>>> image_level(const ReconPair& pair,
                                                                       const Embedder& embedder) {
    if (!pair.original.same_dims(pair.reconstruction)) {
        throw std::runtime_error("image_level: pair dimensions differ");
    }
    std::vector<std::pair<std::string, std::optional<double>>> out;
    out.emplace_back("img.mse", mse(pair.original, pair.reconstruction));

    if (pair.sidecar.perceptual_loss) {
        out.emplace_back("img.perceptual", *pair.sidecar.perceptual_loss);
    } else if (const auto* ext = dynamic_cast<const ExternalEmbedder*>(&embedder)) {
        const std::string orig_id = path_stem(pair.original.source);
        const std::string recon_id = path_stem(pair.reconstruction.source);
        const auto fa = flatten(ext->embed_id(orig_id));
        const auto fb = flatten(ext->embed_id(recon_id));
        if (fa.size() != fb.size()) {
            throw std::runtime_error("image_level: external embedding lengths differ for " +
                                     pair.image_id);
        }
        out.emplace_back("img.perceptual", mse(fa, fb));
    } else {
        out.emplace_back("img.perceptual",
                         perceptual_mse(pair.original, pair.reconstruction, embedder));
    }

    out.emplace_back("img.quant_loss", pair.sidecar.quantization_loss);
    out.emplace_back("img.disc_orig", pair.sidecar.disc_loss_original);
    out.emplace_back("img.disc_recon", pair.sidecar.disc_loss_reconstruction);
    out.emplace_back("img.keypoint", keypoint_match_distance(pair.original, pair.reconstruction));

    const DiffMap diff = abs_diff(pair.original, pair.reconstruction);
    std::vector<std::pair<std::string, double>> agg;
    append_aggregates(agg, "img.diff", to_doubles(diff.values));
    for (auto& [name, value] : agg) out.emplace_back(name, value);
    return out;
}

std::vector<std::pair<std::string, double>> pixel_level(const DiffMap& diff, int p) {
    const auto coords = top_p_pixels(diff, p);
    std::vector<double> values;
    values.reserve(coords.size());
    for (const auto& [r, c] : coords) values.push_back(diff.at(r, c));
    std::vector<std::pair<std::string, double>> out;
    append_aggregates(out, "pix", values);
    return out;
}

std::vector<std::pair<std::string, double>> patch_level(
    const std::vector<PatchCandidate>& candidates, const ReconPair& pair) {
    if (candidates.empty()) throw std::runtime_error("patch_level: no candidates");
    std::vector<std::pair<std::string, double>> out;
    std::vector<double> values(candidates.size());
    for (DistanceKind kind : kAllDistanceKinds) {
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            if (kind == DistanceKind::frechet) {
                values[i] = candidates[i].score;
            } else {
                values[i] = patch_distance(kind, extract_patch(pair.original, candidates[i].bounds),
                                           extract_patch(pair.reconstruction, candidates[i].bounds));
            }
        }
        append_aggregates(out, "patch." + distance_kind_name(kind), values);
    }
    return out;
}

namespace {

void append_family(std::vector<std::pair<std::string, double>>& out, const std::string& fam,
                   const DiffMap& diff, const ReconPair& pair, const PatchConfig& cfg,
                   const Embedder& patch_embedder) {
    append_aggregates(out, fam + ".diff", to_doubles(diff.values));
    for (auto& [name, value] : pixel_level(diff, cfg.p)) out.emplace_back(fam + "." + name, value);
    const auto seeds = top_p_pixels(diff, cfg.p);
    const auto kept = rank_candidates(pair, seeds, cfg, patch_embedder, 1);
    for (auto& [name, value] : patch_level(kept, pair)) out.emplace_back(fam + "." + name, value);
}

}  // namespace

MetricRecord collect(const ReconPair& pair, const WeightMask* mask, const MetricsOptions& opts) {
    const auto schema = metric_schema(mask != nullptr);
    const auto embedder = make_embedder(opts.embedder, opts.feat_dir);
    const BaselineEmbedder patch_embedder;

    std::vector<std::pair<std::string, std::optional<double>>> features =
        image_level(pair, *embedder);

    const DiffMap raw = abs_diff(pair.original, pair.reconstruction);
    std::vector<std::pair<std::string, double>> family_features;
    append_family(family_features, "raw", raw, pair, opts.patch, patch_embedder);
    if (mask) {
        const DiffMap masked = apply_mask(raw, *mask);
        append_family(family_features, "msk", masked, pair, opts.patch, patch_embedder);
    }
    for (auto& [name, value] : family_features) features.emplace_back(name, value);

    if (features.size() != schema.size()) {
        throw std::runtime_error("collect: feature count does not match schema");
    }
    MetricRecord rec;
    rec.image_id = pair.image_id;
    rec.label = pair.label;
    rec.provenance = opts.provenance;
    rec.values.resize(schema.size());
    for (std::size_t i = 0; i < schema.size(); ++i) {
        if (features[i].first != schema[i]) {
            throw std::runtime_error("collect: feature order mismatch at " + features[i].first);
        }
        if (features[i].second && !std::isfinite(*features[i].second)) {
            throw std::runtime_error("collect: non-finite value for " + features[i].first + " on " +
                                     pair.image_id);
        }
        rec.values[i] = features[i].second;
    }
    return rec;
}

MetricTable collect_table(const std::vector<ReconPair>& pairs, const WeightMask* mask,
                          const MetricsOptions& opts) {
    if (pairs.empty()) throw std::runtime_error("collect_table: no pairs");
    MetricTable table;
    table.schema = metric_schema(mask != nullptr);
    table.records.resize(pairs.size());
    parallel_for(pairs.size(), opts.threads,
                 [&](std::size_t i) { table.records[i] = collect(pairs[i], mask, opts); });
    std::sort(table.records.begin(), table.records.end(),
              [](const MetricRecord& a, const MetricRecord& b) { return a.image_id < b.image_id; });
    return table;
}

void write_metrics_csv(const MetricTable& table, const std::string& path) {
    std::ofstream o(path);
    if (!o) throw std::runtime_error("cannot write metrics csv: " + path);
    o << "image_id,label";
    for (const auto& name : table.schema) o << "," << csv_escape(name);
    o << "\n";
    for (const auto& rec : table.records) {
        if (rec.values.size() != table.schema.size()) {
            throw std::runtime_error("metrics row '" + rec.image_id + "' does not match schema");
        }
        o << csv_escape(rec.image_id) << "," << rec.label;
        for (const auto& v : rec.values) {
            o << ",";
            if (v) o << format_double(*v);
        }
        o << "\n";
    }
}

MetricTable read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open metrics csv: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty metrics csv: " + path);
    auto header = split_csv_line(line);
    if (header.size() < 3 || header[0] != "image_id" || header[1] != "label") {
        throw std::runtime_error("metrics csv header must start with image_id,label");
    }
    MetricTable table;
    table.schema.assign(header.begin() + 2, header.end());
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != header.size()) {
            throw std::runtime_error("metrics csv line " + std::to_string(line_no) +
                                     ": field count mismatch");
        }
        MetricRecord rec;
        rec.image_id = f[0];
        if (f[1] != "0" && f[1] != "1") {
            throw std::runtime_error("metrics csv line " + std::to_string(line_no) +
                                     ": label must be 0 or 1");
        }
        rec.label = f[1] == "1" ? 1 : 0;
        rec.values.resize(table.schema.size());
        for (std::size_t i = 0; i < table.schema.size(); ++i) {
            const std::string& cell = f[i + 2];
            if (cell.empty()) continue;
            std::size_t used = 0;
            const double v = std::stod(cell, &used);
            if (used != cell.size() || !std::isfinite(v)) {
                throw std::runtime_error("metrics csv line " + std::to_string(line_no) +
                                         ": bad value '" + cell + "'");
            }
            rec.values[i] = v;
        }
        table.records.push_back(std::move(rec));
    }
    if (table.records.empty()) throw std::runtime_error("metrics csv has no rows: " + path);
    return table;
}

}  // namespace zfn
