#include "zfn/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <set>

#include "zfn/maskweight.hpp"
#include "zfn/metrics.hpp"
#include "zfn/recon.hpp"
#include "zfn/util.hpp"

namespace fs = std::filesystem;

namespace zfn {

namespace {

void check_keys(const nlohmann::json& j, const char* where,
                const std::vector<std::string>& allowed) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw std::runtime_error(std::string("unknown key '") + key + "' in " + where);
        }
    }
}

template <typename F>
auto stage(const char* name, int code, F&& fn) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, code, e.what());
    }
}

void validate_config(const PipelineConfig& c) {
    if (c.workdir.empty()) throw std::runtime_error("workdir must not be empty");
    if (c.threads < 0) throw std::runtime_error("threads must be >= 0");
    validate_patch_config(c.patch);
    if (c.synth_enabled) {
        validate_synth_spec(c.synth);
    } else {
        if (c.train_manifest.empty() || c.test_manifest.empty()) {
            throw std::runtime_error("train and test manifests are required without synth data");
        }
        if (c.use_mask && c.mask_manifest.empty()) {
            throw std::runtime_error("mask manifest is required when the mask is enabled");
        }
    }
    if (c.embedder != "baseline" && c.embedder != "external") {
        throw std::runtime_error("embedder must be baseline or external");
    }
    if (c.embedder == "external" && c.feat_dir.empty()) {
        throw std::runtime_error("external embedder needs feat_dir");
    }
    if (c.kinds.empty()) throw std::runtime_error("scorer kinds must not be empty");
    for (const auto& kind : c.kinds) {
        if (std::find(kClassifierKinds.begin(), kClassifierKinds.end(), kind) ==
            kClassifierKinds.end()) {
            throw std::runtime_error("unknown classifier kind: " + kind);
        }
    }
    if (c.iterations < 1) throw std::runtime_error("iterations must be >= 1");
    if (c.folds < 2) throw std::runtime_error("folds must be >= 2");
    if (c.threshold_source != "loocv" && c.threshold_source != "refit") {
        throw std::runtime_error("threshold_source must be loocv or refit");
    }
}

std::set<std::string> manifest_ids(const std::vector<ManifestRow>& rows) {
    std::set<std::string> ids;
    for (const auto& row : rows) ids.insert(path_stem(row.original));
    return ids;
}

void require_disjoint(const std::set<std::string>& a, const std::set<std::string>& b,
                      const char* what) {
    for (const auto& id : a) {
        if (b.count(id)) {
            throw std::runtime_error(std::string("mask holdout overlaps ") + what + ": " + id);
        }
    }
}

}  // namespace

nlohmann::ordered_json config_to_json(const PipelineConfig& config) {
    nlohmann::ordered_json j;
    j["workdir"] = config.workdir;
    j["seed"] = config.seed;
    j["threads"] = config.threads;

    nlohmann::ordered_json data;
    if (config.synth_enabled) {
        data["synth"] = synth_spec_to_json(config.synth);
    } else {
        data["train_manifest"] = config.train_manifest;
        data["mask_manifest"] = config.mask_manifest;
        data["test_manifest"] = config.test_manifest;
    }
    data["compute_golden"] = config.compute_golden;
    j["data"] = std::move(data);

    j["patch"] = {{"p", config.patch.p},
                  {"n", config.patch.n},
                  {"alpha", config.patch.alpha},
                  {"q", config.patch.q}};
    j["mask"] = {{"enabled", config.use_mask}};
    j["embedder"] = {{"kind", config.embedder}, {"feat_dir", config.feat_dir}};
    j["scorer"] = {{"kinds", config.kinds},
                   {"iterations", config.iterations},
                   {"folds", config.folds},
                   {"nested_search", config.nested_search},
                   {"threshold_source", config.threshold_source}};
    j["report"] = {{"svg", config.emit_svg}};
    return j;
}

PipelineConfig config_from_json(const nlohmann::json& j) {
    PipelineConfig c;
    check_keys(j, "config",
               {"workdir", "seed", "threads", "data", "patch", "mask", "embedder", "scorer",
                "report"});
    if (j.contains("workdir")) c.workdir = j.at("workdir").get<std::string>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("threads")) c.threads = j.at("threads").get<int>();

    if (j.contains("data")) {
        const auto& data = j.at("data");
        check_keys(data, "data",
                   {"synth", "train_manifest", "mask_manifest", "test_manifest",
                    "compute_golden"});
        const bool has_synth = data.contains("synth");
        const bool has_manifests = data.contains("train_manifest") ||
                                   data.contains("mask_manifest") ||
                                   data.contains("test_manifest");
        if (has_synth && has_manifests) {
            throw std::runtime_error("data: give either synth or manifests, not both");
        }
        if (has_synth) {
            c.synth_enabled = true;
            c.synth = synth_spec_from_json(data.at("synth"));
        } else if (has_manifests) {
            c.synth_enabled = false;
            if (data.contains("train_manifest")) {
                c.train_manifest = data.at("train_manifest").get<std::string>();
            }
            if (data.contains("mask_manifest")) {
                c.mask_manifest = data.at("mask_manifest").get<std::string>();
            }
            if (data.contains("test_manifest")) {
                c.test_manifest = data.at("test_manifest").get<std::string>();
            }
        }
        if (data.contains("compute_golden")) {
            c.compute_golden = data.at("compute_golden").get<bool>();
        }
    }

    if (j.contains("patch")) {
        const auto& p = j.at("patch");
        check_keys(p, "patch", {"p", "n", "alpha", "q"});
        if (p.contains("p")) c.patch.p = p.at("p").get<int>();
        if (p.contains("n")) c.patch.n = p.at("n").get<int>();
        if (p.contains("alpha")) c.patch.alpha = p.at("alpha").get<int>();
        if (p.contains("q")) c.patch.q = p.at("q").get<int>();
    }
    if (j.contains("mask")) {
        check_keys(j.at("mask"), "mask", {"enabled"});
        if (j.at("mask").contains("enabled")) c.use_mask = j.at("mask").at("enabled").get<bool>();
    }
    if (j.contains("embedder")) {
        const auto& e = j.at("embedder");
        check_keys(e, "embedder", {"kind", "feat_dir"});
        if (e.contains("kind")) c.embedder = e.at("kind").get<std::string>();
        if (e.contains("feat_dir")) c.feat_dir = e.at("feat_dir").get<std::string>();
    }
    if (j.contains("scorer")) {
        const auto& s = j.at("scorer");
        check_keys(s, "scorer",
                   {"kinds", "iterations", "folds", "nested_search", "threshold_source"});
        if (s.contains("kinds")) c.kinds = s.at("kinds").get<std::vector<std::string>>();
        if (s.contains("iterations")) c.iterations = s.at("iterations").get<int>();
        if (s.contains("folds")) c.folds = s.at("folds").get<int>();
        if (s.contains("nested_search")) c.nested_search = s.at("nested_search").get<bool>();
        if (s.contains("threshold_source")) {
            c.threshold_source = s.at("threshold_source").get<std::string>();
        }
    }
    if (j.contains("report")) {
        check_keys(j.at("report"), "report", {"svg"});
        if (j.at("report").contains("svg")) c.emit_svg = j.at("report").at("svg").get<bool>();
    }
    return c;
}

PipelineConfig load_config(const std::string& path) {
    return stage("config", exit_code::config, [&] {
        const auto j = nlohmann::json::parse(read_text_file(path));
        PipelineConfig c = config_from_json(j);
        if (const char* env = std::getenv("ZFN_SEED")) {
            std::size_t pos = 0;
            const std::string text(env);
            const auto value = std::stoull(text, &pos);
            if (pos != text.size()) throw std::runtime_error("ZFN_SEED is not an integer");
            c.seed = value;
        }
        validate_config(c);
        return c;
    });
}

PipelineResult run_pipeline(const PipelineConfig& config) {
    stage("config", exit_code::config, [&] { validate_config(config); });

    PipelineResult result;
    fs::create_directories(config.workdir);

    std::string train_manifest = config.train_manifest;
    std::string mask_manifest = config.mask_manifest;
    std::string test_manifest = config.test_manifest;

    if (config.synth_enabled) {
        stage("synth", exit_code::synth, [&] {
            result.data_dir = (fs::path(config.workdir) / "data").string();
            const SynthDataset dataset = generate(config.synth, config.threads);
            write_dataset(dataset, result.data_dir);
        });
        train_manifest = (fs::path(result.data_dir) / "train_manifest.csv").string();
        mask_manifest = (fs::path(result.data_dir) / "mask_manifest.csv").string();
        test_manifest = (fs::path(result.data_dir) / "test_manifest.csv").string();
    }

    if (config.compute_golden) {
        stage("reconstruct", exit_code::reconstruct, [&] {
            const auto rows = read_manifest(train_manifest);
            std::vector<ImageTensor> train;
            train.reserve(rows.size());
            for (const auto& row : rows) {
                if (row.label != 0) {
                    throw std::runtime_error("train manifest contains an abnormal record: " +
                                             row.original);
                }
                train.push_back(load_image(row.original));
            }
            const ImageTensor golden = baseline_reconstruct(train, train.front());

            std::set<std::string> recon_paths;
            for (const auto& row : rows) recon_paths.insert(row.reconstruction);
            for (const auto& m : {mask_manifest, test_manifest}) {
                if (m.empty() || (!config.use_mask && m == mask_manifest && !config.synth_enabled)) {
                    continue;
                }
                for (const auto& row : read_manifest(m)) recon_paths.insert(row.reconstruction);
            }
            for (const auto& path : recon_paths) {
                fs::create_directories(fs::path(path).parent_path());
                save_tensor(golden, path);
            }
        });
    }

    std::vector<ReconPair> test_pairs;
    std::vector<ReconPair> mask_pairs;
    stage("ingest", exit_code::ingest, [&] {
        const auto train_ids = manifest_ids(read_manifest(train_manifest));
        const auto test_ids = manifest_ids(read_manifest(test_manifest));
        if (config.use_mask) {
            const auto mask_ids = manifest_ids(read_manifest(mask_manifest));
            require_disjoint(mask_ids, train_ids, "the train set");
            require_disjoint(mask_ids, test_ids, "the test set");
            mask_pairs = ingest_pairs(mask_manifest);
        }
        test_pairs = ingest_pairs(test_manifest);
    });

    WeightMask mask;
    if (config.use_mask) {
        stage("mask", exit_code::mask, [&] {
            for (const auto& pair : mask_pairs) {
                if (pair.label != 0) {
                    throw std::runtime_error("mask manifest contains an abnormal record: " +
                                             pair.image_id);
                }
            }
            mask = build_mask(mask_pairs);
            const std::string mask_path = (fs::path(config.workdir) / "mask.zfnt").string();
            save_mask(mask, mask_path);
            write_mask_provenance(mask, mask_pairs, mask_path);
        });
    }

    MetricTable table;
    stage("metrics", exit_code::metrics, [&] {
        MetricsOptions opts;
        opts.patch = config.patch;
        opts.use_mask = config.use_mask;
        opts.embedder = config.embedder;
        opts.feat_dir = config.feat_dir;
        opts.provenance = config.synth_enabled ? "synth" : "manifest";
        opts.threads = config.threads;
        table = collect_table(test_pairs, config.use_mask ? &mask : nullptr, opts);

        result.metrics_csv = (fs::path(config.workdir) / "metrics.csv").string();
        write_metrics_csv(table, result.metrics_csv);

        nlohmann::ordered_json meta;
        meta["config_hash"] = hex64(fnv1a(config_to_json(config).dump()));
        meta["seed"] = config.seed;
        meta["records"] = table.records.size();
        meta["features"] = table.schema.size();
        meta["mask"] = config.use_mask;
        meta["embedder"] = config.embedder;
        write_text_file((fs::path(config.workdir) / "metrics.meta.json").string(),
                        meta.dump(2) + "\n");
    });

    FitOutcome outcome;
    stage("score", exit_code::score, [&] {
        FitOptions opts;
        opts.kinds = config.kinds;
        opts.iterations = config.iterations;
        opts.folds = config.folds;
        opts.nested_search = config.nested_search;
        opts.threshold_source = config.threshold_source;
        opts.seed = config.seed;
        opts.threads = config.threads;
        outcome = fit_score_model(table, opts);
        result.model_json = (fs::path(config.workdir) / "model.json").string();
        save_model(outcome.model, result.model_json);
    });

    stage("report", exit_code::report, [&] {
        result.report = build_report(outcome);
        result.report_json = (fs::path(config.workdir) / "report.json").string();
        result.report_md = (fs::path(config.workdir) / "report.md").string();
        write_report_json(result.report, result.report_json);
        write_report_md(result.report, result.report_md);
        if (config.emit_svg) {
            result.report_svg = (fs::path(config.workdir) / "report.svg").string();
            write_histogram_svg(result.report, result.report_svg);
        }
    });
    return result;
}

}  // namespace zfn
