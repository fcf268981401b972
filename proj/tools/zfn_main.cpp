#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "zfn/localize.hpp"
#include "zfn/maskweight.hpp"
#include "zfn/metrics.hpp"
#include "zfn/pipeline.hpp"
#include "zfn/recon.hpp"
#include "zfn/report.hpp"
#include "zfn/scorer.hpp"
#include "zfn/synth.hpp"
#include "zfn/util.hpp"

namespace fs = std::filesystem;
using namespace zfn;

namespace {

template <typename F>
void tagged(const char* stage_name, int code, F&& fn) {
    try {
        fn();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage_name, code, e.what());
    }
}

std::vector<double> parse_double_list(const std::string& text) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t comma = text.find(',', pos);
        const std::string field =
            text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        std::size_t used = 0;
        const double v = std::stod(field, &used);
        if (used != field.size()) throw std::runtime_error("not a number: " + field);
        out.push_back(v);
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

std::vector<std::string> parse_kind_list(const std::string& text) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t comma = text.find(',', pos);
        out.push_back(text.substr(pos, comma == std::string::npos ? std::string::npos
                                                                  : comma - pos));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

void check_model_schema(const ScoreModel& model, const MetricTable& table) {
    if (schema_hash(table.schema) != model.schema_hash) {
        throw std::runtime_error("metrics schema does not match the fitted model");
    }
}

void draw_box(ImageTensor& image, const PatchBounds& b, float value) {
    for (int r = b.row0; r < b.row0 + b.size; ++r) {
        for (int c = b.col0; c < b.col0 + b.size; ++c) {
            if (r != b.row0 && r != b.row0 + b.size - 1 && c != b.col0 &&
                c != b.col0 + b.size - 1) {
                continue;
            }
            for (int ch = 0; ch < image.channels; ++ch) image.at(r, c, ch) = value;
        }
    }
}

struct SynthArgs {
    std::string spec_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_given = false;
    int threads = 1;
};

struct PatchArgs {
    int p = 100;
    int n = 4;
    int alpha = 4;
    int q = 250;

    PatchConfig config() const { return PatchConfig{p, n, alpha, q}; }

    void attach(CLI::App* cmd) {
        cmd->add_option("--p", p, "diff seeds per image");
        cmd->add_option("--n", n, "zoom levels");
        cmd->add_option("--alpha", alpha, "patch side step");
        cmd->add_option("--q", q, "candidates kept");
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"difference analysis, patch localization, and anomaly scoring toolkit"};
    app.require_subcommand(1);

    // synth generate
    auto* synth_cmd = app.add_subcommand("synth", "synthetic dataset tools");
    synth_cmd->require_subcommand(1);
    auto* synth_gen = synth_cmd->add_subcommand("generate", "render a synthetic board dataset");
    SynthArgs synth_args;
    synth_gen->add_option("--spec", synth_args.spec_path, "dataset spec JSON");
    synth_gen->add_option("--out", synth_args.out_dir, "output directory")->required();
    synth_gen->add_option("--seed", synth_args.seed, "seed override")
        ->each([&](const std::string&) { synth_args.seed_given = true; });
    synth_gen->add_option("--threads", synth_args.threads, "worker cap (0 = auto)");
    synth_gen->callback([&] {
        tagged("synth", exit_code::synth, [&] {
            SynthSpec spec;
            if (!synth_args.spec_path.empty()) {
                spec = synth_spec_from_json(
                    nlohmann::json::parse(read_text_file(synth_args.spec_path)));
            }
            if (synth_args.seed_given) spec.seed = synth_args.seed;
            validate_synth_spec(spec);
            const SynthDataset dataset = generate(spec, synth_args.threads);
            write_dataset(dataset, synth_args.out_dir);
            std::cout << "wrote " << dataset.images.size() << " images to " << synth_args.out_dir
                      << "\n";
        });
    });

    // reconstruct
    auto* recon_cmd = app.add_subcommand("reconstruct",
                                         "build the reference reconstruction from normals");
    std::string recon_manifest, recon_out;
    recon_cmd->add_option("--manifest", recon_manifest, "manifest of training normals")
        ->required();
    recon_cmd->add_option("--out", recon_out,
                          "output tensor path (default: every path the manifest names)");
    recon_cmd->callback([&] {
        tagged("reconstruct", exit_code::reconstruct, [&] {
            const auto rows = read_manifest(recon_manifest);
            std::vector<ImageTensor> train;
            train.reserve(rows.size());
            for (const auto& row : rows) {
                if (row.label != 0) {
                    throw std::runtime_error("manifest contains an abnormal record: " +
                                             row.original);
                }
                train.push_back(load_image(row.original));
            }
            const ImageTensor golden = baseline_reconstruct(train, train.front());
            std::set<std::string> targets;
            if (!recon_out.empty()) {
                targets.insert(recon_out);
            } else {
                for (const auto& row : rows) targets.insert(row.reconstruction);
            }
            for (const auto& path : targets) {
                const auto parent = fs::path(path).parent_path();
                if (!parent.empty()) fs::create_directories(parent);
                save_tensor(golden, path);
            }
            std::cout << "median reference from " << train.size() << " normals -> "
                      << targets.size() << " file(s)\n";
        });
    });

    // ingest
    auto* ingest_cmd = app.add_subcommand("ingest", "validate a manifest and its image pairs");
    std::string ingest_manifest;
    ingest_cmd->add_option("--manifest", ingest_manifest, "pair manifest")->required();
    ingest_cmd->callback([&] {
        tagged("ingest", exit_code::ingest, [&] {
            const auto pairs = ingest_pairs(ingest_manifest);
            std::size_t abnormal = 0, sidecars = 0;
            for (const auto& p : pairs) {
                abnormal += p.label == 1;
                sidecars += p.sidecar.any();
            }
            const auto& first = pairs.front().original;
            std::cout << pairs.size() << " pairs (" << abnormal << " abnormal), " << first.height
                      << "x" << first.width << "x" << first.channels << ", " << sidecars
                      << " with sidecar losses\n";
        });
    });

    // mask build
    auto* mask_cmd = app.add_subcommand("mask", "variation weight mask tools");
    mask_cmd->require_subcommand(1);
    auto* mask_build = mask_cmd->add_subcommand("build", "build the mask from held-out normals");
    std::string mask_manifest, mask_out;
    mask_build->add_option("--manifest", mask_manifest, "held-out normals manifest")->required();
    mask_build->add_option("--out", mask_out, "mask tensor output path")->required();
    mask_build->callback([&] {
        tagged("mask", exit_code::mask, [&] {
            const auto pairs = ingest_pairs(mask_manifest);
            const WeightMask mask = build_mask(pairs);
            const auto parent = fs::path(mask_out).parent_path();
            if (!parent.empty()) fs::create_directories(parent);
            save_mask(mask, mask_out);
            write_mask_provenance(mask, pairs, mask_out);
            std::cout << "mask " << mask.height << "x" << mask.width << " from "
                      << mask.holdout_used << " holdout normals -> " << mask_out << "\n";
        });
    });

    // localize
    auto* loc_cmd = app.add_subcommand("localize", "rank anomaly patch candidates for one pair");
    std::string loc_original, loc_recon, loc_mask, loc_out, loc_overlay;
    PatchArgs loc_patch;
    int loc_threads = 1;
    loc_cmd->add_option("--original", loc_original, "original image")->required();
    loc_cmd->add_option("--reconstruction", loc_recon, "reconstruction image")->required();
    loc_cmd->add_option("--mask", loc_mask, "weight mask tensor");
    loc_cmd->add_option("--out", loc_out, "candidate JSON output")->required();
    loc_cmd->add_option("--overlay", loc_overlay, "optional PNG with top candidate boxes");
    loc_patch.attach(loc_cmd);
    loc_cmd->add_option("--threads", loc_threads, "worker cap (0 = auto)");
    loc_cmd->callback([&] {
        tagged("localize", exit_code::localize, [&] {
            ReconPair pair;
            pair.original = load_image(loc_original);
            pair.reconstruction = load_image(loc_recon);
            pair.image_id = path_stem(loc_original);
            DiffMap diff = abs_diff(pair.original, pair.reconstruction);
            if (!loc_mask.empty()) diff = apply_mask(diff, load_mask(loc_mask));
            const PatchConfig cfg = loc_patch.config();
            validate_patch_config(cfg);
            const auto seeds = top_p_pixels(diff, cfg.p);
            const BaselineEmbedder embedder;
            const auto candidates = rank_candidates(pair, seeds, cfg, embedder, loc_threads);

            nlohmann::ordered_json j;
            j["image_id"] = pair.image_id;
            j["config"] = {{"p", cfg.p}, {"n", cfg.n}, {"alpha", cfg.alpha}, {"q", cfg.q}};
            auto arr = nlohmann::ordered_json::array();
            for (std::size_t i = 0; i < candidates.size(); ++i) {
                const auto& c = candidates[i];
                arr.push_back({{"rank", i},
                               {"score", c.score},
                               {"row0", c.bounds.row0},
                               {"col0", c.bounds.col0},
                               {"size", c.size},
                               {"center_row", c.center_row},
                               {"center_col", c.center_col},
                               {"shift", shift_name(c.shift)}});
            }
            j["candidates"] = std::move(arr);
            write_text_file(loc_out, j.dump(2) + "\n");

            if (!loc_overlay.empty()) {
                ImageTensor overlay = pair.original;
                const std::size_t top = std::min<std::size_t>(10, candidates.size());
                for (std::size_t i = top; i-- > 0;) {
                    draw_box(overlay, candidates[i].bounds, i == 0 ? 1.0f : 0.75f);
                }
                save_png(overlay, loc_overlay, 8);
            }
            std::cout << candidates.size() << " candidates -> " << loc_out << "\n";
        });
    });

    // metrics extract
    auto* metrics_cmd = app.add_subcommand("metrics", "metric extraction tools");
    metrics_cmd->require_subcommand(1);
    auto* metrics_ext = metrics_cmd->add_subcommand("extract",
                                                    "compute the metric table for a manifest");
    std::string met_manifest, met_mask, met_out, met_embedder = "baseline", met_feat_dir;
    PatchArgs met_patch;
    int met_threads = 1;
    metrics_ext->add_option("--manifest", met_manifest, "pair manifest")->required();
    metrics_ext->add_option("--mask", met_mask, "weight mask tensor (omit to skip msk.* family)");
    metrics_ext->add_option("--out", met_out, "metrics CSV output")->required();
    metrics_ext->add_option("--embedder", met_embedder, "baseline | external");
    metrics_ext->add_option("--feat-dir", met_feat_dir, "external embedding directory");
    met_patch.attach(metrics_ext);
    metrics_ext->add_option("--threads", met_threads, "worker cap (0 = auto)");
    metrics_ext->callback([&] {
        tagged("metrics", exit_code::metrics, [&] {
            const auto pairs = ingest_pairs(met_manifest);
            WeightMask mask;
            const bool use_mask = !met_mask.empty();
            if (use_mask) mask = load_mask(met_mask);

            MetricsOptions opts;
            opts.patch = met_patch.config();
            opts.use_mask = use_mask;
            opts.embedder = met_embedder;
            opts.feat_dir = met_feat_dir;
            opts.provenance = "manifest";
            opts.threads = met_threads;
            const MetricTable table = collect_table(pairs, use_mask ? &mask : nullptr, opts);
            write_metrics_csv(table, met_out);

            nlohmann::ordered_json meta;
            meta["schema_hash"] = schema_hash(table.schema);
            meta["records"] = table.records.size();
            meta["features"] = table.schema.size();
            meta["mask"] = use_mask;
            meta["embedder"] = met_embedder;
            meta["patch"] = {{"p", opts.patch.p},
                             {"n", opts.patch.n},
                             {"alpha", opts.patch.alpha},
                             {"q", opts.patch.q}};
            write_text_file(met_out + ".meta.json", meta.dump(2) + "\n");
            std::cout << table.records.size() << " records x " << table.schema.size()
                      << " features -> " << met_out << "\n";
        });
    });

    // score fit / predict
    auto* score_cmd = app.add_subcommand("score", "composite score model tools");
    score_cmd->require_subcommand(1);

    auto* score_fit = score_cmd->add_subcommand("fit", "search, calibrate, and save a model");
    std::string fit_metrics, fit_out, fit_kinds, fit_thr_source = "loocv", fit_report_dir;
    int fit_iterations = 500, fit_folds = 5, fit_threads = 1;
    bool fit_nested = false;
    std::uint64_t fit_seed = 20240817;
    score_fit->add_option("--metrics", fit_metrics, "metrics CSV")->required();
    score_fit->add_option("--out", fit_out, "model JSON output")->required();
    score_fit->add_option("--kinds", fit_kinds, "comma list of classifier kinds (default: all)");
    score_fit->add_option("--iterations", fit_iterations, "search iterations");
    score_fit->add_option("--folds", fit_folds, "stratified folds");
    score_fit->add_flag("--nested-search", fit_nested,
                        "re-run the search inside each leave-one-out split");
    score_fit->add_option("--threshold-source", fit_thr_source, "loocv | refit");
    score_fit->add_option("--seed", fit_seed, "seed");
    score_fit->add_option("--report-dir", fit_report_dir, "also write report files here");
    score_fit->add_option("--threads", fit_threads, "worker cap (0 = auto)");
    score_fit->callback([&] {
        tagged("score", exit_code::score, [&] {
            const MetricTable table = read_metrics_csv(fit_metrics);
            FitOptions opts;
            if (!fit_kinds.empty()) opts.kinds = parse_kind_list(fit_kinds);
            opts.iterations = fit_iterations;
            opts.folds = fit_folds;
            opts.nested_search = fit_nested;
            opts.threshold_source = fit_thr_source;
            opts.seed = fit_seed;
            opts.threads = fit_threads;
            const FitOutcome outcome = fit_score_model(table, opts);
            save_model(outcome.model, fit_out);
            std::cout << "selected " << outcome.model.classifier_kind << ", threshold "
                      << format_double(outcome.model.zfn_threshold) << " -> " << fit_out << "\n";
            if (!fit_report_dir.empty()) {
                fs::create_directories(fit_report_dir);
                const EvalReport report = build_report(outcome);
                write_report_json(report, (fs::path(fit_report_dir) / "report.json").string());
                write_report_md(report, (fs::path(fit_report_dir) / "report.md").string());
                write_histogram_svg(report, (fs::path(fit_report_dir) / "report.svg").string());
            }
        });
    });

    auto* score_pred = score_cmd->add_subcommand("predict", "score records with a saved model");
    std::string pred_model, pred_metrics, pred_out;
    score_pred->add_option("--model", pred_model, "model JSON")->required();
    score_pred->add_option("--metrics", pred_metrics, "metrics CSV")->required();
    score_pred->add_option("--out", pred_out, "output CSV (default: stdout)");
    score_pred->callback([&] {
        tagged("score", exit_code::score, [&] {
            const ScoreModel model = load_model(pred_model);
            const MetricTable table = read_metrics_csv(pred_metrics);
            check_model_schema(model, table);
            std::string csv = "image_id,probability,decision\n";
            for (const auto& r : table.records) {
                const double p = composite_score(model, r);
                csv += csv_escape(r.image_id) + "," + format_double(p) + "," +
                       (p >= model.zfn_threshold ? "1" : "0") + "\n";
            }
            if (pred_out.empty()) {
                std::cout << csv;
            } else {
                write_text_file(pred_out, csv);
                std::cout << table.records.size() << " records -> " << pred_out << "\n";
            }
        });
    });

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a saved model on a metrics table");
    std::string eval_model, eval_metrics, eval_out_dir;
    bool eval_no_svg = false;
    eval_cmd->add_option("--model", eval_model, "model JSON")->required();
    eval_cmd->add_option("--metrics", eval_metrics, "metrics CSV with labels")->required();
    eval_cmd->add_option("--out-dir", eval_out_dir, "report output directory")->required();
    eval_cmd->add_flag("--no-svg", eval_no_svg, "skip the histogram SVG");
    eval_cmd->callback([&] {
        tagged("evaluate", exit_code::evaluate, [&] {
            const ScoreModel model = load_model(eval_model);
            const MetricTable table = read_metrics_csv(eval_metrics);
            const EvalReport report = build_apply_report(model, table);
            fs::create_directories(eval_out_dir);
            write_report_json(report, (fs::path(eval_out_dir) / "report.json").string());
            write_report_md(report, (fs::path(eval_out_dir) / "report.md").string());
            if (!eval_no_svg) {
                write_histogram_svg(report, (fs::path(eval_out_dir) / "report.svg").string());
            }
            const auto& row = report.rows.front();
            std::cout << "accuracy std " << format_double(row.std_regime.accuracy_pct)
                      << "%, zfn " << format_double(row.zfn_regime.accuracy_pct) << "%, fnr zfn "
                      << format_double(row.zfn_regime.fnr_pct) << "% -> " << eval_out_dir << "\n";
        });
    });

    // run
    auto* run_cmd = app.add_subcommand("run", "full pipeline from a config file");
    std::string run_config;
    int run_threads = -1;
    run_cmd->add_option("--config", run_config, "pipeline config JSON")->required();
    run_cmd->add_option("--threads", run_threads, "override the config worker cap (0 = auto)");
    run_cmd->callback([&] {
        PipelineConfig config = load_config(run_config);
        if (run_threads >= 0) config.threads = run_threads;
        const PipelineResult result = run_pipeline(config);
        const auto& row = result.report.rows.back();
        std::cout << "model: " << result.model_json << "\n";
        std::cout << "metrics: " << result.metrics_csv << "\n";
        std::cout << "report: " << result.report_json << "\n";
        std::cout << "selected " << result.report.selected_kind << ": accuracy std "
                  << format_double(row.std_regime.accuracy_pct) << "%, zfn "
                  << format_double(row.zfn_regime.accuracy_pct) << "%, fnr zfn "
                  << format_double(row.zfn_regime.fnr_pct) << "%\n";
    });

    // loss check
    auto* loss_cmd = app.add_subcommand("loss", "reconstruction-objective calculators");
    loss_cmd->require_subcommand(1);
    auto* loss_check = loss_cmd->add_subcommand("check", "evaluate each training loss term");
    std::string loss_encoded, loss_quantized, loss_original, loss_reconstruction;
    double loss_disc_orig = 0.5, loss_disc_recon = 0.5, loss_grad_rec = 0.0, loss_grad_gan = 0.0;
    loss_check->add_option("--encoded", loss_encoded, "encoder output, comma separated")
        ->required();
    loss_check->add_option("--quantized", loss_quantized, "codebook vector, comma separated")
        ->required();
    loss_check->add_option("--disc-orig", loss_disc_orig, "discriminator score on the original");
    loss_check->add_option("--disc-recon", loss_disc_recon,
                           "discriminator score on the reconstruction");
    loss_check->add_option("--grad-rec", loss_grad_rec, "reconstruction gradient norm");
    loss_check->add_option("--grad-gan", loss_grad_gan, "adversarial gradient norm");
    loss_check->add_option("--original", loss_original, "original image for the pixel term");
    loss_check->add_option("--reconstruction", loss_reconstruction,
                           "reconstruction image for the pixel term");
    loss_check->callback([&] {
        tagged("loss", 1, [&] {
            LossInputs li;
            li.encoded = parse_double_list(loss_encoded);
            li.quantized = parse_double_list(loss_quantized);
            li.disc_score_original = loss_disc_orig;
            li.disc_score_reconstruction = loss_disc_recon;
            li.grad_norm_rec = loss_grad_rec;
            li.grad_norm_gan = loss_grad_gan;

            ReconPair pair;
            if (loss_original.empty() != loss_reconstruction.empty()) {
                throw std::runtime_error("give both --original and --reconstruction or neither");
            }
            const bool has_images = !loss_original.empty();
            if (has_images) {
                pair.original = load_image(loss_original);
                pair.reconstruction = load_image(loss_reconstruction);
            } else {
                pair.original = make_tensor(1, 1, 1, 0.0f);
                pair.reconstruction = make_tensor(1, 1, 1, 0.0f);
            }

            if (li.encoded.size() != li.quantized.size()) {
                throw std::runtime_error("encoded/quantized size mismatch");
            }
            double commit = 0.0;
            for (std::size_t i = 0; i < li.encoded.size(); ++i) {
                const double d = li.encoded[i] - li.quantized[i];
                commit += d * d;
            }
            const double pixel = has_images ? mse(pair.original, pair.reconstruction) : 0.0;
            std::cout << "reconstruction_mse " << format_double(pixel)
                      << (has_images ? "" : " (no images given)") << "\n";
            std::cout << "codebook_alignment " << format_double(commit) << "\n";
            std::cout << "encoder_commitment " << format_double(commit) << "\n";
            std::cout << "vq_total " << format_double(vq_loss(li, pair)) << "\n";
            std::cout << "adversarial " << format_double(gan_loss(li.disc_score_original,
                                                                  li.disc_score_reconstruction))
                      << "\n";
            std::cout << "adaptive_weight "
                      << format_double(adaptive_lambda(li.grad_norm_rec, li.grad_norm_gan))
                      << "\n";
        });
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const StageError& e) {
        std::cerr << e.what() << "\n";
        return e.code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
