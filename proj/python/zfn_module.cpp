#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "zfn/distances.hpp"
#include "zfn/localize.hpp"
#include "zfn/maskweight.hpp"
#include "zfn/metrics.hpp"
#include "zfn/pipeline.hpp"
#include "zfn/recon.hpp"
#include "zfn/rng.hpp"
#include "zfn/scorer.hpp"
#include "zfn/synth.hpp"
#include "zfn/tensor.hpp"

namespace py = pybind11;
using namespace zfn;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

ImageTensor as_tensor(const FloatArray& arr) {
    const py::buffer_info info = arr.request();
    int h = 0, w = 0, c = 1;
    if (info.ndim == 2) {
        h = static_cast<int>(info.shape[0]);
        w = static_cast<int>(info.shape[1]);
    } else if (info.ndim == 3) {
        h = static_cast<int>(info.shape[0]);
        w = static_cast<int>(info.shape[1]);
        c = static_cast<int>(info.shape[2]);
        if (c != 1 && c != 3) throw std::invalid_argument("last axis must be 1 or 3 channels");
    } else {
        throw std::invalid_argument("image array must be 2-d or 3-d");
    }
    ImageTensor t = make_tensor(h, w, c);
    const float* src = static_cast<const float*>(info.ptr);
    std::copy(src, src + t.data.size(), t.data.begin());
    return t;
}

py::array as_array(const ImageTensor& t) {
    if (t.channels == 1) {
        py::array_t<float> out({t.height, t.width});
        std::copy(t.data.begin(), t.data.end(), out.mutable_data());
        return out;
    }
    py::array_t<float> out({t.height, t.width, t.channels});
    std::copy(t.data.begin(), t.data.end(), out.mutable_data());
    return out;
}

DiffMap as_diff(const FloatArray& arr) {
    const py::buffer_info info = arr.request();
    if (info.ndim != 2) throw std::invalid_argument("difference map must be 2-d");
    DiffMap d;
    d.height = static_cast<int>(info.shape[0]);
    d.width = static_cast<int>(info.shape[1]);
    const float* src = static_cast<const float*>(info.ptr);
    d.values.assign(src, src + static_cast<std::size_t>(d.height) * d.width);
    return d;
}

py::array as_array(const DiffMap& d) {
    py::array_t<float> out({d.height, d.width});
    std::copy(d.values.begin(), d.values.end(), out.mutable_data());
    return out;
}

WeightMask as_mask(const FloatArray& arr) {
    const DiffMap d = as_diff(arr);
    WeightMask m;
    m.height = d.height;
    m.width = d.width;
    m.weights = d.values;
    return m;
}

DistanceKind parse_kind_or_throw(const std::string& name) {
    const auto kind = parse_distance_kind(name);
    if (!kind) throw std::invalid_argument("unknown distance kind: " + name);
    return *kind;
}

std::vector<ImageTensor> as_tensors(const std::vector<FloatArray>& arrays) {
    std::vector<ImageTensor> out;
    out.reserve(arrays.size());
    for (const auto& a : arrays) out.push_back(as_tensor(a));
    return out;
}

ReconPair pair_from(ImageTensor orig, ImageTensor recon, int label, std::string image_id) {
    ReconPair pair;
    pair.original = std::move(orig);
    pair.reconstruction = std::move(recon);
    pair.label = label;
    pair.image_id = std::move(image_id);
    return pair;
}

struct PyScoreModel {
    ScoreModel model;
};

py::dict report_summary(const EvalReport& report) {
    py::dict out;
    out["record_count"] = report.record_count;
    out["selected_kind"] = report.selected_kind;
    out["zfn_threshold"] = report.zfn_threshold;
    py::list rows;
    for (const auto& row : report.rows) {
        py::dict r;
        r["kind"] = row.kind;
        r["selected"] = row.selected;
        r["zfn_threshold"] = row.zfn_threshold;
        py::dict std_regime, zfn_regime;
        const auto fill = [](py::dict& d, const RegimeMetrics& m) {
            d["tp"] = m.tp;
            d["fp"] = m.fp;
            d["tn"] = m.tn;
            d["fn"] = m.fn;
            d["accuracy_pct"] = m.accuracy_pct;
            d["precision_pct"] = m.precision_pct;
            d["recall_pct"] = m.recall_pct;
            d["fpr_pct"] = m.fpr_pct;
            d["fnr_pct"] = m.fnr_pct;
        };
        fill(std_regime, row.std_regime);
        fill(zfn_regime, row.zfn_regime);
        r["std"] = std_regime;
        r["zfn"] = zfn_regime;
        rows.append(r);
    }
    out["rows"] = rows;
    return out;
}

}  // namespace

PYBIND11_MODULE(zfnpy, m) {
    m.doc() = "Reconstruction-agnostic anomaly scoring: weighted differences, "
              "patch localization, metric extraction, calibrated classification.";

    m.def("splitmix64", &splitmix64, py::arg("x"));
    m.def("derive_seed", &derive_seed, py::arg("seed"), py::arg("stream"));

    m.def(
        "baseline_reconstruct",
        [](const std::vector<FloatArray>& train, const FloatArray& image) {
            const auto tensors = as_tensors(train);
            const ImageTensor input = as_tensor(image);
            ImageTensor out;
            {
                py::gil_scoped_release release;
                out = baseline_reconstruct(tensors, input);
            }
            return as_array(out);
        },
        py::arg("train"), py::arg("image"),
        "Per-pixel median of the training normals, shaped like the input image.");

    m.def(
        "abs_diff",
        [](const FloatArray& a, const FloatArray& b) {
            return as_array(abs_diff(as_tensor(a), as_tensor(b)));
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "build_mask",
        [](const std::vector<FloatArray>& originals,
           const std::vector<FloatArray>& reconstructions) {
            if (originals.size() != reconstructions.size()) {
                throw std::invalid_argument("originals and reconstructions differ in length");
            }
            std::vector<ReconPair> holdout;
            for (std::size_t i = 0; i < originals.size(); ++i) {
                holdout.push_back(pair_from(as_tensor(originals[i]),
                                            as_tensor(reconstructions[i]), 0,
                                            "holdout-" + std::to_string(i)));
            }
            WeightMask mask;
            {
                py::gil_scoped_release release;
                mask = build_mask(holdout);
            }
            DiffMap d;
            d.height = mask.height;
            d.width = mask.width;
            d.values = mask.weights;
            return as_array(d);
        },
        py::arg("originals"), py::arg("reconstructions"),
        "Weight map that damps regions with high normal-on-normal variation.");

    m.def(
        "apply_mask",
        [](const FloatArray& diff, const FloatArray& mask) {
            return as_array(apply_mask(as_diff(diff), as_mask(mask)));
        },
        py::arg("diff"), py::arg("mask"));

    m.def(
        "top_pixels",
        [](const FloatArray& diff, int p) { return top_p_pixels(as_diff(diff), p); },
        py::arg("diff"), py::arg("p"),
        "The p largest difference locations as (row, col), descending.");

    m.def(
        "rank_patches",
        [](const FloatArray& original, const FloatArray& reconstruction, int p, int n, int alpha,
           int q, int threads) {
            PatchConfig cfg;
            cfg.p = p;
            cfg.n = n;
            cfg.alpha = alpha;
            cfg.q = q;
            const ReconPair pair =
                pair_from(as_tensor(original), as_tensor(reconstruction), 0, "query");
            std::vector<PatchCandidate> kept;
            {
                py::gil_scoped_release release;
                const DiffMap diff = abs_diff(pair.original, pair.reconstruction);
                const auto seeds = top_p_pixels(diff, cfg.p);
                const BaselineEmbedder embedder;
                kept = rank_candidates(pair, seeds, cfg, embedder, threads);
            }
            py::list out;
            for (const auto& c : kept) {
                py::dict d;
                d["row0"] = c.bounds.row0;
                d["col0"] = c.bounds.col0;
                d["size"] = c.bounds.size;
                d["score"] = c.score;
                out.append(d);
            }
            return out;
        },
        py::arg("original"), py::arg("reconstruction"), py::arg("p") = 100, py::arg("n") = 4,
        py::arg("alpha") = 4, py::arg("q") = 250, py::arg("threads") = 1,
        "Zoomed and shifted windows around the strongest difference pixels, "
        "scored by distribution distance and cut to the q highest.");

    m.def("distance_kinds", [] {
        std::vector<std::string> names;
        for (DistanceKind kind : kAllDistanceKinds) names.push_back(distance_kind_name(kind));
        return names;
    });

    m.def(
        "vector_distance",
        [](const std::string& kind, const std::vector<double>& u, const std::vector<double>& v) {
            return vector_distance(parse_kind_or_throw(kind), u, v);
        },
        py::arg("kind"), py::arg("u"), py::arg("v"));

    m.def(
        "patch_distance",
        [](const std::string& kind, const FloatArray& a, const FloatArray& b) {
            return patch_distance(parse_kind_or_throw(kind), as_tensor(a), as_tensor(b));
        },
        py::arg("kind"), py::arg("a"), py::arg("b"));

    m.def(
        "keypoint_distance",
        [](const FloatArray& a, const FloatArray& b) {
            return keypoint_match_distance(as_tensor(a), as_tensor(b));
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "aggregate",
        [](const std::vector<double>& values) {
            const Aggregates a = aggregate(values);
            py::dict d;
            d["sum"] = a.sum;
            d["max"] = a.max;
            d["min"] = a.min;
            d["mean"] = a.mean;
            d["q1"] = a.q1;
            d["median"] = a.median;
            d["q3"] = a.q3;
            return d;
        },
        py::arg("values"));

    m.def(
        "vq_loss",
        [](const std::vector<double>& encoded, const std::vector<double>& quantized,
           const FloatArray& original, const FloatArray& reconstruction) {
            LossInputs li;
            li.encoded = encoded;
            li.quantized = quantized;
            return vq_loss(li, pair_from(as_tensor(original), as_tensor(reconstruction), 0, ""));
        },
        py::arg("encoded"), py::arg("quantized"), py::arg("original"), py::arg("reconstruction"));

    m.def("gan_loss", &gan_loss, py::arg("disc_score_original"),
          py::arg("disc_score_reconstruction"));
    m.def("adaptive_lambda", &adaptive_lambda, py::arg("grad_norm_rec"), py::arg("grad_norm_gan"));

    m.def("metric_names", &metric_schema, py::arg("use_mask") = true);

    m.def(
        "collect_metrics",
        [](const FloatArray& original, const FloatArray& reconstruction, int label,
           const std::string& image_id, const std::optional<FloatArray>& mask,
           std::optional<double> quantization_loss, std::optional<double> disc_loss_original,
           std::optional<double> disc_loss_reconstruction, std::optional<double> perceptual_loss,
           int p, int n, int alpha, int q, int threads) {
            ReconPair pair =
                pair_from(as_tensor(original), as_tensor(reconstruction), label, image_id);
            pair.sidecar.quantization_loss = quantization_loss;
            pair.sidecar.disc_loss_original = disc_loss_original;
            pair.sidecar.disc_loss_reconstruction = disc_loss_reconstruction;
            pair.sidecar.perceptual_loss = perceptual_loss;

            std::optional<WeightMask> weight;
            if (mask) weight = as_mask(*mask);
            MetricsOptions opts;
            opts.patch.p = p;
            opts.patch.n = n;
            opts.patch.alpha = alpha;
            opts.patch.q = q;
            opts.use_mask = weight.has_value();
            opts.threads = threads;

            MetricRecord rec;
            {
                py::gil_scoped_release release;
                rec = collect(pair, weight ? &*weight : nullptr, opts);
            }
            const auto names = metric_schema(opts.use_mask);
            py::dict out;
            for (std::size_t i = 0; i < names.size(); ++i) {
                if (rec.values[i]) {
                    out[py::str(names[i])] = *rec.values[i];
                } else {
                    out[py::str(names[i])] = py::none();
                }
            }
            return out;
        },
        py::arg("original"), py::arg("reconstruction"), py::arg("label") = 0,
        py::arg("image_id") = "", py::arg("mask") = py::none(),
        py::arg("quantization_loss") = py::none(), py::arg("disc_loss_original") = py::none(),
        py::arg("disc_loss_reconstruction") = py::none(), py::arg("perceptual_loss") = py::none(),
        py::arg("p") = 100, py::arg("n") = 4, py::arg("alpha") = 4, py::arg("q") = 250,
        py::arg("threads") = 1,
        "Full named feature set for one image pair; masked family included "
        "when a mask is given.");

    py::class_<PyScoreModel>(m, "ScoreModel")
        .def_property_readonly("kind",
                               [](const PyScoreModel& s) { return s.model.classifier_kind; })
        .def_property_readonly("threshold",
                               [](const PyScoreModel& s) { return s.model.zfn_threshold; })
        .def_property_readonly("seed", [](const PyScoreModel& s) { return s.model.seed; })
        .def_property_readonly("schema_hash",
                               [](const PyScoreModel& s) { return s.model.schema_hash; })
        .def_property_readonly("schema",
                               [](const PyScoreModel& s) { return s.model.preproc.schema; })
        .def_property_readonly("features",
                               [](const PyScoreModel& s) { return s.model.preproc.kept; })
        .def(
            "score",
            [](const PyScoreModel& s, const std::vector<std::optional<double>>& values,
               const std::string& image_id) {
                MetricRecord rec;
                rec.image_id = image_id;
                rec.values = values;
                return composite_score(s.model, rec);
            },
            py::arg("values"), py::arg("image_id") = "",
            "Abnormality probability for one feature row ordered like .schema.")
        .def(
            "flag",
            [](const PyScoreModel& s, const std::vector<std::optional<double>>& values,
               const std::string& image_id) {
                MetricRecord rec;
                rec.image_id = image_id;
                rec.values = values;
                return composite_score(s.model, rec) >= s.model.zfn_threshold;
            },
            py::arg("values"), py::arg("image_id") = "",
            "True when the row scores at or above the calibrated threshold.")
        .def("save",
             [](const PyScoreModel& s, const std::string& path) { save_model(s.model, path); })
        .def_static("load", [](const std::string& path) {
            auto out = std::make_unique<PyScoreModel>();
            out->model = load_model(path);
            return out;
        });

    m.def(
        "fit",
        [](const std::vector<std::string>& schema,
           const std::vector<std::vector<std::optional<double>>>& rows,
           const std::vector<int>& labels, const std::optional<std::vector<std::string>>& image_ids,
           const std::optional<std::vector<std::string>>& kinds, int iterations, int folds,
           bool nested_search, const std::string& threshold_source, std::uint64_t seed,
           int threads) {
            if (rows.size() != labels.size()) {
                throw std::invalid_argument("rows and labels differ in length");
            }
            MetricTable table;
            table.schema = schema;
            for (std::size_t i = 0; i < rows.size(); ++i) {
                MetricRecord rec;
                rec.image_id =
                    image_ids ? (*image_ids)[i] : "row-" + std::to_string(i);
                rec.label = labels[i];
                rec.values = rows[i];
                table.records.push_back(std::move(rec));
            }
            FitOptions opts;
            if (kinds) opts.kinds = *kinds;
            opts.iterations = iterations;
            opts.folds = folds;
            opts.nested_search = nested_search;
            opts.threshold_source = threshold_source;
            opts.seed = seed;
            opts.threads = threads;

            FitOutcome outcome;
            {
                py::gil_scoped_release release;
                outcome = fit_score_model(table, opts);
            }
            auto holder = std::make_unique<PyScoreModel>();
            holder->model = std::move(outcome.model);
            py::dict info;
            info["loocv_probs"] = outcome.loocv_probs;
            info["labels"] = outcome.labels;
            info["image_ids"] = outcome.image_ids;
            py::dict per_kind;
            for (const auto& [kind, eval] : outcome.per_kind) {
                py::dict e;
                e["cv_accuracy"] = eval.search.cv_accuracy;
                e["zfn_threshold"] = eval.zfn_threshold;
                per_kind[py::str(kind)] = e;
            }
            info["per_kind"] = per_kind;
            return py::make_tuple(std::move(holder), info);
        },
        py::arg("schema"), py::arg("rows"), py::arg("labels"), py::arg("image_ids") = py::none(),
        py::arg("kinds") = py::none(), py::arg("iterations") = 500, py::arg("folds") = 5,
        py::arg("nested_search") = false, py::arg("threshold_source") = "loocv",
        py::arg("seed") = 0, py::arg("threads") = 1,
        "Search classifiers and hyperparameters, calibrate the zero-miss "
        "threshold, and return (model, info).");

    m.def(
        "generate_dataset",
        [](const std::string& out_dir, int image_size, int grid_rows, int grid_cols,
           double jitter_sigma, double noise_sigma, const std::tuple<int, int, int, int>& zone,
           double defect_magnitude, int train_normals, int mask_normals, int test_normals,
           int test_abnormals, std::uint64_t seed, int threads) {
            SynthSpec spec;
            spec.image_size = image_size;
            spec.grid_rows = grid_rows;
            spec.grid_cols = grid_cols;
            spec.jitter_sigma = jitter_sigma;
            spec.noise_sigma = noise_sigma;
            spec.high_variation_zone = {std::get<0>(zone), std::get<1>(zone), std::get<2>(zone),
                                        std::get<3>(zone)};
            spec.defect_magnitude = defect_magnitude;
            spec.train_normals = train_normals;
            spec.mask_normals = mask_normals;
            spec.test_normals = test_normals;
            spec.test_abnormals = test_abnormals;
            spec.seed = seed;
            {
                py::gil_scoped_release release;
                const SynthDataset dataset = generate(spec, threads);
                write_dataset(dataset, out_dir);
            }
            py::dict out;
            out["data_dir"] = out_dir;
            out["train_manifest"] = out_dir + "/train_manifest.csv";
            out["mask_manifest"] = out_dir + "/mask_manifest.csv";
            out["test_manifest"] = out_dir + "/test_manifest.csv";
            out["ground_truth"] = out_dir + "/ground_truth.json";
            return out;
        },
        py::arg("out_dir"), py::arg("image_size") = 128, py::arg("grid_rows") = 4,
        py::arg("grid_cols") = 4, py::arg("jitter_sigma") = 0.5, py::arg("noise_sigma") = 0.02,
        py::arg("zone") = std::make_tuple(0, 0, 32, 32), py::arg("defect_magnitude") = 5.0,
        py::arg("train_normals") = 20, py::arg("mask_normals") = 30, py::arg("test_normals") = 24,
        py::arg("test_abnormals") = 12, py::arg("seed") = 20240817, py::arg("threads") = 1,
        "Render a registered-scene dataset with labeled defects and write "
        "images, manifests, and ground truth under out_dir.");

    m.def(
        "run",
        [](const std::string& config_path) {
            PipelineResult result;
            {
                py::gil_scoped_release release;
                const PipelineConfig config = load_config(config_path);
                result = run_pipeline(config);
            }
            py::dict out;
            out["data_dir"] = result.data_dir;
            out["metrics_csv"] = result.metrics_csv;
            out["model_json"] = result.model_json;
            out["report_json"] = result.report_json;
            out["report_md"] = result.report_md;
            out["report_svg"] = result.report_svg;
            out["report"] = report_summary(result.report);
            return out;
        },
        py::arg("config_path"),
        "Run the full pipeline from a JSON config; returns artifact paths "
        "and the evaluation summary.");
}
