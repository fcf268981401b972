#include "zfn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "zfn/parallel.hpp"
#include "zfn/recon.hpp"
#include "zfn/rng.hpp"
#include "zfn/util.hpp"

namespace zfn {

namespace {

constexpr float kBackground = 0.1f;
constexpr float kBodyValue = 0.7f;
constexpr float kPadValue = 0.9f;
constexpr float kBridgeValue = 0.95f;
constexpr float kZoneDark = 0.05f;
constexpr float kZoneBright = 0.95f;
constexpr int kZoneBlock = 2;

struct ComponentLayout {
    Rect cell;
    Rect left_pad;
    Rect right_pad;
    Rect body;
    Rect bbox;
    bool drawn = false;            // outside the high-variation zone
    bool defect_eligible = false;  // far enough from the zone to host a defect
};

Rect offset_rect(const Rect& r, int dr, int dc) {
    return Rect{r.row0 + dr, r.col0 + dc, r.rows, r.cols};
}

Rect union_rect(const Rect& a, const Rect& b) {
    const int r0 = std::min(a.row0, b.row0);
    const int c0 = std::min(a.col0, b.col0);
    const int r1 = std::max(a.row0 + a.rows, b.row0 + b.rows);
    const int c1 = std::max(a.col0 + a.cols, b.col0 + b.cols);
    return Rect{r0, c0, r1 - r0, c1 - c0};
}

Rect expand_rect(const Rect& r, int margin) {
    return Rect{r.row0 - margin, r.col0 - margin, r.rows + 2 * margin, r.cols + 2 * margin};
}

void fill_rect(ImageTensor& img, const Rect& r, float value) {
    const int r0 = std::max(0, r.row0);
    const int c0 = std::max(0, r.col0);
    const int r1 = std::min(img.height, r.row0 + r.rows);
    const int c1 = std::min(img.width, r.col0 + r.cols);
    for (int row = r0; row < r1; ++row) {
        for (int col = c0; col < c1; ++col) {
            img.data[static_cast<std::size_t>(row) * img.width + col] = value;
        }
    }
}

std::vector<ComponentLayout> layout_components(const SynthSpec& spec) {
    const int ch = spec.image_size / spec.grid_rows;
    const int cw = spec.image_size / spec.grid_cols;
    const int pad_rows = std::max(4, ch / 4);
    const int pad_cols = std::max(2, cw * 5 / 32);
    const int pad_row0 = (ch - pad_rows) / 2;
    const int left_col0 = cw * 3 / 16;
    const int right_col0 = cw - cw * 3 / 16 - pad_cols;
    const int body_rows = std::max(2, ch / 8);
    const int body_row0 = (ch - body_rows) / 2;
    const int defect_margin = static_cast<int>(std::ceil(spec.defect_magnitude)) + 1;

    std::vector<ComponentLayout> comps;
    comps.reserve(static_cast<std::size_t>(spec.grid_rows) * spec.grid_cols);
    for (int gr = 0; gr < spec.grid_rows; ++gr) {
        for (int gc = 0; gc < spec.grid_cols; ++gc) {
            ComponentLayout c;
            c.cell = Rect{gr * ch, gc * cw, ch, cw};
            c.left_pad = Rect{c.cell.row0 + pad_row0, c.cell.col0 + left_col0, pad_rows, pad_cols};
            c.right_pad = Rect{c.cell.row0 + pad_row0, c.cell.col0 + right_col0, pad_rows, pad_cols};
            c.body = Rect{c.cell.row0 + body_row0, c.left_pad.col0 + pad_cols, body_rows,
                          c.right_pad.col0 - (c.left_pad.col0 + pad_cols)};
            c.bbox = Rect{c.left_pad.row0, c.left_pad.col0, pad_rows,
                          c.right_pad.col0 + pad_cols - c.left_pad.col0};
            c.drawn = !c.bbox.intersects(spec.high_variation_zone);
            c.defect_eligible =
                c.drawn && !expand_rect(c.cell, defect_margin).intersects(spec.high_variation_zone);
            comps.push_back(c);
        }
    }
    return comps;
}

void draw_component(ImageTensor& img, const ComponentLayout& c, int dr, int dc) {
    fill_rect(img, offset_rect(c.body, dr, dc), kBodyValue);
    fill_rect(img, offset_rect(c.left_pad, dr, dc), kPadValue);
    fill_rect(img, offset_rect(c.right_pad, dr, dc), kPadValue);
}

struct DefectPlan {
    bool active = false;
    std::string kind;
    std::size_t component = 0;
    int direction = 0;  // 0 up, 1 down, 2 left, 3 right
};

SynthImage render_image(const SynthSpec& spec, const std::vector<ComponentLayout>& comps,
                        const std::vector<std::size_t>& eligible, const std::string& image_id,
                        const std::string& role, int label, const std::string& defect_kind,
                        std::uint64_t image_seed) {
    Rng rng(image_seed);
    SynthImage out;
    out.image_id = image_id;
    out.role = role;
    out.label = label;
    out.image = make_tensor(spec.image_size, spec.image_size, 1, kBackground);
    out.image.source = image_id;
    ImageTensor& img = out.image;

    const Rect& zone = spec.high_variation_zone;
    if (zone.rows > 0 && zone.cols > 0) {
        for (int r = zone.row0; r < zone.row0 + zone.rows; r += kZoneBlock) {
            for (int c = zone.col0; c < zone.col0 + zone.cols; c += kZoneBlock) {
                const float v = rng.next_u64() & 1 ? kZoneBright : kZoneDark;
                fill_rect(img,
                          Rect{r, c, std::min(kZoneBlock, zone.row0 + zone.rows - r),
                               std::min(kZoneBlock, zone.col0 + zone.cols - c)},
                          v);
            }
        }
    }

    std::vector<std::pair<int, int>> jitter(comps.size());
    for (std::size_t i = 0; i < comps.size(); ++i) {
        const double jr = rng.gauss() * spec.jitter_sigma;
        const double jc = rng.gauss() * spec.jitter_sigma;
        const ComponentLayout& c = comps[i];
        int dr = static_cast<int>(std::lround(jr));
        int dc = static_cast<int>(std::lround(jc));
        dr = std::clamp(dr, c.cell.row0 - c.bbox.row0,
                        c.cell.row0 + c.cell.rows - (c.bbox.row0 + c.bbox.rows));
        dc = std::clamp(dc, c.cell.col0 - c.bbox.col0,
                        c.cell.col0 + c.cell.cols - (c.bbox.col0 + c.bbox.cols));
        jitter[i] = {dr, dc};
    }

    DefectPlan plan;
    {
        // Consumed for every image so the stream layout does not depend
        // on the label.
        const std::size_t pick = eligible.empty() ? 0 : rng.index(eligible.size());
        const std::size_t dir = rng.index(4);
        if (label == 1) {
            plan.active = true;
            plan.kind = defect_kind;
            plan.component = eligible[pick];
            plan.direction = static_cast<int>(dir);
        }
    }

    for (std::size_t i = 0; i < comps.size(); ++i) {
        const ComponentLayout& c = comps[i];
        if (!c.drawn) continue;
        const auto [dr, dc] = jitter[i];
        if (plan.active && plan.component == i) {
            if (plan.kind == "missing") {
                out.boxes.push_back({offset_rect(c.bbox, dr, dc), "missing"});
                continue;
            }
            if (plan.kind == "shift") {
                const int mag = static_cast<int>(std::lround(spec.defect_magnitude));
                int sr = 0, sc = 0;
                switch (plan.direction) {
                    case 0: sr = -mag; break;
                    case 1: sr = mag; break;
                    case 2: sc = -mag; break;
                    default: sc = mag; break;
                }
                int fr = dr + sr, fc = dc + sc;
                fr = std::clamp(fr, -c.bbox.row0, spec.image_size - (c.bbox.row0 + c.bbox.rows));
                fc = std::clamp(fc, -c.bbox.col0, spec.image_size - (c.bbox.col0 + c.bbox.cols));
                draw_component(img, c, fr, fc);
                out.boxes.push_back(
                    {union_rect(offset_rect(c.bbox, dr, dc), offset_rect(c.bbox, fr, fc)), "shift"});
                continue;
            }
            // bridge
            draw_component(img, c, dr, dc);
            const Rect bar{c.left_pad.row0 + dr, c.left_pad.col0 + c.left_pad.cols + dc,
                           c.left_pad.rows, c.right_pad.col0 - (c.left_pad.col0 + c.left_pad.cols)};
            fill_rect(img, bar, kBridgeValue);
            out.boxes.push_back({bar, "bridge"});
            continue;
        }
        draw_component(img, c, dr, dc);
    }

    if (spec.noise_sigma > 0.0) {
        for (auto& v : img.data) {
            v = std::clamp(v + static_cast<float>(rng.gauss() * spec.noise_sigma), 0.0f, 1.0f);
        }
    } else {
        for (std::size_t i = 0; i < img.data.size(); ++i) rng.gauss();
    }
    return out;
}

std::string pad3(int v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%03d", v);
    return buf;
}

}  // namespace

void validate_synth_spec(const SynthSpec& spec) {
    if (spec.image_size < 32) throw std::runtime_error("synth spec: image_size must be >= 32");
    if (spec.grid_rows < 1 || spec.grid_cols < 1) {
        throw std::runtime_error("synth spec: component grid must be at least 1x1");
    }
    if (spec.image_size / spec.grid_rows < 16 || spec.image_size / spec.grid_cols < 16) {
        throw std::runtime_error("synth spec: grid cells must be at least 16 pixels");
    }
    if (spec.jitter_sigma < 0.0 || spec.noise_sigma < 0.0) {
        throw std::runtime_error("synth spec: sigmas must be non-negative");
    }
    const Rect& z = spec.high_variation_zone;
    if (z.rows < 0 || z.cols < 0 || z.row0 < 0 || z.col0 < 0 ||
        z.row0 + z.rows > spec.image_size || z.col0 + z.cols > spec.image_size) {
        throw std::runtime_error("synth spec: high-variation zone outside image");
    }
    if (spec.train_normals < 1) throw std::runtime_error("synth spec: train_normals must be >= 1");
    if (spec.mask_normals < 2) throw std::runtime_error("synth spec: mask_normals must be >= 2");
    if (spec.test_normals < 0 || spec.test_abnormals < 0) {
        throw std::runtime_error("synth spec: negative test counts");
    }
    if (spec.test_abnormals > 0) {
        if (spec.defect_kinds.empty()) {
            throw std::runtime_error("synth spec: abnormal images requested but no defect kinds");
        }
        for (const auto& k : spec.defect_kinds) {
            if (k != "shift" && k != "missing" && k != "bridge") {
                throw std::runtime_error("synth spec: unknown defect kind '" + k + "'");
            }
        }
        if (spec.defect_magnitude < 1.0) {
            throw std::runtime_error("synth spec: defect_magnitude must be >= 1");
        }
    }
}

SynthDataset generate(const SynthSpec& spec, int threads) {
    validate_synth_spec(spec);
    const std::vector<ComponentLayout> comps = layout_components(spec);
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < comps.size(); ++i) {
        if (comps[i].defect_eligible) eligible.push_back(i);
    }
    if (spec.test_abnormals > 0 && eligible.empty()) {
        throw std::runtime_error(
            "synth spec: no component sits far enough from the high-variation zone to host a defect");
    }

    struct Slot {
        std::string image_id;
        std::string role;
        int label = 0;
        std::string defect_kind;
    };
    std::vector<Slot> slots;
    for (int i = 0; i < spec.train_normals; ++i) slots.push_back({"train_" + pad3(i), "train", 0, ""});
    for (int i = 0; i < spec.mask_normals; ++i) slots.push_back({"mask_" + pad3(i), "mask", 0, ""});
    for (int i = 0; i < spec.test_normals; ++i) {
        slots.push_back({"test_normal_" + pad3(i), "test", 0, ""});
    }
    for (int i = 0; i < spec.test_abnormals; ++i) {
        const auto& kind = spec.defect_kinds[static_cast<std::size_t>(i) % spec.defect_kinds.size()];
        slots.push_back({"test_abnormal_" + pad3(i), "test", 1, kind});
    }

    SynthDataset out;
    out.spec = spec;
    out.images.resize(slots.size());
    parallel_for(slots.size(), threads, [&](std::size_t i) {
        const Slot& s = slots[i];
        out.images[i] = render_image(spec, comps, eligible, s.image_id, s.role, s.label,
                                     s.defect_kind, derive_seed(spec.seed, i));
    });
    return out;
}

namespace {

void write_manifest(const std::string& path, const std::vector<const SynthImage*>& images) {
    std::ofstream o(path);
    if (!o) throw std::runtime_error("cannot write manifest: " + path);
    o << kManifestHeader << "\n";
    for (const SynthImage* img : images) {
        o << "images/" << img->image_id << ".png," << kGoldenReconRelPath << ","
          << img->label << ",,,,\n";
    }
}

}  // namespace

void write_dataset(const SynthDataset& dataset, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "images");
    fs::create_directories(fs::path(out_dir) / "recon");

    std::vector<const SynthImage*> train, mask, test;
    for (const auto& img : dataset.images) {
        save_png(img.image, (fs::path(out_dir) / "images" / (img.image_id + ".png")).string(), 16);
        if (img.role == "train") train.push_back(&img);
        else if (img.role == "mask") mask.push_back(&img);
        else test.push_back(&img);
    }
    write_manifest((fs::path(out_dir) / "train_manifest.csv").string(), train);
    write_manifest((fs::path(out_dir) / "mask_manifest.csv").string(), mask);
    write_manifest((fs::path(out_dir) / "test_manifest.csv").string(), test);

    nlohmann::ordered_json gt;
    gt["images"] = nlohmann::ordered_json::array();
    for (const auto& img : dataset.images) {
        nlohmann::ordered_json e;
        e["image_id"] = img.image_id;
        e["label"] = img.label;
        e["boxes"] = nlohmann::ordered_json::array();
        for (const auto& b : img.boxes) {
            nlohmann::ordered_json bj;
            bj["row0"] = b.box.row0;
            bj["col0"] = b.box.col0;
            bj["rows"] = b.box.rows;
            bj["cols"] = b.box.cols;
            bj["kind"] = b.kind;
            e["boxes"].push_back(std::move(bj));
        }
        gt["images"].push_back(std::move(e));
    }
    write_text_file((fs::path(out_dir) / "ground_truth.json").string(), gt.dump(2) + "\n");
}

std::map<std::string, std::vector<GroundTruthBox>> load_ground_truth(const std::string& path) {
    const auto j = nlohmann::json::parse(read_text_file(path));
    std::map<std::string, std::vector<GroundTruthBox>> out;
    for (const auto& e : j.at("images")) {
        std::vector<GroundTruthBox> boxes;
        for (const auto& bj : e.at("boxes")) {
            GroundTruthBox b;
            b.box = Rect{bj.at("row0").get<int>(), bj.at("col0").get<int>(), bj.at("rows").get<int>(),
                         bj.at("cols").get<int>()};
            b.kind = bj.at("kind").get<std::string>();
            boxes.push_back(std::move(b));
        }
        out[e.at("image_id").get<std::string>()] = std::move(boxes);
    }
    return out;
}

nlohmann::ordered_json synth_spec_to_json(const SynthSpec& spec) {
    nlohmann::ordered_json j;
    j["image_size"] = spec.image_size;
    j["grid_rows"] = spec.grid_rows;
    j["grid_cols"] = spec.grid_cols;
    j["jitter_sigma"] = spec.jitter_sigma;
    j["noise_sigma"] = spec.noise_sigma;
    j["high_variation_zone"] = {{"row0", spec.high_variation_zone.row0},
                                {"col0", spec.high_variation_zone.col0},
                                {"rows", spec.high_variation_zone.rows},
                                {"cols", spec.high_variation_zone.cols}};
    j["defect_kinds"] = spec.defect_kinds;
    j["defect_magnitude"] = spec.defect_magnitude;
    j["train_normals"] = spec.train_normals;
    j["mask_normals"] = spec.mask_normals;
    j["test_normals"] = spec.test_normals;
    j["test_abnormals"] = spec.test_abnormals;
    j["seed"] = spec.seed;
    return j;
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    SynthSpec spec;
    if (j.contains("image_size")) spec.image_size = j.at("image_size").get<int>();
    if (j.contains("grid_rows")) spec.grid_rows = j.at("grid_rows").get<int>();
    if (j.contains("grid_cols")) spec.grid_cols = j.at("grid_cols").get<int>();
    if (j.contains("jitter_sigma")) spec.jitter_sigma = j.at("jitter_sigma").get<double>();
    if (j.contains("noise_sigma")) spec.noise_sigma = j.at("noise_sigma").get<double>();
    if (j.contains("high_variation_zone")) {
        const auto& z = j.at("high_variation_zone");
        spec.high_variation_zone = Rect{z.at("row0").get<int>(), z.at("col0").get<int>(),
                                        z.at("rows").get<int>(), z.at("cols").get<int>()};
    }
    if (j.contains("defect_kinds")) {
        spec.defect_kinds = j.at("defect_kinds").get<std::vector<std::string>>();
    }
    if (j.contains("defect_magnitude")) spec.defect_magnitude = j.at("defect_magnitude").get<double>();
    if (j.contains("train_normals")) spec.train_normals = j.at("train_normals").get<int>();
    if (j.contains("mask_normals")) spec.mask_normals = j.at("mask_normals").get<int>();
    if (j.contains("test_normals")) spec.test_normals = j.at("test_normals").get<int>();
    if (j.contains("test_abnormals")) spec.test_abnormals = j.at("test_abnormals").get<int>();
    if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
    validate_synth_spec(spec);
    return spec;
}

}  // namespace zfn
