#include <doctest.h>

#include <filesystem>
#include <set>
#include <stdexcept>
#include <vector>

#include "test_util.hpp"
#include "zfn/recon.hpp"
#include "zfn/synth.hpp"
#include "zfn/tensor.hpp"
#include "zfn/util.hpp"

using namespace zfn;
using testutil::TempDir;

namespace {

SynthSpec small_spec() {
    SynthSpec spec;
    spec.image_size = 64;
    spec.grid_rows = 2;
    spec.grid_cols = 2;
    spec.jitter_sigma = 0.4;
    spec.noise_sigma = 0.01;
    spec.high_variation_zone = Rect{0, 0, 16, 16};
    spec.defect_magnitude = 5.0;
    spec.train_normals = 3;
    spec.mask_normals = 2;
    spec.test_normals = 2;
    spec.test_abnormals = 3;
    spec.seed = 77;
    return spec;
}

}  // namespace

TEST_CASE("spec validation rejects bad geometry and counts") {
    CHECK_NOTHROW(validate_synth_spec(SynthSpec{}));

    SynthSpec bad = small_spec();
    bad.image_size = 16;
    CHECK_THROWS_AS(validate_synth_spec(bad), std::runtime_error);

    bad = small_spec();
    bad.high_variation_zone = Rect{0, 0, 80, 16};
    CHECK_THROWS_AS(validate_synth_spec(bad), std::runtime_error);

    bad = small_spec();
    bad.grid_rows = 8;  // 8-pixel cells are too small for a component
    CHECK_THROWS_AS(validate_synth_spec(bad), std::runtime_error);

    bad = small_spec();
    bad.mask_normals = 1;
    CHECK_THROWS_AS(validate_synth_spec(bad), std::runtime_error);

    bad = small_spec();
    bad.jitter_sigma = -0.5;
    CHECK_THROWS_AS(validate_synth_spec(bad), std::runtime_error);

    bad = small_spec();
    bad.defect_kinds = {};
    CHECK_THROWS_AS(validate_synth_spec(bad), std::runtime_error);
    bad.test_abnormals = 0;
    CHECK_NOTHROW(validate_synth_spec(bad));

    bad = small_spec();
    bad.defect_kinds = {"scratch"};
    CHECK_THROWS_AS(validate_synth_spec(bad), std::runtime_error);

    bad = small_spec();
    bad.defect_magnitude = 0.5;
    CHECK_THROWS_AS(validate_synth_spec(bad), std::runtime_error);
}

TEST_CASE("spec json round trips") {
    const SynthSpec spec = small_spec();
    const SynthSpec back = synth_spec_from_json(synth_spec_to_json(spec));
    CHECK(back.image_size == spec.image_size);
    CHECK(back.grid_rows == spec.grid_rows);
    CHECK(back.grid_cols == spec.grid_cols);
    CHECK(back.jitter_sigma == spec.jitter_sigma);
    CHECK(back.noise_sigma == spec.noise_sigma);
    CHECK(back.high_variation_zone.row0 == spec.high_variation_zone.row0);
    CHECK(back.high_variation_zone.cols == spec.high_variation_zone.cols);
    CHECK(back.defect_kinds == spec.defect_kinds);
    CHECK(back.defect_magnitude == spec.defect_magnitude);
    CHECK(back.train_normals == spec.train_normals);
    CHECK(back.mask_normals == spec.mask_normals);
    CHECK(back.test_normals == spec.test_normals);
    CHECK(back.test_abnormals == spec.test_abnormals);
    CHECK(back.seed == spec.seed);
}

TEST_CASE("zero variation collapses normals to one scene") {
    SynthSpec spec = small_spec();
    spec.jitter_sigma = 0.0;
    spec.noise_sigma = 0.0;
    spec.high_variation_zone = Rect{};  // empty zone: nothing randomized
    spec.test_abnormals = 0;

    const SynthDataset ds = generate(spec);
    const ImageTensor* first = nullptr;
    for (const auto& img : ds.images) {
        CHECK(img.label == 0);
        if (!first) {
            first = &img.image;
        } else {
            CHECK(img.image.data == first->data);
        }
    }
}

TEST_CASE("dataset counts roles and labels") {
    const SynthSpec spec = small_spec();
    const SynthDataset ds = generate(spec);
    int train = 0, mask = 0, test_normal = 0, test_abnormal = 0;
    std::set<std::string> ids;
    for (const auto& img : ds.images) {
        ids.insert(img.image_id);
        if (img.role == "train") {
            ++train;
            CHECK(img.label == 0);
        } else if (img.role == "mask") {
            ++mask;
            CHECK(img.label == 0);
        } else {
            REQUIRE(img.role == "test");
            if (img.label == 1) {
                ++test_abnormal;
                CHECK_FALSE(img.boxes.empty());
            } else {
                ++test_normal;
            }
        }
        if (img.label == 0) CHECK(img.boxes.empty());
        validate_tensor(img.image);
    }
    CHECK(train == 3);
    CHECK(mask == 2);
    CHECK(test_normal == 2);
    CHECK(test_abnormal == 3);
    CHECK(ids.size() == ds.images.size());
}

TEST_CASE("same seed reproduces the dataset bit for bit") {
    const SynthSpec spec = small_spec();
    const SynthDataset a = generate(spec);
    const SynthDataset b = generate(spec);
    REQUIRE(a.images.size() == b.images.size());
    for (std::size_t i = 0; i < a.images.size(); ++i) {
        CHECK(a.images[i].image_id == b.images[i].image_id);
        CHECK(a.images[i].image.data == b.images[i].image.data);
        REQUIRE(a.images[i].boxes.size() == b.images[i].boxes.size());
        for (std::size_t k = 0; k < a.images[i].boxes.size(); ++k) {
            CHECK(a.images[i].boxes[k].box.row0 == b.images[i].boxes[k].box.row0);
            CHECK(a.images[i].boxes[k].kind == b.images[i].boxes[k].kind);
        }
    }

    SynthSpec other = spec;
    other.seed = spec.seed + 1;
    const SynthDataset c = generate(other);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.images.size() && !any_diff; ++i) {
        any_diff = a.images[i].image.data != c.images[i].image.data;
    }
    CHECK(any_diff);
}

TEST_CASE("generation is identical across thread counts") {
    const SynthSpec spec = small_spec();
    const SynthDataset serial = generate(spec, 1);
    const SynthDataset parallel = generate(spec, 4);
    REQUIRE(serial.images.size() == parallel.images.size());
    for (std::size_t i = 0; i < serial.images.size(); ++i) {
        CHECK(serial.images[i].image.data == parallel.images[i].image.data);
    }
}

TEST_CASE("missing defect dominates the difference map") {
    SynthSpec spec = small_spec();
    spec.defect_kinds = {"missing"};
    spec.noise_sigma = 0.0;
    spec.jitter_sigma = 0.0;
    spec.high_variation_zone = Rect{};  // keep the argmax claim free of zone texture
    const SynthDataset ds = generate(spec);

    std::vector<ImageTensor> train;
    for (const auto& img : ds.images) {
        if (img.role == "train") train.push_back(img.image);
    }
    const ImageTensor golden = baseline_reconstruct(train, train.front());

    for (const auto& img : ds.images) {
        if (img.label != 1) continue;
        REQUIRE(img.boxes.size() == 1);
        CHECK(img.boxes[0].kind == "missing");
        const DiffMap diff = abs_diff(img.image, golden);
        int best_r = 0, best_c = 0;
        float best = -1.0f;
        for (int r = 0; r < diff.height; ++r) {
            for (int c = 0; c < diff.width; ++c) {
                if (diff.at(r, c) > best) {
                    best = diff.at(r, c);
                    best_r = r;
                    best_c = c;
                }
            }
        }
        CHECK(img.boxes[0].box.contains(best_r, best_c));
    }
}

TEST_CASE("written datasets reload through the manifest chain") {
    TempDir dir("zfn-synth");
    const SynthSpec spec = small_spec();
    const SynthDataset ds = generate(spec);
    write_dataset(ds, dir.str());

    for (const char* name : {"train_manifest.csv", "mask_manifest.csv", "test_manifest.csv",
                             "ground_truth.json"}) {
        CHECK(std::filesystem::exists(dir.path / name));
    }

    const auto train_rows = read_manifest(dir.str("train_manifest.csv"));
    CHECK(train_rows.size() == 3);
    for (const auto& row : train_rows) {
        CHECK(row.label == 0);
        CHECK(row.reconstruction.ends_with("golden.zfnt"));
        CHECK(std::filesystem::exists(row.original));
    }

    const auto test_rows = read_manifest(dir.str("test_manifest.csv"));
    CHECK(test_rows.size() == 5);

    const auto gt = load_ground_truth(dir.str("ground_truth.json"));
    int abnormal = 0;
    for (const auto& img : ds.images) {
        if (img.role != "test") continue;
        REQUIRE(gt.count(img.image_id) == 1);
        if (img.label == 1) {
            ++abnormal;
            CHECK(gt.at(img.image_id).size() == img.boxes.size());
        } else {
            CHECK(gt.at(img.image_id).empty());
        }
    }
    CHECK(abnormal == 3);

    // 16-bit PNG quantization: reloaded pixels stay within half a step.
    const auto& sample = ds.images.front();
    const ImageTensor back = load_image(dir.str("images/" + sample.image_id + ".png"));
    REQUIRE(back.same_dims(sample.image));
    for (std::size_t i = 0; i < back.data.size(); ++i) {
        CHECK(back.data[i] == doctest::Approx(sample.image.data[i]).epsilon(1e-5));
    }
}

TEST_CASE("defect kinds restrict the drawn defects") {
    SynthSpec spec = small_spec();
    spec.defect_kinds = {"bridge"};
    spec.test_abnormals = 4;
    const SynthDataset ds = generate(spec);
    int seen = 0;
    for (const auto& img : ds.images) {
        for (const auto& box : img.boxes) {
            CHECK(box.kind == "bridge");
            ++seen;
        }
    }
    CHECK(seen == 4);
}
