#include <doctest.h>

#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "test_util.hpp"
#include "zfn/maskweight.hpp"
#include "zfn/tensor.hpp"
#include "zfn/util.hpp"

using namespace zfn;
using testutil::TempDir;

namespace {

ReconPair pair_with_diff(const std::vector<float>& diff_values, int h, int w,
                         const std::string& id) {
    ReconPair p;
    p.original = make_tensor(h, w, 1, 0.0f);
    p.reconstruction = make_tensor(h, w, 1);
    p.reconstruction.data = diff_values;
    p.image_id = id;
    return p;
}

}  // namespace

TEST_CASE("mask flips normalized mean difference") {
    // Mean diff per pixel: 0.0, 0.2, 0.4, 0.8.
    const std::vector<ReconPair> holdout = {
        pair_with_diff({0.0f, 0.1f, 0.4f, 0.8f}, 2, 2, "h0"),
        pair_with_diff({0.0f, 0.3f, 0.4f, 0.8f}, 2, 2, "h1"),
    };
    const WeightMask mask = build_mask(holdout);
    CHECK(mask.height == 2);
    CHECK(mask.width == 2);
    CHECK(mask.holdout_used == 2);
    CHECK(mask.at(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(mask.at(0, 1) == doctest::Approx(0.75).epsilon(1e-6));
    CHECK(mask.at(1, 0) == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(mask.at(1, 1) == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("constant difference flips to an all-ones mask") {
    const std::vector<ReconPair> holdout = {
        pair_with_diff({0.3f, 0.3f, 0.3f, 0.3f}, 2, 2, "h0"),
        pair_with_diff({0.3f, 0.3f, 0.3f, 0.3f}, 2, 2, "h1"),
    };
    const WeightMask mask = build_mask(holdout);
    for (float v : mask.weights) CHECK(v == 1.0f);
}

TEST_CASE("mask construction rejects bad holdouts") {
    CHECK_THROWS_AS(build_mask({}), std::runtime_error);

    std::vector<ReconPair> abnormal = {pair_with_diff({0.1f, 0.2f, 0.3f, 0.4f}, 2, 2, "a")};
    abnormal[0].label = 1;
    CHECK_THROWS_AS(build_mask(abnormal), std::runtime_error);

    std::vector<ReconPair> mixed = {pair_with_diff({0.1f, 0.2f, 0.3f, 0.4f}, 2, 2, "a"),
                                    pair_with_diff({0.1f, 0.2f}, 1, 2, "b")};
    CHECK_THROWS_AS(build_mask(mixed), std::runtime_error);
}

TEST_CASE("apply_mask damps differences pointwise") {
    DiffMap diff;
    diff.height = 1;
    diff.width = 2;
    diff.values = {0.4f, 0.4f};
    WeightMask mask;
    mask.height = 1;
    mask.width = 2;
    mask.weights = {0.25f, 1.0f};
    const DiffMap out = apply_mask(diff, mask);
    CHECK(out.at(0, 0) == 0.1f);
    CHECK(out.at(0, 1) == 0.4f);

    WeightMask wrong;
    wrong.height = 2;
    wrong.width = 2;
    wrong.weights = {1.0f, 1.0f, 1.0f, 1.0f};
    CHECK_THROWS_AS(apply_mask(diff, wrong), std::runtime_error);
}

TEST_CASE("mask files round trip with provenance") {
    TempDir dir("zfn-mask");
    const std::vector<ReconPair> holdout = {
        pair_with_diff({0.0f, 0.1f, 0.4f, 0.8f}, 2, 2, "h0"),
        pair_with_diff({0.0f, 0.3f, 0.4f, 0.8f}, 2, 2, "h1"),
        pair_with_diff({0.1f, 0.2f, 0.3f, 0.7f}, 2, 2, "h2"),
    };
    const WeightMask mask = build_mask(holdout);
    const std::string path = dir.str("mask.zfnt");
    save_mask(mask, path);
    write_mask_provenance(mask, holdout, path);

    const WeightMask back = load_mask(path);
    CHECK(back.height == mask.height);
    CHECK(back.width == mask.width);
    CHECK(back.weights == mask.weights);
    CHECK(back.holdout_used == 3);

    const auto j = nlohmann::json::parse(read_text_file(path + ".json"));
    CHECK(j.at("holdout_used").get<int>() == 3);
    REQUIRE(j.at("sources").size() == 3);
    CHECK(j["sources"][0].at("image_id").get<std::string>() == "h0");
    CHECK(j["sources"][0].contains("original_hash"));
    CHECK(j["sources"][0].contains("reconstruction_hash"));
}

TEST_CASE("load_mask rejects non-mask tensors") {
    TempDir dir("zfn-mask-bad");
    save_tensor(testutil::random_image(2, 2, 3, 9), dir.str("rgb.zfnt"));
    CHECK_THROWS_AS(load_mask(dir.str("rgb.zfnt")), std::runtime_error);
}
