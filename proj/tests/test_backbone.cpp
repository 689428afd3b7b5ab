#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "fcbnet/backbone.hpp"
#include "fcbnet/safetensors.hpp"
#include "helpers.hpp"

using namespace fcbnet;
using namespace fcbnet::testing;

namespace {

// closed-form ConvNeXt size: stem + blocks (8C^2 + 58C each) + downsamplers
// + final norm and 1000-way fc
int64_t expected_params(const BackboneVariant& v, int in_ch, bool with_classifier) {
    const auto& c = v.stage_channels;
    int64_t n = int64_t(c[0]) * in_ch * 16 + c[0] + 2 * c[0];
    for (int s = 0; s < 4; ++s)
        n += int64_t(v.stage_depths[s]) * (8LL * c[s] * c[s] + 58LL * c[s]);
    for (int s = 0; s < 3; ++s) n += 2LL * c[s] + 4LL * c[s] * c[s + 1] + c[s + 1];
    if (with_classifier) n += 2LL * c[3] + 1000LL * c[3] + 1000;
    return n;
}

// canonical checkpoint names from the internal flat view
std::string canonical_name(const std::string& internal) {
    auto replace = [](std::string s, const std::string& from, const std::string& to) {
        const auto pos = s.find(from);
        if (pos != std::string::npos) s = s.substr(0, pos) + to + s.substr(pos + from.size());
        return s;
    };
    std::string n = internal;
    if (n.rfind("stem.conv.", 0) == 0) return replace(n, "stem.conv", "downsample_layers.0.0");
    if (n == "stem.norm.gamma") return "downsample_layers.0.1.weight";
    if (n == "stem.norm.beta") return "downsample_layers.0.1.bias";
    if (n.rfind("downsamples.", 0) == 0) {
        const int i = n[12] - '0';
        std::string rest = n.substr(14);
        const std::string base = "downsample_layers." + std::to_string(i + 1) + ".";
        if (rest == "norm.gamma") return base + "0.weight";
        if (rest == "norm.beta") return base + "0.bias";
        if (rest == "conv.weight") return base + "1.weight";
        if (rest == "conv.bias") return base + "1.bias";
    }
    if (n.rfind("stages.", 0) == 0) {
        n = replace(n, ".dw.", ".dwconv.");
        n = replace(n, ".norm.gamma", ".norm.weight");
        n = replace(n, ".norm.beta", ".norm.bias");
        n = replace(n, ".pw1.", ".pwconv1.");
        n = replace(n, ".pw2.", ".pwconv2.");
        n = replace(n, ".scale", ".gamma");
        return n;
    }
    if (n == "classifier.norm.gamma") return "norm.weight";
    if (n == "classifier.norm.beta") return "norm.bias";
    if (n == "classifier.fc.weight") return "head.weight";
    if (n == "classifier.fc.bias") return "head.bias";
    FAIL("unmapped tensor name: ", internal);
    return n;
}

std::string write_canonical(const Backbone& bb, const std::string& path) {
    std::map<std::string, Tensor> renamed;
    for (const auto& [name, t] : bb.named_tensors()) renamed[canonical_name(name)] = *t;
    std::map<std::string, const Tensor*> ptrs;
    for (auto& [name, t] : renamed) ptrs[name] = &t;
    save_safetensors(path, ptrs);
    return path;
}

std::string tmp_path(const std::string& leaf) {
    return (std::filesystem::temp_directory_path() / leaf).string();
}

}  // namespace

TEST_CASE("the four variants carry the published widths and depths") {
    REQUIRE(backbone_variants().size() == 4);
    const auto& tiny = variant_by_name("tiny");
    CHECK(tiny.stage_channels == std::array<int, 4>{96, 192, 384, 768});
    CHECK(tiny.stage_depths == std::array<int, 4>{3, 3, 9, 3});
    const auto& small = variant_by_name("small");
    CHECK(small.stage_channels == std::array<int, 4>{96, 192, 384, 768});
    CHECK(small.stage_depths == std::array<int, 4>{3, 3, 27, 3});
    const auto& base = variant_by_name("base");
    CHECK(base.stage_channels == std::array<int, 4>{128, 256, 512, 1024});
    CHECK(base.stage_depths == std::array<int, 4>{3, 3, 27, 3});
    const auto& large = variant_by_name("large");
    CHECK(large.stage_channels == std::array<int, 4>{192, 384, 768, 1536});
    CHECK(large.stage_depths == std::array<int, 4>{3, 3, 27, 3});
    CHECK_THROWS(variant_by_name("huge"));
}

TEST_CASE("parameter totals match the closed form and the published sizes") {
    Rng rng(1);
    const struct {
        const char* name;
        double published;
    } rows[] = {{"tiny", 28.6e6}, {"small", 50.2e6}, {"base", 88.6e6}, {"large", 197.8e6}};
    for (const auto& row : rows) {
        BackboneConfig cfg;
        cfg.variant = row.name;
        Backbone bb(cfg, rng);
        const int64_t with_cls = bb.param_count(true);
        CHECK(with_cls == expected_params(bb.variant(), 3, true));
        CHECK(bb.param_count(false) == expected_params(bb.variant(), 3, false));
        CHECK(std::abs(double(with_cls) / row.published - 1.0) < 0.02);
    }
    // spot values of the closed form itself
    CHECK(expected_params(variant_by_name("tiny"), 3, true) == 28589128);
    CHECK(expected_params(variant_by_name("base"), 3, true) == 88591464);
    CHECK(expected_params(variant_by_name("large"), 3, true) == 197767336);
}

TEST_CASE("extra input bands only grow the stem") {
    Rng rng(2);
    BackboneConfig rgb;
    BackboneConfig rgbn;
    rgbn.in_channels = 4;
    const int64_t d3 = Backbone(rgb, rng).param_count(true);
    const int64_t d4 = Backbone(rgbn, rng).param_count(true);
    CHECK(d4 - d3 == 128 * 16);  // base stem: one 4x4 slice per filter
}

TEST_CASE("feature pyramid shapes follow floor halving") {
    Rng rng(3);
    BackboneConfig cfg;
    Backbone bb(cfg, rng);

    SUBCASE("square power-of-two input") {
        Tensor x = randn(rng, {1, 3, 512, 512});
        FeaturePyramid p = bb.extract_features(x);
        const int ch[4] = {128, 256, 512, 1024};
        const int hw[4] = {128, 64, 32, 16};
        for (int i = 0; i < 4; ++i) {
            CHECK(p.levels[i].dim(1) == ch[i]);
            CHECK(p.levels[i].dim(2) == hw[i]);
            CHECK(p.levels[i].dim(3) == hw[i]);
        }
    }
    SUBCASE("non-square five-band input") {
        BackboneConfig cfg5;
        cfg5.in_channels = 5;
        Backbone bb5(cfg5, rng);
        Tensor x = randn(rng, {1, 5, 480, 360});
        FeaturePyramid p = bb5.extract_features(x);
        const int64_t hs[4] = {120, 60, 30, 15};
        const int64_t ws[4] = {90, 45, 22, 11};  // 45 floors to 22
        for (int i = 0; i < 4; ++i) {
            CHECK(p.levels[i].dim(2) == hs[i]);
            CHECK(p.levels[i].dim(3) == ws[i]);
        }
    }
    SUBCASE("undersized input is rejected") {
        Tensor x = randn(rng, {1, 3, 16, 64});
        CHECK_THROWS(bb.extract_features(x));
    }
    SUBCASE("band count must match") {
        Tensor x = randn(rng, {1, 4, 64, 64});
        CHECK_THROWS(bb.extract_features(x));
    }
}

TEST_CASE("stem adaptation averages the RGB slices into new bands") {
    Rng rng(4);
    Tensor stem = randn(rng, {8, 3, 4, 4});

    Tensor five = adapt_stem(stem, 5);
    REQUIRE(five.dim(1) == 5);
    for (int co = 0; co < 8; ++co)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                for (int ci = 0; ci < 3; ++ci)
                    CHECK(five.at(co, ci, y, x) == stem.at(co, ci, y, x));
                const float mean =
                    (stem.at(co, 0, y, x) + stem.at(co, 1, y, x) + stem.at(co, 2, y, x)) / 3.0f;
                CHECK(five.at(co, 3, y, x) == doctest::Approx(mean));
                CHECK(five.at(co, 4, y, x) == doctest::Approx(mean));
            }

    CHECK(bit_equal(adapt_stem(stem, 3), stem));
    CHECK_THROWS(adapt_stem(stem, 2));
}

TEST_CASE("canonical weight files round-trip") {
    BackboneConfig cfg;
    cfg.variant = "tiny";
    Rng rng_a(5), rng_b(6);
    Backbone src(cfg, rng_a);
    Backbone dst(cfg, rng_b);

    Rng xrng(7);
    Tensor x = randn(xrng, {1, 3, 64, 64});
    FeaturePyramid before = dst.extract_features(x);

    const std::string path = tmp_path("fcbnet_bb_roundtrip.safetensors");
    write_canonical(src, path);
    dst.load_weights(path);
    std::remove(path.c_str());

    FeaturePyramid want = src.extract_features(x);
    FeaturePyramid got = dst.extract_features(x);
    for (int i = 0; i < 4; ++i) {
        CHECK(bit_equal(got.levels[i], want.levels[i]));
        CHECK(!bit_equal(before.levels[i], want.levels[i]));
    }
}

TEST_CASE("a three-band stem expands on load for wider inputs") {
    Rng rng(8);
    BackboneConfig rgb;
    rgb.variant = "tiny";
    Backbone src(rgb, rng);
    const std::string path = tmp_path("fcbnet_bb_expand.safetensors");
    write_canonical(src, path);

    BackboneConfig five = rgb;
    five.in_channels = 5;
    Backbone wide(five, rng);
    wide.load_weights(path);
    std::remove(path.c_str());

    const Tensor& loaded = *wide.named_tensors().at("stem.conv.weight");
    Tensor want = adapt_stem(*src.named_tensors().at("stem.conv.weight"), 5);
    CHECK(bit_equal(loaded, want));
}

TEST_CASE("zeroing the stem removes all input dependence") {
    BackboneConfig cfg;
    cfg.variant = "tiny";
    Rng rng(9);
    Backbone src(cfg, rng);

    std::map<std::string, Tensor> renamed;
    for (const auto& [name, t] : src.named_tensors()) {
        Tensor copy = *t;
        if (name == "stem.conv.weight" || name == "stem.conv.bias") copy.zero();
        renamed[canonical_name(name)] = std::move(copy);
    }
    std::map<std::string, const Tensor*> ptrs;
    for (auto& [name, t] : renamed) ptrs[name] = &t;
    const std::string path = tmp_path("fcbnet_bb_zerostem.safetensors");
    save_safetensors(path, ptrs);

    Backbone dead(cfg, rng);
    dead.load_weights(path);
    std::remove(path.c_str());

    Tensor a = randn(rng, {1, 3, 64, 64});
    Tensor b = randn(rng, {1, 3, 64, 64}, 5.0f);
    FeaturePyramid pa = dead.extract_features(a);
    FeaturePyramid pb = dead.extract_features(b);
    for (int i = 0; i < 4; ++i) CHECK(bit_equal(pa.levels[i], pb.levels[i]));
}

TEST_CASE("missing tensors in a weights file are reported") {
    BackboneConfig cfg;
    cfg.variant = "tiny";
    Rng rng(10);
    Backbone src(cfg, rng);

    std::map<std::string, Tensor> renamed;
    for (const auto& [name, t] : src.named_tensors()) renamed[canonical_name(name)] = *t;
    renamed.erase("stages.2.4.pwconv1.weight");
    std::map<std::string, const Tensor*> ptrs;
    for (auto& [name, t] : renamed) ptrs[name] = &t;
    const std::string path = tmp_path("fcbnet_bb_missing.safetensors");
    save_safetensors(path, ptrs);

    Backbone dst(cfg, rng);
    CHECK_THROWS_WITH_AS(dst.load_weights(path),
                         doctest::Contains("stages.2.4.pwconv1.weight"), std::runtime_error);
    std::remove(path.c_str());
}

TEST_CASE("frozen flag is carried through construction") {
    Rng rng(11);
    BackboneConfig cfg;
    cfg.variant = "tiny";
    CHECK(Backbone(cfg, rng).frozen());
    cfg.frozen = false;
    CHECK(!Backbone(cfg, rng).frozen());
}
