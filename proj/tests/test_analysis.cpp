#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fcbnet/analysis.hpp"
#include "helpers.hpp"

using namespace fcbnet;
using namespace fcbnet::testing;

namespace {

FcbNetConfig base_config() {
    FcbNetConfig cfg;
    cfg.backbone.variant = "base";
    return cfg;
}

double gflops(const FcbNetConfig& cfg, int h = 512, int w = 512) {
    return count_flops(cfg, h, w).total_flops / 1e9;
}

}  // namespace

TEST_CASE("static parameter accounting matches a built model") {
    FcbNetConfig cfg;
    cfg.backbone.variant = "tiny";
    FcbNet model = build_fcbnet(cfg, 5);
    ParamReport built = model.param_report();
    ParamReport statik = count_params(cfg);

    CHECK(statik.total == built.total);
    CHECK(statik.trainable == built.trainable);
    REQUIRE(statik.by_submodule.size() == built.by_submodule.size());
    for (size_t i = 0; i < built.by_submodule.size(); ++i) {
        CHECK(statik.by_submodule[i].name == built.by_submodule[i].name);
        CHECK(statik.by_submodule[i].total == built.by_submodule[i].total);
        CHECK(statik.by_submodule[i].trainable == built.by_submodule[i].trainable);
    }
}

TEST_CASE("correction blocks cost about one extra gigaflop at full resolution") {
    FcbNetConfig on = base_config();
    FcbNetConfig off = base_config();
    off.use_fcb = false;
    const double delta = gflops(on) - gflops(off);
    CHECK(delta > 1.07);
    CHECK(delta < 1.14);
}

TEST_CASE("widening the correction kernel from 1 to 3 is nearly free") {
    FcbNetConfig k3 = base_config();
    FcbNetConfig k1 = base_config();
    k1.fcb.dw_kernel = 1;
    const double delta = gflops(k3) - gflops(k1);
    CHECK(delta > 0.014);
    CHECK(delta < 0.017);
}

TEST_CASE("each refinement block adds its stride-4 conv cost") {
    FcbNetConfig r2 = base_config();
    FcbNetConfig r3 = base_config();
    r3.decoder.refine_depth = 3;
    const double delta = gflops(r3) - gflops(r2);
    CHECK(delta > 2.40);
    CHECK(delta < 2.45);
}

TEST_CASE("decoder width dominates the trainable compute") {
    FcbNetConfig d128 = base_config();
    FcbNetConfig d96 = base_config();
    d96.decoder.feature_dim = 96;
    const double delta = gflops(d128) - gflops(d96);
    CHECK(delta > 4.68);
    CHECK(delta < 4.74);
}

TEST_CASE("flop report bookkeeping") {
    FcbNetConfig cfg = base_config();
    FlopReport r = count_flops(cfg, 512, 512);
    int64_t sum = 0;
    for (const auto& [name, f] : r.by_submodule) {
        CHECK(f >= 0);
        sum += f;
    }
    CHECK(sum == r.total_flops);
    CHECK(r.convention == FlopConvention::conv_mac_only);
    CHECK(to_string(FlopConvention::conv_mac_only) == "conv_mac_only");
    CHECK(to_string(FlopConvention::conv_mac_plus_elementwise) == "conv_mac_plus_elementwise");

    // counting elementwise work can only add cost
    FlopReport ew = count_flops(cfg, 512, 512, FlopConvention::conv_mac_plus_elementwise);
    CHECK(ew.total_flops > r.total_flops);

    // fewer pixels, less work; the 480x360 field images are cheaper than
    // the square benchmark input
    CHECK(count_flops(cfg, 480, 360).total_flops < r.total_flops);

    // cost scales with the correction width
    FcbNetConfig r1 = cfg;
    r1.fcb.bottleneck_ratio = 1.0;
    CHECK(count_flops(r1, 512, 512).total_flops > r.total_flops);

    CHECK_THROWS(count_flops(cfg, 16, 512));
}

TEST_CASE("flop deltas and totals are resolution dependent") {
    FcbNetConfig on = base_config();
    FcbNetConfig off = base_config();
    off.use_fcb = false;
    // half the pixels, about half the delta
    const double d512 = gflops(on) - gflops(off);
    const double d256 = gflops(on, 256, 256) - gflops(off, 256, 256);
    CHECK(d256 == doctest::Approx(d512 / 4.0).epsilon(0.02));
}

TEST_CASE("latency benchmark contracts") {
    FcbNetConfig cfg;
    cfg.backbone.variant = "tiny";
    FcbNet model = build_fcbnet(cfg, 9);

    LatencyStats s = benchmark_latency(model, {1, 3, 64, 64}, 1, 4);
    CHECK(s.samples_s.size() == 4);
    CHECK(s.mean_s > 0.0);
    CHECK(s.median_s > 0.0);
    CHECK(s.p95_s >= s.median_s);
    double mn = 1e30, mx = 0.0;
    for (double v : s.samples_s) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    CHECK(s.mean_s >= mn);
    CHECK(s.mean_s <= mx);

    CHECK_THROWS(benchmark_latency(model, {1, 3, 64, 64}, 0, 0));
    CHECK_THROWS(benchmark_latency(model, {1, 4, 64, 64}, 0, 1));
}
