#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "fcbnet/fcb.hpp"
#include "helpers.hpp"

using namespace fcbnet;
using namespace fcbnet::testing;

namespace {

std::map<std::string, Tensor*> named(Fcb& block) {
    ParamList list;
    block.collect_params(list, "fcb");
    std::map<std::string, Tensor*> out;
    for (auto& p : list) out[p.name] = p.value;
    return out;
}

}  // namespace

TEST_CASE("bottleneck width is floor(C/r) clamped below") {
    // clamp active: 128/2 = 64 = floor
    CHECK(bottleneck_width(128, 2.0, 64) == 64);
    // clamp overrides a smaller quotient
    CHECK(bottleneck_width(128, 5.0, 64) == 64);
    CHECK(bottleneck_width(96, 2.0, 64) == 64);
    // wide stages escape the clamp
    CHECK(bottleneck_width(1024, 3.0, 64) == 341);
    CHECK(bottleneck_width(768, 2.0, 64) == 384);
    // exact division
    CHECK(bottleneck_width(256, 4.0, 32) == 64);

    // brute-force oracle across a grid
    for (int c : {8, 64, 96, 100, 341, 512}) {
        for (double r : {1.0, 1.5, 2.0, 3.0, 8.0}) {
            const int expect = std::max(16, int(std::floor(double(c) / r)));
            CHECK(bottleneck_width(c, r, 16) == expect);
        }
    }
}

TEST_CASE("bottleneck width shrinks as the ratio grows") {
    int prev = 1 << 30;
    for (double r : {1.0, 1.25, 2.0, 3.0, 4.0, 16.0}) {
        const int w = bottleneck_width(512, r, 16);
        CHECK(w <= prev);
        prev = w;
    }
}

TEST_CASE("group selection picks the largest divisor within the cap") {
    // divisor-enumeration oracle
    auto oracle = [](int channels, int preferred) {
        int best = 1;
        for (int g = 1; g <= std::min(channels, preferred); ++g)
            if (channels % g == 0) best = g;
        return best;
    };
    for (int c : {1, 2, 7, 17, 32, 48, 64, 85, 96, 192, 341, 384})
        for (int pref : {1, 8, 16, 32})
            CHECK(select_groups(c, pref) == oracle(c, pref));

    CHECK(select_groups(64, 32) == 32);
    CHECK(select_groups(96, 32) == 32);
    CHECK(select_groups(85, 32) == 17);   // 85 = 5*17
    CHECK(select_groups(341, 32) == 31);  // 341 = 11*31
    CHECK(select_groups(7, 32) == 7);
    CHECK(select_groups(1, 32) == 1);
}

TEST_CASE("parameter count matches the built block") {
    FcbConfig cfg;  // ratio 2, c_min 64, k 3
    // 2*C*C' + k^2*C' + 4*C' + 1 summed over the four stage widths
    const std::array<int, 4> base = {128, 256, 512, 1024};
    int64_t total = 0;
    for (int c : base) total += fcb_param_count(c, cfg);
    CHECK(total == 1405124);

    // doubling the ratio shrinks only the wide stages (narrow ones clamp)
    FcbConfig r4 = cfg;
    r4.bottleneck_ratio = 4.0;
    int64_t total_r4 = 0;
    for (int c : base) total_r4 += fcb_param_count(c, r4);
    CHECK(total_r4 < total);

    // a built block owns exactly the counted parameters
    Rng rng(3);
    for (int c : base) {
        Fcb block(c, cfg, rng);
        ParamList list;
        block.collect_params(list, "fcb");
        CHECK(param_count(list) == fcb_param_count(c, cfg));
    }
}

TEST_CASE("parameter count for ablation settings") {
    const std::array<int, 4> base = {128, 256, 512, 1024};
    FcbConfig r1;
    r1.bottleneck_ratio = 1.0;
    int64_t total_r1 = 0;
    for (int c : base) total_r1 += fcb_param_count(c, r1);
    CHECK(total_r1 == 2810244);

    FcbConfig k7;
    k7.dw_kernel = 7;
    int64_t total_k3 = 0, total_k7 = 0;
    for (int c : base) {
        FcbConfig k3;
        total_k3 += fcb_param_count(c, k3);
        total_k7 += fcb_param_count(c, k7);
    }
    // (49 - 9) * sum(C') = 40 * 960
    CHECK(total_k7 - total_k3 == 38400);
}

TEST_CASE("forward matches a straight-line recomputation") {
    FcbConfig cfg;
    cfg.c_min = 4;
    cfg.alpha_init = 0.3f;
    Rng rng(5);
    Fcb block(8, cfg, rng);
    CHECK(block.bottleneck() == 4);
    CHECK(block.groups() == 4);

    auto params = named(block);
    // the projection back to C starts at zero; give it signal so the
    // recomputation exercises every stage
    Rng wrng(6);
    wrng.fill_normal(*params.at("fcb.pw2"), 0.0f, 0.4f);
    wrng.fill_normal(*params.at("fcb.gn1.beta"), 0.0f, 0.2f);
    wrng.fill_normal(*params.at("fcb.gn2.beta"), 0.0f, 0.2f);

    Tensor x = randn(wrng, {2, 8, 5, 5});
    Tensor y = block.forward(x);

    const Tensor& pw1 = *params.at("fcb.pw1");
    const Tensor& pw2 = *params.at("fcb.pw2");
    const Tensor& dw = *params.at("fcb.dw");
    Tensor z1 = serial::pointwise_conv(x, pw1);
    Tensor a1 = serial::group_norm(z1, *params.at("fcb.gn1.gamma"), *params.at("fcb.gn1.beta"), 4,
                                   1e-5f, nullptr);
    Tensor g1 = serial::gelu(a1);
    Tensor z2 = serial::depthwise_conv_same(g1, dw);
    Tensor a2 = serial::group_norm(z2, *params.at("fcb.gn2.gamma"), *params.at("fcb.gn2.beta"), 4,
                                   1e-5f, nullptr);
    Tensor g2 = serial::gelu(a2);
    Tensor f = serial::pointwise_conv(g2, pw2);
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double expect = double(x.data()[i]) + 0.3 * double(f.data()[i]);
        CHECK(double(y.data()[i]) ==
              doctest::Approx(expect).epsilon(1e-5).scale(std::max(1.0, std::abs(expect))));
    }
}

TEST_CASE("fresh blocks start as a near-identity and alpha 0 is exact identity") {
    FcbConfig cfg;
    cfg.c_min = 8;
    Rng rng(7);
    Fcb block(16, cfg, rng);
    Tensor x = randn(rng, {1, 16, 6, 6});

    // pw2 zero-init: the correction branch is exactly zero at build time
    Tensor y = block.forward(x);
    CHECK(bit_equal(y, x));

    // alpha 0 short-circuits regardless of branch weights
    auto params = named(block);
    rng.fill_normal(*params.at("fcb.pw2"), 0.0f, 1.0f);
    block.set_alpha(0.0f);
    CHECK(bit_equal(block.forward(x), x));
    block.set_alpha(0.07f);
    CHECK(!bit_equal(block.forward(x), x));
}

TEST_CASE("every parameter gradient agrees with finite differences") {
    FcbConfig cfg;
    cfg.c_min = 4;
    cfg.alpha_init = 0.2f;
    Rng rng(9);
    Fcb block(8, cfg, rng);
    auto params = named(block);
    Rng wrng(10);
    wrng.fill_normal(*params.at("fcb.pw2"), 0.0f, 0.4f);

    Tensor x = randn(wrng, {2, 8, 4, 4});
    Tensor coeffs = randn(wrng, {2, 8, 4, 4}, 0.5f);

    auto loss = [&] { return probe_loss(block.forward(x), coeffs); };

    ParamList list;
    block.collect_params(list, "fcb");
    zero_grads(list);
    FcbCache cache;
    block.forward(x, &cache);
    Tensor gx = block.backward(coeffs, cache);

    check_grad(x, gx, loss, 1e-2f, 3e-2, 3e-3);
    for (auto& p : list) {
        INFO(p.name);
        check_grad(*p.value, *p.grad, loss, 1e-2f, 3e-2, 3e-3);
    }
}

TEST_CASE("alpha gradient is the inner product with the branch output") {
    FcbConfig cfg;
    cfg.c_min = 4;
    Rng rng(11);
    Fcb block(8, cfg, rng);
    auto params = named(block);
    rng.fill_normal(*params.at("fcb.pw2"), 0.0f, 0.5f);

    Tensor x = randn(rng, {1, 8, 4, 4});
    Tensor coeffs = randn(rng, {1, 8, 4, 4});

    ParamList list;
    block.collect_params(list, "fcb");
    zero_grads(list);
    FcbCache cache;
    block.forward(x, &cache);
    block.backward(coeffs, cache);

    double expect = 0.0;
    for (int64_t i = 0; i < cache.f.numel(); ++i)
        expect += double(coeffs.data()[i]) * double(cache.f.data()[i]);
    double got = 0.0;
    for (auto& p : list)
        if (p.name == "fcb.alpha") got = p.grad->data()[0];
    CHECK(got == doctest::Approx(expect).epsilon(1e-4));
}
