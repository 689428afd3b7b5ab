#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <map>

#include "fcbnet/config.hpp"
#include "fcbnet/training.hpp"
#include "helpers.hpp"

using namespace fcbnet;
using namespace fcbnet::testing;
namespace fs = std::filesystem;

namespace {

FcbNetConfig small_model() {
    FcbNetConfig cfg;
    cfg.backbone.variant = "tiny";
    cfg.decoder.feature_dim = 16;
    cfg.decoder.refine_depth = 1;
    cfg.decoder.dropout_rate = 0.0f;
    return cfg;
}

// blob-vs-background toy set: class 1 inside a bright square
InMemoryDataset blob_dataset(int n, int64_t hw, uint64_t seed) {
    Rng rng(seed);
    std::vector<TrainSample> samples;
    for (int i = 0; i < n; ++i) {
        TrainSample s;
        s.image = randn(rng, {3, hw, hw}, 0.3f);
        s.target.assign(size_t(hw * hw), 0);
        const int64_t y0 = rng.uniform_int(0, hw / 2), x0 = rng.uniform_int(0, hw / 2);
        for (int64_t y = y0; y < y0 + hw / 4; ++y)
            for (int64_t x = x0; x < x0 + hw / 4; ++x) {
                for (int64_t c = 0; c < 3; ++c) s.image.data()[(c * hw + y) * hw + x] += 2.5f;
                s.target[size_t(y * hw + x)] = 1;
            }
        samples.push_back(std::move(s));
    }
    return InMemoryDataset(std::move(samples));
}

std::string tmp_dir(const std::string& leaf) {
    auto p = fs::temp_directory_path() / leaf;
    fs::create_directories(p);
    return p.string();
}

std::map<std::string, Tensor> snapshot(FcbNet& m) {
    std::map<std::string, Tensor> out;
    for (auto& p : m.trainable_params()) out[p.name] = *p.value;
    return out;
}

}  // namespace

TEST_CASE("one-cycle schedule boundary values") {
    TrainConfig cfg;  // max 1e-3, div 25, final_div 1e4, pct_start 0.3
    const int64_t total = 100;

    CHECK(onecycle_lr(0, total, cfg) == doctest::Approx(1e-3 / 25.0).epsilon(1e-9));
    CHECK(onecycle_lr(30, total, cfg) == doctest::Approx(1e-3).epsilon(1e-9));
    CHECK(onecycle_lr(99, total, cfg) == doctest::Approx(1e-3 / 1e4).epsilon(1e-6));

    // single rise, single fall
    for (int64_t s = 1; s <= 30; ++s) CHECK(onecycle_lr(s, total, cfg) >= onecycle_lr(s - 1, total, cfg));
    for (int64_t s = 31; s < 100; ++s) CHECK(onecycle_lr(s, total, cfg) <= onecycle_lr(s - 1, total, cfg));

    // peak lands at ceil(pct_start * total)
    TrainConfig odd = cfg;
    odd.pct_start = 0.25;
    const int64_t peak = int64_t(std::ceil(0.25 * 10));
    CHECK(onecycle_lr(peak, 10, odd) == doctest::Approx(1e-3).epsilon(1e-9));

    // degenerate one-step run stays finite
    CHECK(onecycle_lr(0, 1, cfg) > 0.0);
}

TEST_CASE("adamw applies bias-corrected moments and decoupled decay") {
    // single parameter, hand-stepped oracle
    Tensor w = Tensor::full({1}, 1.0f);
    Tensor g = Tensor::full({1}, 0.5f);
    ParamList list;
    list.push_back({"w", &w, &g});

    TrainConfig cfg;
    cfg.weight_decay = 0.1;
    cfg.beta1 = 0.9;
    cfg.beta2 = 0.999;
    AdamW opt(list, cfg);

    const double lr = 0.01;
    double m = 0.0, v = 0.0, x = 1.0;
    for (int t = 1; t <= 3; ++t) {
        m = 0.9 * m + 0.1 * 0.5;
        v = 0.999 * v + 0.001 * 0.25;
        const double mh = m / (1.0 - std::pow(0.9, t));
        const double vh = v / (1.0 - std::pow(0.999, t));
        x -= lr * (mh / (std::sqrt(vh) + 1e-8) + 0.1 * x);
        opt.step(lr);
        CHECK(double(w.data()[0]) == doctest::Approx(x).epsilon(1e-6));
    }
    CHECK(opt.t() == 3);
    opt.zero_grads();
    CHECK(g.data()[0] == 0.0f);
}

TEST_CASE("ten steps move every trainable submodule and nothing else") {
    FcbNetConfig mc = small_model();
    FcbNet model = build_fcbnet(mc, 3);

    // the frozen path: remember a backbone tensor
    Tensor stem_before = *model.backbone().named_tensors().at("stem.conv.weight");

    auto before = snapshot(model);
    InMemoryDataset data = blob_dataset(4, 32, 50);
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 2;
    tc.max_lr = 3e-3;
    tc.seed = 5;
    FitOptions opts;
    opts.max_steps = 10;
    fit(model, data, nullptr, tc, opts);

    auto after = snapshot(model);
    std::map<std::string, bool> moved;
    for (auto& [name, t] : after) {
        const std::string sub = name.substr(0, name.find('.', name.find('.') + 1));
        moved[sub] = moved[sub] || !bit_equal(t, before.at(name));
    }
    // every fcb.N and decoder.* bucket saw an update
    for (const auto& [sub, did] : moved) {
        INFO(sub);
        CHECK(did);
    }
    CHECK(moved.size() >= 5);  // fcb.0..3 + decoder buckets

    Tensor stem_after = *model.backbone().named_tensors().at("stem.conv.weight");
    CHECK(bit_equal(stem_before, stem_after));
}

TEST_CASE("fixed seeds reproduce the first-epoch loss exactly") {
    InMemoryDataset data = blob_dataset(6, 32, 51);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 3;
    tc.seed = 9;

    FcbNet m1 = build_fcbnet(small_model(), 7);
    FcbNet m2 = build_fcbnet(small_model(), 7);
    TrainHistory h1 = fit(m1, data, nullptr, tc);
    TrainHistory h2 = fit(m2, data, nullptr, tc);

    REQUIRE(h1.epochs.size() == 2);
    CHECK(h1.epochs[0].mean_loss == h2.epochs[0].mean_loss);
    CHECK(h1.epochs[1].mean_loss == h2.epochs[1].mean_loss);

    // a different shuffle/dropout seed moves the loss
    TrainConfig other = tc;
    other.seed = 10;
    FcbNet m3 = build_fcbnet(small_model(), 7);
    TrainHistory h3 = fit(m3, data, nullptr, other);
    CHECK(h3.epochs[0].mean_loss != h1.epochs[0].mean_loss);
}

TEST_CASE("cached frozen features train identically to the full forward") {
    InMemoryDataset data = blob_dataset(4, 32, 52);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 2;
    tc.seed = 4;

    tc.cache_features = true;
    FcbNet a = build_fcbnet(small_model(), 13);
    TrainHistory ha = fit(a, data, nullptr, tc);

    tc.cache_features = false;
    FcbNet b = build_fcbnet(small_model(), 13);
    TrainHistory hb = fit(b, data, nullptr, tc);

    REQUIRE(ha.epochs.size() == hb.epochs.size());
    for (size_t e = 0; e < ha.epochs.size(); ++e)
        CHECK(ha.epochs[e].mean_loss == doctest::Approx(hb.epochs[e].mean_loss).epsilon(1e-12));
}

TEST_CASE("fit demands a frozen backbone and a usable dataset") {
    FcbNetConfig unfrozen = small_model();
    unfrozen.backbone.frozen = false;
    Rng rng(1);
    FcbNet bad(unfrozen, rng);
    InMemoryDataset data = blob_dataset(2, 32, 53);
    TrainConfig tc;
    CHECK_THROWS(fit(bad, data, nullptr, tc));

    FcbNet ok = build_fcbnet(small_model(), 1);
    InMemoryDataset empty{std::vector<TrainSample>{}};
    CHECK_THROWS(fit(ok, empty, nullptr, tc));
    TrainConfig zero_epochs;
    zero_epochs.epochs = 0;
    CHECK_THROWS(fit(ok, data, nullptr, zero_epochs));
}

TEST_CASE("checkpoints restore weights, buffers, optimizer state and step") {
    FcbNetConfig mc = small_model();
    FcbNet model = build_fcbnet(mc, 21);
    InMemoryDataset data = blob_dataset(4, 32, 54);
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 2;
    tc.seed = 2;
    fit(model, data, nullptr, tc);  // move weights and BN stats off init

    AdamW opt(model.trainable_params(), tc);
    // hand the optimizer some non-trivial state
    Rng grng(22);
    for (auto& p : model.trainable_params()) grng.fill_normal(*p.grad, 0.0f, 0.01f);
    opt.step(1e-3);
    opt.zero_grads();

    const std::string dir = tmp_dir("fcbnet_ckpt_test");
    const std::string path = dir + "/state.safetensors";
    save_checkpoint(path, model, &opt, 17);

    Rng xrng(23);
    Tensor x({1, 3, 32, 32});
    xrng.fill_normal(x, 0.0f, 1.0f);
    Tensor want = model.forward(x);

    FcbNet restored = build_fcbnet(mc, 99);  // different init, same architecture
    AdamW ropt(restored.trainable_params(), tc);
    const int64_t step = load_checkpoint(path, restored, &ropt);
    CHECK(step == 17);
    CHECK(ropt.t() == opt.t());
    CHECK(bit_equal(restored.forward(x), want));

    const auto& ps = opt.params();
    for (size_t i = 0; i < ps.size(); ++i) {
        CHECK(bit_equal(ropt.exp_avg(i), opt.exp_avg(i)));
        CHECK(bit_equal(ropt.exp_avg_sq(i), opt.exp_avg_sq(i)));
    }

    SUBCASE("one more identical step stays in lockstep") {
        Rng g2(31);
        for (auto& p : model.trainable_params()) g2.fill_normal(*p.grad, 0.0f, 0.01f);
        Rng g3(31);
        for (auto& p : restored.trainable_params()) g3.fill_normal(*p.grad, 0.0f, 0.01f);
        opt.step(5e-4);
        ropt.step(5e-4);
        CHECK(bit_equal(restored.forward(x), model.forward(x)));
    }

    SUBCASE("a different architecture refuses the file") {
        FcbNetConfig other = mc;
        other.decoder.feature_dim = 24;
        FcbNet wrong = build_fcbnet(other, 1);
        CHECK_THROWS_WITH_AS(load_checkpoint(path, wrong, nullptr),
                             doctest::Contains("fingerprint"), std::runtime_error);
    }

    fs::remove_all(dir);
}

TEST_CASE("fingerprints hash the architecture, not the run settings") {
    RunConfig rc;
    rc.model = small_model();
    const uint64_t base = model_fingerprint(rc.model);

    RunConfig same = rc;
    same.train.max_lr = 123.0;  // training settings do not participate
    CHECK(model_fingerprint(same.model) == base);

    FcbNetConfig widened = rc.model;
    widened.decoder.feature_dim = 24;
    CHECK(model_fingerprint(widened) != base);
    FcbNetConfig reclassed = rc.model;
    reclassed.num_classes = 5;
    CHECK(model_fingerprint(reclassed) != base);
    FcbNetConfig rebackboned = rc.model;
    rebackboned.backbone.variant = "small";
    CHECK(model_fingerprint(rebackboned) != base);
}

TEST_CASE("run configs parse strictly and round-trip") {
    const std::string text = R"json({
      "model": {
        "backbone": {"variant": "tiny", "in_channels": 4},
        "fcb": {"alpha_init": 0.05, "kernel": 5},
        "decoder": {"feature_dim": 32, "refine_depth": 1, "dropout": 0.2},
        "num_classes": 3
      },
      "train": {"max_lr": 0.002, "epochs": 7, "batch_size": 4, "seed": 11},
      "data": {"manifest": "m.jsonl", "out_dir": "runs/x"}
    })json";
    RunConfig rc = parse_run_config(text);
    CHECK(rc.model.backbone.variant == "tiny");
    CHECK(rc.model.backbone.in_channels == 4);
    CHECK(rc.model.fcb.alpha_init == doctest::Approx(0.05f));
    CHECK(rc.model.fcb.dw_kernel == 5);
    CHECK(rc.model.decoder.feature_dim == 32);
    CHECK(rc.model.decoder.dropout_rate == doctest::Approx(0.2f));
    CHECK(rc.model.num_classes == 3);
    CHECK(rc.train.max_lr == doctest::Approx(0.002));
    CHECK(rc.train.epochs == 7);
    CHECK(rc.train.seed == 11);
    CHECK(rc.manifest == "m.jsonl");
    CHECK(rc.out_dir == "runs/x");
    // unspecified fields keep their defaults
    CHECK(rc.model.fcb.bottleneck_ratio == doctest::Approx(2.0));
    CHECK(rc.train.div_factor == doctest::Approx(25.0));

    RunConfig back = parse_run_config(run_config_json(rc));
    CHECK(model_fingerprint(back.model) == model_fingerprint(rc.model));
    CHECK(back.train.epochs == rc.train.epochs);

    CHECK_THROWS_WITH_AS(parse_run_config(R"({"model": {"fcb": {"alpha": 1}}})"),
                         doctest::Contains("alpha"), std::invalid_argument);
    CHECK_THROWS(parse_run_config(R"({"mode": {}})"));
}

TEST_CASE("training on the blobs reaches a useful mask quickly") {
    FcbNetConfig mc = small_model();
    FcbNet model = build_fcbnet(mc, 41);
    InMemoryDataset data = blob_dataset(6, 32, 55);

    TrainConfig tc;
    tc.epochs = 12;
    tc.batch_size = 3;
    tc.max_lr = 4e-3;
    tc.seed = 6;

    TrainHistory h = fit(model, data, &data, tc);
    REQUIRE(!h.epochs.empty());
    CHECK(h.epochs.front().val_miou >= 0.0);
    CHECK(h.best_val_miou > 0.6);

    EvalResult r = evaluate(model, data);
    CHECK(r.iou.miou > 0.55);
    CHECK(r.pixels == 6 * 32 * 32);
    CHECK(r.mean_loss < 0.5);
    CHECK(r.latency.samples_s.size() == 6);
}

TEST_CASE("validation tracking writes the best checkpoint") {
    FcbNetConfig mc = small_model();
    FcbNet model = build_fcbnet(mc, 61);
    InMemoryDataset data = blob_dataset(4, 32, 56);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 2;
    tc.max_lr = 2e-3;
    tc.seed = 8;
    FitOptions opts;
    opts.checkpoint_dir = tmp_dir("fcbnet_fit_ckpt");

    TrainHistory h = fit(model, data, &data, tc, opts);
    CHECK(!h.best_checkpoint.empty());
    CHECK(fs::exists(h.best_checkpoint));
    CHECK(fs::exists(fs::path(opts.checkpoint_dir) / "last.safetensors"));

    FcbNet restored = build_fcbnet(mc, 62);
    load_checkpoint(h.best_checkpoint, restored, nullptr);
    fs::remove_all(opts.checkpoint_dir);
}
