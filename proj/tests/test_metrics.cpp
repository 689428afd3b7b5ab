#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "fcbnet/metrics.hpp"

using namespace fcbnet;

namespace {

std::vector<int32_t> random_labels(std::mt19937_64& gen, size_t n, int k) {
    std::uniform_int_distribution<int32_t> d(0, k - 1);
    std::vector<int32_t> out(n);
    for (auto& v : out) v = d(gen);
    return out;
}

// pixel-set IoU computed without the confusion matrix
std::vector<double> set_iou(const std::vector<int32_t>& pred, const std::vector<int32_t>& target,
                            int k) {
    std::vector<double> out(k);
    for (int c = 0; c < k; ++c) {
        int64_t inter = 0, uni = 0;
        for (size_t i = 0; i < pred.size(); ++i) {
            const bool p = pred[i] == c, t = target[i] == c;
            inter += p && t;
            uni += p || t;
        }
        out[c] = uni == 0 ? 1.0 : double(inter) / double(uni);
    }
    return out;
}

}  // namespace

TEST_CASE("confusion-matrix IoU equals the set formulation") {
    std::mt19937_64 gen(404);
    for (int trial = 0; trial < 100; ++trial) {
        const int k = 2 + int(gen() % 4);
        auto target = random_labels(gen, 16 * 16, k);
        auto pred = random_labels(gen, 16 * 16, k);
        ConfusionMatrix cm(k);
        cm.accumulate(pred, target);
        IouReport r = iou_scores(cm);
        const auto expect = set_iou(pred, target, k);
        REQUIRE(r.per_class.size() == size_t(k));
        double mean = 0.0;
        for (int c = 0; c < k; ++c) {
            CHECK(std::abs(r.per_class[c] - expect[c]) < 1e-12);
            mean += expect[c];
        }
        CHECK(std::abs(r.miou - mean / k) < 1e-12);
    }
}

TEST_CASE("a worked example") {
    // five pixels: one true positive per class, one missed pixel each way
    ConfusionMatrix cm(2);
    cm.accumulate({0, 1, 0, 0, 1}, {0, 1, 1, 1, 0});
    CHECK(cm.count(0, 0) == 1);
    CHECK(cm.count(0, 1) == 1);
    CHECK(cm.count(1, 0) == 2);
    CHECK(cm.count(1, 1) == 1);
    CHECK(cm.total() == 5);

    IouReport r = iou_scores(cm);
    CHECK(r.per_class[0] == doctest::Approx(0.25));
    CHECK(r.per_class[1] == doctest::Approx(0.25));
    CHECK(r.miou == doctest::Approx(0.25));
}

TEST_CASE("accumulation over batches equals one pass over everything") {
    std::mt19937_64 gen(17);
    auto target = random_labels(gen, 1000, 3);
    auto pred = random_labels(gen, 1000, 3);

    ConfusionMatrix whole(3);
    whole.accumulate(pred, target);

    ConfusionMatrix parts(3);
    for (size_t start = 0; start < 1000; start += 137) {
        const size_t end = std::min<size_t>(start + 137, 1000);
        parts.accumulate({pred.begin() + start, pred.begin() + end},
                         {target.begin() + start, target.begin() + end});
    }
    for (int t = 0; t < 3; ++t)
        for (int p = 0; p < 3; ++p) CHECK(parts.count(t, p) == whole.count(t, p));

    ConfusionMatrix merged(3);
    ConfusionMatrix other(3);
    other.accumulate(pred, target);
    merged.merge(other);
    merged.merge(other);
    CHECK(merged.total() == 2 * whole.total());
    CHECK(iou_scores(merged).miou == doctest::Approx(iou_scores(whole).miou));
}

TEST_CASE("relabeling classes permutes the scores but not the mean") {
    std::mt19937_64 gen(23);
    auto target = random_labels(gen, 512, 3);
    auto pred = random_labels(gen, 512, 3);

    ConfusionMatrix cm(3);
    cm.accumulate(pred, target);
    IouReport r = iou_scores(cm);

    const int32_t perm[3] = {2, 0, 1};
    auto remap = [&](std::vector<int32_t> v) {
        for (auto& x : v) x = perm[x];
        return v;
    };
    ConfusionMatrix cm2(3);
    cm2.accumulate(remap(pred), remap(target));
    IouReport r2 = iou_scores(cm2);

    CHECK(r2.miou == doctest::Approx(r.miou).epsilon(1e-12));
    for (int c = 0; c < 3; ++c)
        CHECK(r2.per_class[perm[c]] == doctest::Approx(r.per_class[c]).epsilon(1e-12));
}

TEST_CASE("classes missing from target and prediction score one and are flagged") {
    ConfusionMatrix cm(3);
    cm.accumulate({0, 1, 1, 0}, {0, 1, 0, 0});
    IouReport r = iou_scores(cm);
    CHECK(r.per_class[2] == 1.0);
    CHECK(r.absent[2]);
    CHECK(!r.absent[0]);
    CHECK(!r.absent[1]);
    // the flagged score still enters the unweighted mean
    CHECK(r.miou == doctest::Approx((r.per_class[0] + r.per_class[1] + 1.0) / 3.0));
}

TEST_CASE("defensive checks") {
    CHECK_THROWS(ConfusionMatrix(1));
    ConfusionMatrix cm(2);
    CHECK_THROWS(cm.accumulate({0, 1}, {0}));
    CHECK_THROWS(cm.accumulate({0, 2}, {0, 1}));
    CHECK_THROWS(cm.accumulate({0, -1}, {0, 1}));
    ConfusionMatrix other(3);
    CHECK_THROWS(cm.merge(other));
}
