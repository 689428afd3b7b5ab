#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "fcbnet/tensor.hpp"

namespace fcbnet {

// All stochastic state in the library flows through one of these, seeded
// explicitly, so that builds and training runs are reproducible.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    std::mt19937_64& engine() { return engine_; }

    float normal(float mean, float stddev) {
        std::normal_distribution<float> d(mean, stddev);
        return d(engine_);
    }

    float uniform(float lo, float hi) {
        std::uniform_real_distribution<float> d(lo, hi);
        return d(engine_);
    }

    int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive bounds
        std::uniform_int_distribution<int64_t> d(lo, hi);
        return d(engine_);
    }

    void fill_normal(Tensor& t, float mean, float stddev) {
        std::normal_distribution<float> d(mean, stddev);
        float* p = t.data();
        for (int64_t i = 0; i < t.numel(); ++i) p[i] = d(engine_);
    }

    // He-style init: std = sqrt(2 / fan_in).
    void fill_fan_in(Tensor& t, int64_t fan_in) {
        fill_normal(t, 0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
    }

    // Fisher-Yates permutation of [0, n).
    std::vector<size_t> permutation(size_t n) {
        std::vector<size_t> idx(n);
        for (size_t i = 0; i < n; ++i) idx[i] = i;
        for (size_t i = n; i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
            std::swap(idx[i - 1], idx[j]);
        }
        return idx;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace fcbnet
