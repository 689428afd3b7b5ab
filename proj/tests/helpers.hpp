#pragma once

#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "fcbnet/rng.hpp"
#include "fcbnet/tensor.hpp"

namespace fcbnet::testing {

inline Tensor randn(Rng& rng, const std::vector<int64_t>& shape, float stddev = 1.0f) {
    Tensor t(shape);
    rng.fill_normal(t, 0.0f, stddev);
    return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.same_shape(b));
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(double(a.data()[i]) - double(b.data()[i])));
    return m;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (a.data()[i] != b.data()[i]) return false;
    return true;
}

// Scalar probe loss L = sum(coeffs * f()) so d L / d input can be checked
// by central differences against an analytic gradient.
inline double probe_loss(const Tensor& out, const Tensor& coeffs) {
    REQUIRE(out.same_shape(coeffs));
    double s = 0.0;
    for (int64_t i = 0; i < out.numel(); ++i)
        s += double(out.data()[i]) * double(coeffs.data()[i]);
    return s;
}

// Central-difference check of every element of `analytic` against the
// probe loss produced by `forward`, which must read `x` afresh each call.
inline void check_grad(Tensor& x, const Tensor& analytic,
                       const std::function<double()>& forward, float h = 1e-2f,
                       double rtol = 2e-2, double atol = 2e-3) {
    REQUIRE(x.same_shape(analytic));
    for (int64_t i = 0; i < x.numel(); ++i) {
        const float v = x.data()[i];
        x.data()[i] = v + h;
        const double up = forward();
        x.data()[i] = v - h;
        const double dn = forward();
        x.data()[i] = v;
        const double fd = (up - dn) / (2.0 * double(h));
        const double got = analytic.data()[i];
        const double tol = atol + rtol * std::max(std::abs(fd), std::abs(got));
        if (std::abs(fd - got) > tol) {
            CAPTURE(i);
            CAPTURE(fd);
            CAPTURE(got);
            CHECK(std::abs(fd - got) <= tol);
            return;
        }
    }
    CHECK(true);
}

}  // namespace fcbnet::testing
