#pragma once

#include <cstdint>

#include "fcbnet/kernels.hpp"
#include "fcbnet/params.hpp"
#include "fcbnet/rng.hpp"
#include "fcbnet/tensor.hpp"

namespace fcbnet {

struct FcbConfig {
    float alpha_init = 0.07f;
    double bottleneck_ratio = 2.0;
    int c_min = 64;
    int dw_kernel = 3;
    int preferred_groups = 32;
};

// C' = max(C_min, floor(C / r))
int bottleneck_width(int channels, double ratio, int c_min);

// Largest g <= preferred dividing channels; always >= 1.
int select_groups(int channels, int preferred);

// 2*C*C' + k^2*C' + 4*C' + 1, without building anything.
int64_t fcb_param_count(int channels, const FcbConfig& config);

// Intermediates retained by a training-mode forward for the backward pass.
struct FcbCache {
    Tensor x, z1, a1, g1, z2, a2, g2, f;
    NormStats s1, s2;
};

// Feature correction block: y = x + alpha * f(x) with
// f = pw2(gelu(gn2(dw(gelu(gn1(pw1(x))))))), all convolutions bias-free.
class Fcb {
public:
    Fcb(int channels, const FcbConfig& config, Rng& rng);

    Tensor forward(const Tensor& x, FcbCache* cache = nullptr) const;

    // Accumulates parameter gradients and returns dLoss/dx.
    Tensor backward(const Tensor& gy, const FcbCache& cache);

    void collect_params(ParamList& out, const std::string& prefix);

    int channels() const { return channels_; }
    int bottleneck() const { return bottleneck_; }
    int groups() const { return groups_; }
    int kernel() const { return kernel_; }
    float alpha() const { return params_.alpha[0]; }
    void set_alpha(float a) { params_.alpha[0] = a; }

private:
    struct State {
        Tensor pw1, gn1_gamma, gn1_beta, dw, gn2_gamma, gn2_beta, pw2, alpha;
    };

    int channels_, bottleneck_, groups_, kernel_;
    float eps_ = 1e-5f;
    State params_, grads_;
};

}  // namespace fcbnet
