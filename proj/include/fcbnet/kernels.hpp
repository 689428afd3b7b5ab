#pragma once

#include <cstdint>
#include <random>

#include "fcbnet/tensor.hpp"

// Dense NCHW compute kernels. The functions in fcbnet::kern are the
// production path and parallelize independent outputs with OpenMP; the
// ones in fcbnet::serial are plain-loop reference implementations kept
// for correctness tests and the kernel benchmark. Both namespaces keep
// the same accumulation order per output element, so results match
// bit-for-bit at any thread count.
//
// Backward kernels accumulate (+=) into the supplied weight-gradient
// tensors and return the input gradient; callers zero grads per step.

namespace fcbnet {

// Saved normalization statistics, one (mean, invstd) pair per reduction
// group, consumed by the matching backward kernel.
struct NormStats {
    Tensor mean;
    Tensor invstd;
};

namespace kern {

// -- convolutions -----------------------------------------------------------

// Generic strided valid convolution (no padding unless pad > 0, zero fill).
// x: (B,Ci,H,W), w: (Co,Ci,kh,kw), bias: (Co) or null.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad);

// 1x1 convolution. w: (Co,Ci), bias optional (Co).
Tensor pointwise_conv(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr);
Tensor pointwise_conv_backward(const Tensor& gy, const Tensor& x, const Tensor& w, Tensor& gw,
                               Tensor* gbias, bool need_gx);

// 3x3 stride-1 convolution with same padding, bias-free. w: (Co,Ci,3,3).
Tensor conv3x3_same(const Tensor& x, const Tensor& w);
Tensor conv3x3_same_backward(const Tensor& gy, const Tensor& x, const Tensor& w, Tensor& gw,
                             bool need_gx);

// Depthwise k x k stride-1 convolution with same padding, odd k.
// w: (C,1,k,k), bias optional (C).
Tensor depthwise_conv_same(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr);
Tensor depthwise_conv_same_backward(const Tensor& gy, const Tensor& x, const Tensor& w, Tensor& gw,
                                    bool need_gx);

// -- resampling -------------------------------------------------------------

// Bilinear resize without corner alignment: src = (dst + 0.5) * in/out - 0.5.
Tensor bilinear_resize(const Tensor& x, int64_t out_h, int64_t out_w);
Tensor bilinear_resize_backward(const Tensor& gy, int64_t in_h, int64_t in_w);

// -- activations ------------------------------------------------------------

// Exact erf-based GELU.
Tensor gelu(const Tensor& x);
Tensor gelu_backward(const Tensor& gy, const Tensor& x);

// -- normalization ----------------------------------------------------------

// Group normalization over (C/groups, H, W) slices per sample.
// gamma/beta: (C). Requires groups to divide C.
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups, float eps,
                  NormStats* save);
Tensor group_norm_backward(const Tensor& gy, const Tensor& x, const Tensor& gamma, int groups,
                           const NormStats& saved, Tensor& ggamma, Tensor& gbeta);

// Per-pixel normalization across channels (layer norm on NCHW maps).
Tensor layer_norm_chan(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps);

// Batch normalization over (B, H, W) per channel. Training mode computes
// batch statistics, updates running stats in place (unbiased variance),
// and saves (mean, invstd) for backward. Eval mode uses running stats.
Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        Tensor& running_mean, Tensor& running_var, float momentum, float eps,
                        NormStats* save);
Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const Tensor& running_mean, const Tensor& running_var, float eps);
Tensor batch_norm_backward(const Tensor& gy, const Tensor& x, const Tensor& gamma,
                           const NormStats& saved, Tensor& ggamma, Tensor& gbeta);

// -- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);

// y = x + alpha * f. For alpha == 0 this is an exact copy of x.
Tensor scaled_residual(const Tensor& x, const Tensor& f, float alpha);

// Inverted dropout; the returned mask holds 0 or 1/(1-rate) and is reused
// by dropout_backward. Mask generation is serial for determinism.
Tensor dropout(const Tensor& x, float rate, std::mt19937_64& rng, Tensor& mask);
Tensor dropout_backward(const Tensor& gy, const Tensor& mask);

// -- loss / prediction ------------------------------------------------------

// Mean softmax cross-entropy over all pixels. logits: (B,K,H,W),
// target: B*H*W labels in [0,K). Optional per-class weights (size K)
// switch to a weighted mean. When dlogits is non-null it receives the
// gradient of the returned loss.
double softmax_cross_entropy(const Tensor& logits, const std::vector<int32_t>& target,
                             Tensor* dlogits, const std::vector<float>* class_weights = nullptr);

// Per-pixel argmax over channels; ties resolve to the lowest class index.
std::vector<int32_t> argmax_channels(const Tensor& logits);

}  // namespace kern

namespace serial {

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad);
Tensor pointwise_conv(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr);
Tensor pointwise_conv_backward(const Tensor& gy, const Tensor& x, const Tensor& w, Tensor& gw,
                               Tensor* gbias, bool need_gx);
Tensor conv3x3_same(const Tensor& x, const Tensor& w);
Tensor conv3x3_same_backward(const Tensor& gy, const Tensor& x, const Tensor& w, Tensor& gw,
                             bool need_gx);
Tensor depthwise_conv_same(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr);
Tensor depthwise_conv_same_backward(const Tensor& gy, const Tensor& x, const Tensor& w, Tensor& gw,
                                    bool need_gx);
Tensor bilinear_resize(const Tensor& x, int64_t out_h, int64_t out_w);
Tensor bilinear_resize_backward(const Tensor& gy, int64_t in_h, int64_t in_w);
Tensor gelu(const Tensor& x);
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups, float eps,
                  NormStats* save);
Tensor layer_norm_chan(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps);

}  // namespace serial

}  // namespace fcbnet
