#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "fcbnet/backbone.hpp"
#include "fcbnet/kernels.hpp"
#include "fcbnet/params.hpp"
#include "fcbnet/rng.hpp"

namespace fcbnet {

struct DecoderConfig {
    int feature_dim = 128;
    int refine_depth = 2;
    float dropout_rate = 0.1f;
};

// D*sum(C_s) laterals + (4 + refine)*(9D^2 + 2D) smoothing
// + 9D^2 + 2D + D*K + K head; BatchNorm running stats are buffers,
// not parameters.
int64_t decoder_param_count(const std::array<int, 4>& stage_channels, const DecoderConfig& config,
                            int num_classes);

struct SmoothCache {
    Tensor x, z, a;
    NormStats bn;
};

struct DecoderCache {
    std::array<Tensor, 4> lateral_in;
    std::array<SmoothCache, 4> fuse;
    std::array<std::array<int64_t, 2>, 4> level_hw;
    std::vector<SmoothCache> refine;
    SmoothCache head;
    Tensor drop_mask, cls_in;
    int64_t h4 = 0, w4 = 0;
};

// FPN-style fusion plus segmentation head: bias-free 1x1 laterals to a
// shared width, top-down bilinear resize-to-target + sum with a smoothing
// block (3x3 conv, BatchNorm, GELU) per level, refinement blocks at
// stride 4, then conv/BN/GELU/dropout/1x1-classifier and bilinear
// upsampling to the requested output size.
class Decoder {
public:
    Decoder(const std::array<int, 4>& stage_channels, const DecoderConfig& config, int num_classes,
            Rng& rng);

    // Fused stride-4 map. Training mode updates BatchNorm running stats.
    Tensor decode(const FeaturePyramid& pyramid, bool training, DecoderCache* cache);

    // Logits at (out_h, out_w). Dropout draws from rng in training mode.
    Tensor head_forward(const Tensor& map, int64_t out_h, int64_t out_w, bool training,
                        std::mt19937_64* rng, DecoderCache* cache);

    Tensor forward(const FeaturePyramid& pyramid, int64_t out_h, int64_t out_w, bool training,
                   std::mt19937_64* rng, DecoderCache* cache);

    // Accumulates parameter gradients; returns per-level gradients w.r.t.
    // the pyramid fed to decode(). need_input_grads=false stops at the
    // laterals.
    std::array<Tensor, 4> backward(const Tensor& glogits, const DecoderCache& cache,
                                   bool need_input_grads);

    void collect_params(ParamList& out, const std::string& prefix);
    // Running statistics, persisted with checkpoints but never optimized.
    std::vector<std::pair<std::string, Tensor*>> buffers(const std::string& prefix);

    int feature_dim() const { return config_.feature_dim; }
    int num_classes() const { return num_classes_; }
    const DecoderConfig& config() const { return config_; }

private:
    struct Smoothing {
        Tensor conv, bn_gamma, bn_beta, bn_mean, bn_var;
        Tensor g_conv, g_gamma, g_beta;
    };

    Smoothing make_smoothing(Rng& rng) const;
    Tensor smooth_forward(Smoothing& s, const Tensor& x, bool training, SmoothCache* cache);
    Tensor smooth_backward(Smoothing& s, const Tensor& gy, const SmoothCache& cache);

    std::array<int, 4> stage_channels_;
    DecoderConfig config_;
    int num_classes_;
    float bn_momentum_ = 0.1f;
    float bn_eps_ = 1e-5f;

    std::array<Tensor, 4> lateral_, g_lateral_;
    std::array<Smoothing, 4> fuse_;
    std::vector<Smoothing> refine_;
    Smoothing head_;
    Tensor cls_w_, cls_b_, g_cls_w_, g_cls_b_;
};

}  // namespace fcbnet
