#include <stdexcept>

#include "fcbnet/decoder.hpp"

namespace fcbnet {

int64_t decoder_param_count(const std::array<int, 4>& stage_channels, const DecoderConfig& config,
                            int num_classes) {
    const int64_t d = config.feature_dim, k = num_classes;
    int64_t laterals = 0;
    for (int c : stage_channels) laterals += d * c;
    const int64_t smoothing = 9 * d * d + 2 * d;
    return laterals + (4 + config.refine_depth) * smoothing + (smoothing + d * k + k);
}

Decoder::Smoothing Decoder::make_smoothing(Rng& rng) const {
    const int64_t d = config_.feature_dim;
    Smoothing s;
    s.conv = Tensor({d, d, 3, 3});
    rng.fill_fan_in(s.conv, 9 * d);
    s.bn_gamma = Tensor::full({d}, 1.0f);
    s.bn_beta = Tensor::zeros({d});
    s.bn_mean = Tensor::zeros({d});
    s.bn_var = Tensor::full({d}, 1.0f);
    s.g_conv = Tensor::zeros(s.conv.shape());
    s.g_gamma = Tensor::zeros({d});
    s.g_beta = Tensor::zeros({d});
    return s;
}

Decoder::Decoder(const std::array<int, 4>& stage_channels, const DecoderConfig& config,
                 int num_classes, Rng& rng)
    : stage_channels_(stage_channels), config_(config), num_classes_(num_classes) {
    if (config.feature_dim < 1) throw std::invalid_argument("Decoder: feature_dim must be positive");
    if (config.refine_depth < 0) throw std::invalid_argument("Decoder: refine_depth must be >= 0");
    if (config.dropout_rate < 0.0f || config.dropout_rate >= 1.0f)
        throw std::invalid_argument("Decoder: dropout_rate must be in [0,1)");
    if (num_classes < 2) throw std::invalid_argument("Decoder: needs at least 2 classes");
    const int64_t d = config.feature_dim;
    for (int i = 0; i < 4; ++i) {
        lateral_[i] = Tensor({d, int64_t(stage_channels[i])});
        rng.fill_fan_in(lateral_[i], stage_channels[i]);
        g_lateral_[i] = Tensor::zeros(lateral_[i].shape());
        fuse_[i] = make_smoothing(rng);
    }
    refine_.reserve(config.refine_depth);
    for (int i = 0; i < config.refine_depth; ++i) refine_.push_back(make_smoothing(rng));
    head_ = make_smoothing(rng);
    cls_w_ = Tensor({int64_t(num_classes), d});
    rng.fill_fan_in(cls_w_, d);
    cls_b_ = Tensor::zeros({int64_t(num_classes)});
    g_cls_w_ = Tensor::zeros(cls_w_.shape());
    g_cls_b_ = Tensor::zeros(cls_b_.shape());
}

Tensor Decoder::smooth_forward(Smoothing& s, const Tensor& x, bool training, SmoothCache* cache) {
    Tensor z = kern::conv3x3_same(x, s.conv);
    Tensor a;
    NormStats stats;
    if (training)
        a = kern::batch_norm_train(z, s.bn_gamma, s.bn_beta, s.bn_mean, s.bn_var, bn_momentum_,
                                   bn_eps_, cache ? &stats : nullptr);
    else
        a = kern::batch_norm_eval(z, s.bn_gamma, s.bn_beta, s.bn_mean, s.bn_var, bn_eps_);
    Tensor y = kern::gelu(a);
    if (cache) {
        cache->x = x;
        cache->z = std::move(z);
        cache->a = std::move(a);
        cache->bn = std::move(stats);
    }
    return y;
}

Tensor Decoder::smooth_backward(Smoothing& s, const Tensor& gy, const SmoothCache& cache) {
    Tensor ga = kern::gelu_backward(gy, cache.a);
    Tensor gz = kern::batch_norm_backward(ga, cache.z, s.bn_gamma, cache.bn, s.g_gamma, s.g_beta);
    return kern::conv3x3_same_backward(gz, cache.x, s.conv, s.g_conv, true);
}

Tensor Decoder::decode(const FeaturePyramid& pyramid, bool training, DecoderCache* cache) {
    for (int i = 0; i < 4; ++i) {
        if (pyramid.levels[i].empty()) throw std::invalid_argument("decode: empty pyramid level");
        if (pyramid.levels[i].dim(1) != stage_channels_[i])
            throw std::invalid_argument("decode: pyramid channels do not match the laterals");
    }
    std::array<Tensor, 4> lat;
    for (int i = 0; i < 4; ++i) {
        lat[i] = kern::pointwise_conv(pyramid.levels[i], lateral_[i]);
        if (cache) {
            cache->lateral_in[i] = pyramid.levels[i];
            cache->level_hw[i] = {lat[i].dim(2), lat[i].dim(3)};
        }
    }
    Tensor p = smooth_forward(fuse_[3], lat[3], training, cache ? &cache->fuse[3] : nullptr);
    for (int i = 2; i >= 0; --i) {
        Tensor up = kern::bilinear_resize(p, lat[i].dim(2), lat[i].dim(3));
        Tensor sum = kern::add(lat[i], up);
        p = smooth_forward(fuse_[i], sum, training, cache ? &cache->fuse[i] : nullptr);
    }
    if (cache) cache->refine.resize(refine_.size());
    for (size_t r = 0; r < refine_.size(); ++r)
        p = smooth_forward(refine_[r], p, training, cache ? &cache->refine[r] : nullptr);
    return p;
}

Tensor Decoder::head_forward(const Tensor& map, int64_t out_h, int64_t out_w, bool training,
                             std::mt19937_64* rng, DecoderCache* cache) {
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("head_forward: bad target size");
    Tensor g = smooth_forward(head_, map, training, cache ? &cache->head : nullptr);
    Tensor d;
    if (training && config_.dropout_rate > 0.0f) {
        if (!rng) throw std::invalid_argument("head_forward: dropout needs an RNG in training mode");
        Tensor mask;
        d = kern::dropout(g, config_.dropout_rate, *rng, mask);
        if (cache) cache->drop_mask = std::move(mask);
    } else {
        d = g;
        if (cache) cache->drop_mask = Tensor();
    }
    Tensor logits4 = kern::pointwise_conv(d, cls_w_, &cls_b_);
    if (cache) {
        cache->cls_in = std::move(d);
        cache->h4 = map.dim(2);
        cache->w4 = map.dim(3);
    }
    return kern::bilinear_resize(logits4, out_h, out_w);
}

Tensor Decoder::forward(const FeaturePyramid& pyramid, int64_t out_h, int64_t out_w, bool training,
                        std::mt19937_64* rng, DecoderCache* cache) {
    Tensor map = decode(pyramid, training, cache);
    return head_forward(map, out_h, out_w, training, rng, cache);
}

std::array<Tensor, 4> Decoder::backward(const Tensor& glogits, const DecoderCache& cache,
                                        bool need_input_grads) {
    Tensor g4 = kern::bilinear_resize_backward(glogits, cache.h4, cache.w4);
    Tensor gd = kern::pointwise_conv_backward(g4, cache.cls_in, cls_w_, g_cls_w_, &g_cls_b_, true);
    if (!cache.drop_mask.empty()) gd = kern::dropout_backward(gd, cache.drop_mask);
    Tensor gm = smooth_backward(head_, gd, cache.head);
    for (size_t r = refine_.size(); r-- > 0;)
        gm = smooth_backward(refine_[r], gm, cache.refine[r]);

    std::array<Tensor, 4> glat;
    Tensor gp = std::move(gm);
    for (int i = 0; i <= 2; ++i) {
        Tensor gsum = smooth_backward(fuse_[i], gp, cache.fuse[i]);
        // the sum fans the gradient out to the lateral and the upsampled path
        gp = kern::bilinear_resize_backward(gsum, cache.fuse[i + 1].a.dim(2),
                                            cache.fuse[i + 1].a.dim(3));
        glat[i] = std::move(gsum);
    }
    glat[3] = smooth_backward(fuse_[3], gp, cache.fuse[3]);

    std::array<Tensor, 4> gpyr;
    for (int i = 0; i < 4; ++i)
        gpyr[i] = kern::pointwise_conv_backward(glat[i], cache.lateral_in[i], lateral_[i],
                                                g_lateral_[i], nullptr, need_input_grads);
    return gpyr;
}

void Decoder::collect_params(ParamList& out, const std::string& prefix) {
    auto add_smoothing = [&](Smoothing& s, const std::string& p) {
        out.push_back({p + ".conv", &s.conv, &s.g_conv});
        out.push_back({p + ".bn.gamma", &s.bn_gamma, &s.g_gamma});
        out.push_back({p + ".bn.beta", &s.bn_beta, &s.g_beta});
    };
    for (int i = 0; i < 4; ++i)
        out.push_back({prefix + ".lateral." + std::to_string(i), &lateral_[i], &g_lateral_[i]});
    for (int i = 0; i < 4; ++i) add_smoothing(fuse_[i], prefix + ".fuse." + std::to_string(i));
    for (size_t r = 0; r < refine_.size(); ++r)
        add_smoothing(refine_[r], prefix + ".refine." + std::to_string(r));
    add_smoothing(head_, prefix + ".head.conv3");
    out.push_back({prefix + ".head.cls.weight", &cls_w_, &g_cls_w_});
    out.push_back({prefix + ".head.cls.bias", &cls_b_, &g_cls_b_});
}

std::vector<std::pair<std::string, Tensor*>> Decoder::buffers(const std::string& prefix) {
    std::vector<std::pair<std::string, Tensor*>> out;
    auto add = [&](Smoothing& s, const std::string& p) {
        out.emplace_back(p + ".bn.running_mean", &s.bn_mean);
        out.emplace_back(p + ".bn.running_var", &s.bn_var);
    };
    for (int i = 0; i < 4; ++i) add(fuse_[i], prefix + ".fuse." + std::to_string(i));
    for (size_t r = 0; r < refine_.size(); ++r)
        add(refine_[r], prefix + ".refine." + std::to_string(r));
    add(head_, prefix + ".head.conv3");
    return out;
}

}  // namespace fcbnet
