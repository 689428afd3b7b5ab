#include <cmath>
#include <stdexcept>

#include "fcbnet/fcb.hpp"

namespace fcbnet {

int bottleneck_width(int channels, double ratio, int c_min) {
    if (channels < 1) throw std::invalid_argument("bottleneck_width: channels must be positive");
    const int narrowed = int(std::floor(double(channels) / ratio));
    return std::max(c_min, narrowed);
}

int select_groups(int channels, int preferred) {
    if (channels < 1) throw std::invalid_argument("select_groups: channels must be positive");
    for (int g = std::min(channels, preferred); g > 1; --g)
        if (channels % g == 0) return g;
    return 1;
}

int64_t fcb_param_count(int channels, const FcbConfig& config) {
    const int64_t c = channels;
    const int64_t cp = bottleneck_width(channels, config.bottleneck_ratio, config.c_min);
    const int64_t k = config.dw_kernel;
    return 2 * c * cp + k * k * cp + 4 * cp + 1;
}

Fcb::Fcb(int channels, const FcbConfig& config, Rng& rng)
    : channels_(channels),
      bottleneck_(bottleneck_width(channels, config.bottleneck_ratio, config.c_min)),
      groups_(select_groups(bottleneck_, config.preferred_groups)),
      kernel_(config.dw_kernel) {
    if (kernel_ < 1 || kernel_ % 2 == 0)
        throw std::invalid_argument("Fcb: depthwise kernel must be odd and positive");
    const int64_t c = channels_, cp = bottleneck_, k = kernel_;
    params_.pw1 = Tensor({cp, c, 1, 1});
    rng.fill_fan_in(params_.pw1, c);
    params_.gn1_gamma = Tensor::full({cp}, 1.0f);
    params_.gn1_beta = Tensor::zeros({cp});
    params_.dw = Tensor({cp, 1, k, k});
    rng.fill_fan_in(params_.dw, k * k);
    params_.gn2_gamma = Tensor::full({cp}, 1.0f);
    params_.gn2_beta = Tensor::zeros({cp});
    // the block starts as a near-identity perturbation
    params_.pw2 = Tensor::zeros({c, cp, 1, 1});
    params_.alpha = Tensor::full({1}, config.alpha_init);

    grads_.pw1 = Tensor::zeros(params_.pw1.shape());
    grads_.gn1_gamma = Tensor::zeros({cp});
    grads_.gn1_beta = Tensor::zeros({cp});
    grads_.dw = Tensor::zeros(params_.dw.shape());
    grads_.gn2_gamma = Tensor::zeros({cp});
    grads_.gn2_beta = Tensor::zeros({cp});
    grads_.pw2 = Tensor::zeros(params_.pw2.shape());
    grads_.alpha = Tensor::zeros({1});
}

Tensor Fcb::forward(const Tensor& x, FcbCache* cache) const {
    if (x.dim(1) != channels_) throw std::invalid_argument("Fcb: channel mismatch");
    const float alpha = params_.alpha[0];
    if (alpha == 0.0f && !cache) return x;

    const Tensor z1 = kern::pointwise_conv(x, params_.pw1);
    NormStats s1;
    const Tensor a1 = kern::group_norm(z1, params_.gn1_gamma, params_.gn1_beta, groups_, eps_,
                                       cache ? &s1 : nullptr);
    const Tensor g1 = kern::gelu(a1);
    const Tensor z2 = kern::depthwise_conv_same(g1, params_.dw);
    NormStats s2;
    const Tensor a2 = kern::group_norm(z2, params_.gn2_gamma, params_.gn2_beta, groups_, eps_,
                                       cache ? &s2 : nullptr);
    const Tensor g2 = kern::gelu(a2);
    const Tensor f = kern::pointwise_conv(g2, params_.pw2);
    if (cache) {
        cache->x = x;
        cache->z1 = z1;
        cache->a1 = a1;
        cache->g1 = g1;
        cache->z2 = z2;
        cache->a2 = a2;
        cache->g2 = g2;
        cache->f = f;
        cache->s1 = std::move(s1);
        cache->s2 = std::move(s2);
    }
    return kern::scaled_residual(x, f, alpha);
}

Tensor Fcb::backward(const Tensor& gy, const FcbCache& cache) {
    const float alpha = params_.alpha[0];

    // d(alpha) = <gy, f>
    double galpha = 0.0;
    const float* gp = gy.data();
    const float* fp = cache.f.data();
    for (int64_t i = 0; i < gy.numel(); ++i) galpha += double(gp[i]) * fp[i];
    grads_.alpha[0] += float(galpha);

    // through f: gf = alpha * gy
    Tensor gf(gy.shape());
    {
        float* out = gf.data();
        for (int64_t i = 0; i < gy.numel(); ++i) out[i] = alpha * gp[i];
    }
    Tensor gg2 = kern::pointwise_conv_backward(gf, cache.g2, params_.pw2, grads_.pw2, nullptr,
                                               true);
    Tensor ga2 = kern::gelu_backward(gg2, cache.a2);
    Tensor gz2 = kern::group_norm_backward(ga2, cache.z2, params_.gn2_gamma, groups_, cache.s2,
                                           grads_.gn2_gamma, grads_.gn2_beta);
    Tensor gg1 = kern::depthwise_conv_same_backward(gz2, cache.g1, params_.dw, grads_.dw, true);
    Tensor ga1 = kern::gelu_backward(gg1, cache.a1);
    Tensor gz1 = kern::group_norm_backward(ga1, cache.z1, params_.gn1_gamma, groups_, cache.s1,
                                           grads_.gn1_gamma, grads_.gn1_beta);
    Tensor gx_f = kern::pointwise_conv_backward(gz1, cache.x, params_.pw1, grads_.pw1, nullptr,
                                                true);
    return kern::add(gy, gx_f);
}

void Fcb::collect_params(ParamList& out, const std::string& prefix) {
    out.push_back({prefix + ".pw1", &params_.pw1, &grads_.pw1});
    out.push_back({prefix + ".gn1.gamma", &params_.gn1_gamma, &grads_.gn1_gamma});
    out.push_back({prefix + ".gn1.beta", &params_.gn1_beta, &grads_.gn1_beta});
    out.push_back({prefix + ".dw", &params_.dw, &grads_.dw});
    out.push_back({prefix + ".gn2.gamma", &params_.gn2_gamma, &grads_.gn2_gamma});
    out.push_back({prefix + ".gn2.beta", &params_.gn2_beta, &grads_.gn2_beta});
    out.push_back({prefix + ".pw2", &params_.pw2, &grads_.pw2});
    out.push_back({prefix + ".alpha", &params_.alpha, &grads_.alpha});
}

}  // namespace fcbnet
