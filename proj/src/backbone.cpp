#include <stdexcept>

#include "fcbnet/backbone.hpp"
#include "fcbnet/kernels.hpp"
#include "fcbnet/safetensors.hpp"

namespace fcbnet {

namespace {
constexpr float kLnEps = 1e-6f;
constexpr int kImageNetClasses = 1000;
constexpr float kLayerScaleInit = 1e-6f;
}  // namespace

const std::vector<BackboneVariant>& backbone_variants() {
    static const std::vector<BackboneVariant> v = {
        {"tiny", {96, 192, 384, 768}, {3, 3, 9, 3}},
        {"small", {96, 192, 384, 768}, {3, 3, 27, 3}},
        {"base", {128, 256, 512, 1024}, {3, 3, 27, 3}},
        {"large", {192, 384, 768, 1536}, {3, 3, 27, 3}},
    };
    return v;
}

const BackboneVariant& variant_by_name(const std::string& name) {
    for (const auto& v : backbone_variants())
        if (v.name == name) return v;
    throw std::invalid_argument("unknown backbone variant: " + name);
}

Tensor adapt_stem(const Tensor& stem_weights, int in_channels) {
    if (in_channels < 3) throw std::invalid_argument("adapt_stem: fewer than 3 bands unsupported");
    const int64_t c1 = stem_weights.dim(0), kh = stem_weights.dim(2), kw = stem_weights.dim(3);
    if (stem_weights.dim(1) != 3) throw std::invalid_argument("adapt_stem: expected a 3-band stem");
    if (in_channels == 3) return stem_weights;
    Tensor out({c1, int64_t(in_channels), kh, kw});
    for (int64_t f = 0; f < c1; ++f)
        for (int64_t r = 0; r < kh; ++r)
            for (int64_t c = 0; c < kw; ++c) {
                float mean = 0.0f;
                for (int64_t ch = 0; ch < 3; ++ch) {
                    const float v = stem_weights.at(f, ch, r, c);
                    out.at(f, ch, r, c) = v;
                    mean += v;
                }
                mean /= 3.0f;
                for (int64_t ch = 3; ch < in_channels; ++ch) out.at(f, ch, r, c) = mean;
            }
    return out;
}

Backbone::Backbone(const BackboneConfig& config, Rng& rng)
    : variant_(variant_by_name(config.variant)),
      in_channels_(config.in_channels),
      frozen_(config.frozen) {
    if (in_channels_ < 1) throw std::invalid_argument("Backbone: in_channels must be positive");
    const auto& ch = variant_.stage_channels;

    stem_conv_ = Tensor({ch[0], in_channels_, 4, 4});
    rng.fill_fan_in(stem_conv_, in_channels_ * 16);
    stem_bias_ = Tensor::zeros({ch[0]});
    stem_ln_gamma_ = Tensor::full({ch[0]}, 1.0f);
    stem_ln_beta_ = Tensor::zeros({ch[0]});

    for (int s = 0; s < 4; ++s) {
        const int64_t c = ch[s];
        stages_[s].resize(variant_.stage_depths[s]);
        for (auto& blk : stages_[s]) {
            blk.dw = Tensor({c, 1, 7, 7});
            rng.fill_fan_in(blk.dw, 49);
            blk.dw_bias = Tensor::zeros({c});
            blk.ln_gamma = Tensor::full({c}, 1.0f);
            blk.ln_beta = Tensor::zeros({c});
            blk.pw1 = Tensor({4 * c, c});
            rng.fill_fan_in(blk.pw1, c);
            blk.pw1_bias = Tensor::zeros({4 * c});
            blk.pw2 = Tensor({c, 4 * c});
            rng.fill_fan_in(blk.pw2, 4 * c);
            blk.pw2_bias = Tensor::zeros({c});
            blk.scale = Tensor::full({c}, kLayerScaleInit);
        }
        if (s < 3) {
            auto& ds = downsamples_[s];
            ds.ln_gamma = Tensor::full({c}, 1.0f);
            ds.ln_beta = Tensor::zeros({c});
            ds.conv = Tensor({ch[s + 1], c, 2, 2});
            rng.fill_fan_in(ds.conv, 4 * c);
            ds.bias = Tensor::zeros({ch[s + 1]});
        }
    }
    final_ln_gamma_ = Tensor::full({ch[3]}, 1.0f);
    final_ln_beta_ = Tensor::zeros({ch[3]});
    head_w_ = Tensor({kImageNetClasses, ch[3]});
    rng.fill_fan_in(head_w_, ch[3]);
    head_b_ = Tensor::zeros({kImageNetClasses});

    if (config.weights_source) load_weights(*config.weights_source);
}

Tensor Backbone::block_forward(const Block& blk, const Tensor& x) const {
    Tensor h = kern::depthwise_conv_same(x, blk.dw, &blk.dw_bias);
    h = kern::layer_norm_chan(h, blk.ln_gamma, blk.ln_beta, kLnEps);
    h = kern::pointwise_conv(h, blk.pw1, &blk.pw1_bias);
    h = kern::gelu(h);
    h = kern::pointwise_conv(h, blk.pw2, &blk.pw2_bias);
    // layer scale + residual
    const int64_t B = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor y(x.shape());
#pragma omp parallel for schedule(static)
    for (int64_t plane = 0; plane < B * C; ++plane) {
        const float sc = blk.scale[plane % C];
        const float* xp = x.data() + plane * hw;
        const float* hp = h.data() + plane * hw;
        float* yp = y.data() + plane * hw;
        for (int64_t i = 0; i < hw; ++i) yp[i] = xp[i] + sc * hp[i];
    }
    return y;
}

FeaturePyramid Backbone::extract_features(const Tensor& images) const {
    if (images.ndim() != 4) throw std::invalid_argument("extract_features: expected NCHW input");
    if (images.dim(1) != in_channels_)
        throw std::invalid_argument("extract_features: channel mismatch with built stem");
    if (images.dim(2) < 32 || images.dim(3) < 32)
        throw std::invalid_argument("extract_features: input must be at least 32x32");

    Tensor h = kern::conv2d(images, stem_conv_, &stem_bias_, 4, 0);
    h = kern::layer_norm_chan(h, stem_ln_gamma_, stem_ln_beta_, kLnEps);

    FeaturePyramid pyr;
    for (int s = 0; s < 4; ++s) {
        for (const auto& blk : stages_[s]) h = block_forward(blk, h);
        pyr.levels[s] = h;
        if (s < 3) {
            const auto& ds = downsamples_[s];
            h = kern::layer_norm_chan(h, ds.ln_gamma, ds.ln_beta, kLnEps);
            h = kern::conv2d(h, ds.conv, &ds.bias, 2, 0);
        }
    }
    return pyr;
}

std::map<std::string, Tensor*> Backbone::named_tensors_mut() {
    std::map<std::string, Tensor*> m;
    m["stem.conv.weight"] = &stem_conv_;
    m["stem.conv.bias"] = &stem_bias_;
    m["stem.norm.gamma"] = &stem_ln_gamma_;
    m["stem.norm.beta"] = &stem_ln_beta_;
    for (int s = 0; s < 4; ++s) {
        for (size_t b = 0; b < stages_[s].size(); ++b) {
            auto& blk = stages_[s][b];
            const std::string p = "stages." + std::to_string(s) + "." + std::to_string(b) + ".";
            m[p + "dw.weight"] = &blk.dw;
            m[p + "dw.bias"] = &blk.dw_bias;
            m[p + "norm.gamma"] = &blk.ln_gamma;
            m[p + "norm.beta"] = &blk.ln_beta;
            m[p + "pw1.weight"] = &blk.pw1;
            m[p + "pw1.bias"] = &blk.pw1_bias;
            m[p + "pw2.weight"] = &blk.pw2;
            m[p + "pw2.bias"] = &blk.pw2_bias;
            m[p + "scale"] = &blk.scale;
        }
        if (s < 3) {
            auto& ds = downsamples_[s];
            const std::string p = "downsamples." + std::to_string(s) + ".";
            m[p + "norm.gamma"] = &ds.ln_gamma;
            m[p + "norm.beta"] = &ds.ln_beta;
            m[p + "conv.weight"] = &ds.conv;
            m[p + "conv.bias"] = &ds.bias;
        }
    }
    m["classifier.norm.gamma"] = &final_ln_gamma_;
    m["classifier.norm.beta"] = &final_ln_beta_;
    m["classifier.fc.weight"] = &head_w_;
    m["classifier.fc.bias"] = &head_b_;
    return m;
}

std::map<std::string, const Tensor*> Backbone::named_tensors() const {
    auto mut = const_cast<Backbone*>(this)->named_tensors_mut();
    std::map<std::string, const Tensor*> m;
    for (auto& [k, v] : mut) m[k] = v;
    return m;
}

int64_t Backbone::param_count(bool with_classifier) const {
    int64_t n = 0;
    for (const auto& [name, t] : named_tensors()) {
        if (!with_classifier && name.rfind("classifier.", 0) == 0) continue;
        n += t->numel();
    }
    return n;
}

void Backbone::load_weights(const std::string& path) {
    std::map<std::string, Tensor> file = load_safetensors(path);
    auto internal = named_tensors_mut();

    auto assign = [&](const std::string& canonical, const std::string& target,
                      bool required) -> bool {
        auto it = file.find(canonical);
        if (it == file.end()) {
            if (required) throw std::runtime_error("weights file missing tensor: " + canonical);
            return false;
        }
        Tensor* dst = internal.at(target);
        Tensor& src = it->second;
        if (target == "stem.conv.weight" && src.dim(1) == 3 && in_channels_ > 3)
            src = adapt_stem(src, in_channels_);
        if (!src.same_shape(*dst))
            throw std::runtime_error("shape mismatch for " + canonical + ": file " +
                                     src.shape_str() + " vs model " + dst->shape_str());
        *dst = std::move(src);
        return true;
    };

    assign("downsample_layers.0.0.weight", "stem.conv.weight", true);
    assign("downsample_layers.0.0.bias", "stem.conv.bias", true);
    assign("downsample_layers.0.1.weight", "stem.norm.gamma", true);
    assign("downsample_layers.0.1.bias", "stem.norm.beta", true);
    for (int i = 1; i <= 3; ++i) {
        const std::string c = "downsample_layers." + std::to_string(i) + ".";
        const std::string t = "downsamples." + std::to_string(i - 1) + ".";
        assign(c + "0.weight", t + "norm.gamma", true);
        assign(c + "0.bias", t + "norm.beta", true);
        assign(c + "1.weight", t + "conv.weight", true);
        assign(c + "1.bias", t + "conv.bias", true);
    }
    for (int s = 0; s < 4; ++s)
        for (size_t b = 0; b < stages_[s].size(); ++b) {
            const std::string c = "stages." + std::to_string(s) + "." + std::to_string(b) + ".";
            const std::string t = c;
            assign(c + "dwconv.weight", t + "dw.weight", true);
            assign(c + "dwconv.bias", t + "dw.bias", true);
            assign(c + "norm.weight", t + "norm.gamma", true);
            assign(c + "norm.bias", t + "norm.beta", true);
            assign(c + "pwconv1.weight", t + "pw1.weight", true);
            assign(c + "pwconv1.bias", t + "pw1.bias", true);
            assign(c + "pwconv2.weight", t + "pw2.weight", true);
            assign(c + "pwconv2.bias", t + "pw2.bias", true);
            assign(c + "gamma", t + "scale", true);
        }
    // the classifier never runs in the feature path; tolerate its absence
    assign("norm.weight", "classifier.norm.gamma", false);
    assign("norm.bias", "classifier.norm.beta", false);
    assign("head.weight", "classifier.fc.weight", false);
    assign("head.bias", "classifier.fc.bias", false);
}

}  // namespace fcbnet
