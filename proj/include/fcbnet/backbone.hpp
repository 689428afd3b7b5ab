#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fcbnet/rng.hpp"
#include "fcbnet/tensor.hpp"

namespace fcbnet {

struct BackboneVariant {
    std::string name;
    std::array<int, 4> stage_channels;
    std::array<int, 4> stage_depths;
};

// tiny, small, base, large
const std::vector<BackboneVariant>& backbone_variants();
const BackboneVariant& variant_by_name(const std::string& name);

struct BackboneConfig {
    std::string variant = "base";
    int in_channels = 3;
    bool frozen = true;
    std::optional<std::string> weights_source;
};

struct FeaturePyramid {
    std::array<Tensor, 4> levels;  // strides 4, 8, 16, 32
};

// Expand a pretrained 3-band stem: extra input slices are the per-filter
// mean of the RGB slices.
Tensor adapt_stem(const Tensor& stem_weights, int in_channels);

// ConvNeXt feature extractor: 4x4/4 stem, four stages of depthwise-7x7
// blocks with per-pixel layer norm, GELU MLPs and layer scale, stride-2
// downsamplers between stages. Forward-only; the pretrained classifier
// (final norm + fc) is carried for parameter accounting but never runs
// in the feature path.
class Backbone {
public:
    Backbone(const BackboneConfig& config, Rng& rng);

    FeaturePyramid extract_features(const Tensor& images) const;

    const BackboneVariant& variant() const { return variant_; }
    int in_channels() const { return in_channels_; }
    bool frozen() const { return frozen_; }

    int64_t param_count(bool with_classifier) const;

    // Flat named views of every tensor, for tests and persistence.
    std::map<std::string, const Tensor*> named_tensors() const;
    std::map<std::string, Tensor*> named_tensors_mut();

    // Load from a named-tensor file using canonical ConvNeXt names
    // (downsample_layers.*, stages.*.dwconv/norm/pwconv1/pwconv2/gamma,
    // norm.*, head.*). A 3-band stem in the file is expanded on the fly
    // when the configured input has more bands.
    void load_weights(const std::string& path);

private:
    struct Block {
        Tensor dw, dw_bias, ln_gamma, ln_beta, pw1, pw1_bias, pw2, pw2_bias, scale;
    };
    struct Downsample {
        Tensor ln_gamma, ln_beta, conv, bias;
    };

    Tensor block_forward(const Block& blk, const Tensor& x) const;

    BackboneVariant variant_;
    int in_channels_;
    bool frozen_;
    Tensor stem_conv_, stem_bias_, stem_ln_gamma_, stem_ln_beta_;
    std::array<std::vector<Block>, 4> stages_;
    std::array<Downsample, 3> downsamples_;
    Tensor final_ln_gamma_, final_ln_beta_, head_w_, head_b_;
};

}  // namespace fcbnet
