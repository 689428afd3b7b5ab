#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fcbnet/backbone.hpp"
#include "fcbnet/decoder.hpp"
#include "fcbnet/fcb.hpp"
#include "fcbnet/params.hpp"

namespace fcbnet {

struct FcbNetConfig {
    BackboneConfig backbone;
    FcbConfig fcb;
    DecoderConfig decoder;
    int num_classes = 2;
    bool use_fcb = true;
};

struct ParamReport {
    struct Row {
        std::string name;
        int64_t total = 0;
        int64_t trainable = 0;
    };
    int64_t total = 0;
    int64_t trainable = 0;
    std::vector<Row> by_submodule;
    double reduction() const { return 1.0 - double(trainable) / double(total); }
};

struct ModelCache {
    std::array<FcbCache, 4> fcb;
    DecoderCache decoder;
};

// Frozen ConvNeXt encoder, one feature-correction block per stage on the
// lateral path (stage outputs still feed the next stage uncorrected),
// FPN decoder and segmentation head.
class FcbNet {
public:
    FcbNet(const FcbNetConfig& config, Rng& rng);

    // training=true retains intermediates in cache and draws dropout from
    // rng; eval calls are deterministic and thread-safe.
    Tensor forward(const Tensor& images, bool training = false, std::mt19937_64* rng = nullptr,
                   ModelCache* cache = nullptr);

    // Runs the trainable subgraph on raw backbone features — the frozen
    // backbone's outputs can be computed once and reused across epochs.
    Tensor forward_from_pyramid(const FeaturePyramid& pyramid, int64_t out_h, int64_t out_w,
                                bool training = false, std::mt19937_64* rng = nullptr,
                                ModelCache* cache = nullptr);

    // Accumulates gradients for every trainable parameter. The frozen
    // backbone receives none.
    void backward(const Tensor& glogits, const ModelCache& cache);

    ParamReport param_report() const;
    ParamList trainable_params();
    std::vector<std::pair<std::string, Tensor*>> buffers();

    const FcbNetConfig& config() const { return config_; }
    Backbone& backbone() { return backbone_; }
    const Backbone& backbone() const { return backbone_; }
    Decoder& decoder() { return decoder_; }
    std::vector<Fcb>& fcbs() { return fcbs_; }

private:
    FcbNetConfig config_;
    Backbone backbone_;
    std::vector<Fcb> fcbs_;
    Decoder decoder_;
};

FcbNet build_fcbnet(const FcbNetConfig& config, uint64_t seed);

// Static trainable count for a configuration, no construction involved.
int64_t trainable_param_count(const FcbNetConfig& config);

}  // namespace fcbnet
