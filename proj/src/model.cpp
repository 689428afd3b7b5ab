#include <stdexcept>

#include "fcbnet/model.hpp"

namespace fcbnet {

namespace {
std::vector<Fcb> make_fcbs(const FcbNetConfig& config, const BackboneVariant& variant, Rng& rng) {
    std::vector<Fcb> fcbs;
    if (!config.use_fcb) return fcbs;
    fcbs.reserve(4);
    for (int s = 0; s < 4; ++s) fcbs.emplace_back(variant.stage_channels[s], config.fcb, rng);
    return fcbs;
}
}  // namespace

FcbNet::FcbNet(const FcbNetConfig& config, Rng& rng)
    : config_(config),
      backbone_(config.backbone, rng),
      fcbs_(make_fcbs(config, backbone_.variant(), rng)),
      decoder_(backbone_.variant().stage_channels, config.decoder, config.num_classes, rng) {
    if (config.num_classes < 2) throw std::invalid_argument("FcbNet: needs at least 2 classes");
}

Tensor FcbNet::forward(const Tensor& images, bool training, std::mt19937_64* rng,
                       ModelCache* cache) {
    FeaturePyramid pyr = backbone_.extract_features(images);
    return forward_from_pyramid(pyr, images.dim(2), images.dim(3), training, rng, cache);
}

Tensor FcbNet::forward_from_pyramid(const FeaturePyramid& pyramid, int64_t out_h, int64_t out_w,
                                    bool training, std::mt19937_64* rng, ModelCache* cache) {
    if (!config_.use_fcb)
        return decoder_.forward(pyramid, out_h, out_w, training, rng,
                                cache ? &cache->decoder : nullptr);
    FeaturePyramid corrected;
    for (int s = 0; s < 4; ++s)
        corrected.levels[s] =
            fcbs_[s].forward(pyramid.levels[s], cache ? &cache->fcb[s] : nullptr);
    return decoder_.forward(corrected, out_h, out_w, training, rng,
                            cache ? &cache->decoder : nullptr);
}

void FcbNet::backward(const Tensor& glogits, const ModelCache& cache) {
    std::array<Tensor, 4> gpyr = decoder_.backward(glogits, cache.decoder, config_.use_fcb);
    if (config_.use_fcb)
        for (int s = 0; s < 4; ++s) fcbs_[s].backward(gpyr[s], cache.fcb[s]);
}

ParamList FcbNet::trainable_params() {
    ParamList out;
    for (size_t s = 0; s < fcbs_.size(); ++s)
        fcbs_[s].collect_params(out, "fcb." + std::to_string(s));
    decoder_.collect_params(out, "decoder");
    return out;
}

std::vector<std::pair<std::string, Tensor*>> FcbNet::buffers() {
    return decoder_.buffers("decoder");
}

ParamReport FcbNet::param_report() const {
    ParamReport r;
    auto& self = const_cast<FcbNet&>(*this);
    const int64_t backbone_total = backbone_.param_count(true);
    const int64_t classifier = backbone_total - backbone_.param_count(false);
    r.by_submodule.push_back(
        {"backbone", backbone_total - classifier,
         backbone_.frozen() ? 0 : backbone_total - classifier});
    r.by_submodule.push_back({"backbone.classifier", classifier, backbone_.frozen() ? 0 : classifier});

    ParamList fcb_params;
    for (size_t s = 0; s < self.fcbs_.size(); ++s) {
        ParamList one;
        self.fcbs_[s].collect_params(one, "fcb." + std::to_string(s));
        const int64_t n = param_count(one);
        r.by_submodule.push_back({"fcb." + std::to_string(s), n, n});
    }

    ParamList dec;
    self.decoder_.collect_params(dec, "decoder");
    int64_t head = 0, body = 0;
    for (const auto& p : dec)
        (p.name.rfind("decoder.head", 0) == 0 ? head : body) += p.value->numel();
    r.by_submodule.push_back({"decoder", body, body});
    r.by_submodule.push_back({"decoder.head", head, head});

    for (const auto& row : r.by_submodule) {
        r.total += row.total;
        r.trainable += row.trainable;
    }
    return r;
}

FcbNet build_fcbnet(const FcbNetConfig& config, uint64_t seed) {
    Rng rng(seed);
    return FcbNet(config, rng);
}

int64_t trainable_param_count(const FcbNetConfig& config) {
    const BackboneVariant& v = variant_by_name(config.backbone.variant);
    int64_t n = 0;
    if (config.use_fcb)
        for (int s = 0; s < 4; ++s) n += fcb_param_count(v.stage_channels[s], config.fcb);
    n += decoder_param_count(v.stage_channels, config.decoder, config.num_classes);
    if (!config.backbone.frozen)
        throw std::invalid_argument("trainable_param_count: only frozen backbones are supported");
    return n;
}

}  // namespace fcbnet
