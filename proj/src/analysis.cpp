#include <algorithm>
#include <chrono>
#include <stdexcept>

#include <omp.h>

#include "fcbnet/analysis.hpp"

namespace fcbnet {

std::string to_string(FlopConvention c) {
    return c == FlopConvention::conv_mac_only ? "conv_mac_only" : "conv_mac_plus_elementwise";
}

ParamReport count_params(const FcbNetConfig& config) {
    const BackboneVariant& v = variant_by_name(config.backbone.variant);
    const auto& ch = v.stage_channels;
    ParamReport r;

    int64_t bb = int64_t(ch[0]) * config.backbone.in_channels * 16 + ch[0] + 2 * ch[0];
    for (int s = 0; s < 4; ++s) {
        const int64_t c = ch[s];
        bb += v.stage_depths[s] * (8 * c * c + 58 * c);
        if (s < 3) bb += 2 * c + 4 * c * ch[s + 1] + ch[s + 1];
    }
    const int64_t classifier = 2 * int64_t(ch[3]) + 1000 * int64_t(ch[3]) + 1000;
    const bool frozen = config.backbone.frozen;
    r.by_submodule.push_back({"backbone", bb, frozen ? 0 : bb});
    r.by_submodule.push_back({"backbone.classifier", classifier, frozen ? 0 : classifier});

    if (config.use_fcb)
        for (int s = 0; s < 4; ++s) {
            const int64_t n = fcb_param_count(ch[s], config.fcb);
            r.by_submodule.push_back({"fcb." + std::to_string(s), n, n});
        }

    const int64_t d = config.decoder.feature_dim, k = config.num_classes;
    const int64_t head = 9 * d * d + 2 * d + d * k + k;
    const int64_t body = decoder_param_count(ch, config.decoder, config.num_classes) - head;
    r.by_submodule.push_back({"decoder", body, body});
    r.by_submodule.push_back({"decoder.head", head, head});

    for (const auto& row : r.by_submodule) {
        r.total += row.total;
        r.trainable += row.trainable;
    }
    return r;
}

FlopReport count_flops(const FcbNetConfig& config, int h, int w, FlopConvention convention) {
    if (h < 32 || w < 32) throw std::invalid_argument("count_flops: input must be at least 32x32");
    const BackboneVariant& v = variant_by_name(config.backbone.variant);
    const auto& ch = v.stage_channels;
    const bool ew = convention == FlopConvention::conv_mac_plus_elementwise;

    // pyramid sizes by successive floor halving
    std::array<int64_t, 4> hs, ws;
    hs[0] = h / 4;
    ws[0] = w / 4;
    for (int s = 1; s < 4; ++s) {
        hs[s] = hs[s - 1] / 2;
        ws[s] = ws[s - 1] / 2;
    }

    FlopReport r;
    r.convention = convention;

    // backbone feature path; the classifier never runs
    int64_t bb = int64_t(config.backbone.in_channels) * 16 * ch[0] * hs[0] * ws[0];
    if (ew) bb += 2 * int64_t(ch[0]) * hs[0] * ws[0];
    for (int s = 0; s < 4; ++s) {
        const int64_t c = ch[s], px = hs[s] * ws[s];
        bb += v.stage_depths[s] * (49 * c + 8 * c * c) * px;
        if (ew) bb += v.stage_depths[s] * 8 * c * px;  // LN, GELU, scale, residual
        if (s < 3) {
            bb += 4 * c * ch[s + 1] * hs[s + 1] * ws[s + 1];
            if (ew) bb += 2 * c * px;  // downsampler norm
        }
    }
    r.by_submodule.push_back({"backbone", bb});

    if (config.use_fcb)
        for (int s = 0; s < 4; ++s) {
            const int64_t c = ch[s];
            const int64_t cp =
                bottleneck_width(int(c), config.fcb.bottleneck_ratio, config.fcb.c_min);
            const int64_t k = config.fcb.dw_kernel;
            const int64_t px = hs[s] * ws[s];
            int64_t f = (2 * c * cp + k * k * cp) * px;
            if (ew) f += (6 * cp + 2 * c) * px;  // two norms, two GELUs, scaled residual
            r.by_submodule.push_back({"fcb." + std::to_string(s), f});
        }

    const int64_t d = config.decoder.feature_dim, k = config.num_classes;
    int64_t dec = 0;
    for (int s = 0; s < 4; ++s) {
        const int64_t px = hs[s] * ws[s];
        dec += d * ch[s] * px;      // lateral
        dec += 9 * d * d * px;      // fusion smoothing at this level
        if (ew) {
            dec += 3 * d * px;      // BN + GELU of the smoothing block
            if (s < 3) dec += 9 * d * px;  // upsample to this level (8) + sum (1)
        }
    }
    const int64_t px0 = hs[0] * ws[0];
    dec += int64_t(config.decoder.refine_depth) * 9 * d * d * px0;
    if (ew) dec += int64_t(config.decoder.refine_depth) * 3 * d * px0;
    r.by_submodule.push_back({"decoder", dec});

    int64_t head = 9 * d * d * px0 + d * k * px0;
    if (ew) head += 4 * d * px0 + 8 * k * int64_t(h) * w;  // BN+GELU+dropout, final resize
    r.by_submodule.push_back({"decoder.head", head});

    for (const auto& [name, f] : r.by_submodule) r.total_flops += f;
    return r;
}

LatencyStats benchmark_latency(FcbNet& model, const std::array<int64_t, 4>& input_shape,
                               int warmup, int iters) {
    if (iters < 1) throw std::invalid_argument("benchmark_latency: iters must be >= 1");
    if (input_shape[1] != model.backbone().in_channels())
        throw std::invalid_argument("benchmark_latency: channel mismatch with model");
    Rng rng(20240229);
    Tensor input(std::vector<int64_t>(input_shape.begin(), input_shape.end()));
    rng.fill_normal(input, 0.0f, 1.0f);

    const int prev_threads = omp_get_max_threads();
    omp_set_num_threads(1);
    LatencyStats stats;
    stats.samples_s.reserve(iters);
    for (int i = 0; i < warmup; ++i) model.forward(input);
    for (int i = 0; i < iters; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Tensor out = model.forward(input);
        const auto t1 = std::chrono::steady_clock::now();
        stats.samples_s.push_back(std::chrono::duration<double>(t1 - t0).count() /
                                  double(input_shape[0]));
    }
    omp_set_num_threads(prev_threads);

    std::vector<double> sorted = stats.samples_s;
    std::sort(sorted.begin(), sorted.end());
    double sum = 0.0;
    for (double s : sorted) sum += s;
    stats.mean_s = sum / double(sorted.size());
    const size_t n = sorted.size();
    stats.median_s = (n % 2 == 1) ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    size_t idx95 = size_t(std::ceil(0.95 * double(n))) - 1;
    stats.p95_s = sorted[std::min(idx95, n - 1)];
    return stats;
}

}  // namespace fcbnet
