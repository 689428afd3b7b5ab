#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fcbnet/model.hpp"

namespace fcbnet {

enum class FlopConvention {
    conv_mac_only,              // 1 FLOP per convolution multiply-accumulate
    conv_mac_plus_elementwise,  // adds norm/activation/add/resize element ops
};

std::string to_string(FlopConvention c);

struct FlopReport {
    int64_t total_flops = 0;
    std::vector<std::pair<std::string, int64_t>> by_submodule;
    FlopConvention convention = FlopConvention::conv_mac_only;
};

// Same figures as FcbNet::param_report, computed from the config alone.
ParamReport count_params(const FcbNetConfig& config);

// Closed-form cost at the given input size, using the floor-halving
// pyramid sizes the network actually produces.
FlopReport count_flops(const FcbNetConfig& config, int h, int w,
                       FlopConvention convention = FlopConvention::conv_mac_only);

struct LatencyStats {
    double mean_s = 0.0;
    double median_s = 0.0;
    double p95_s = 0.0;
    std::vector<double> samples_s;  // seconds per image, one entry per iter
};

// Times eval-mode forward passes on a fixed random input, single
// execution thread, warmup runs discarded.
LatencyStats benchmark_latency(FcbNet& model, const std::array<int64_t, 4>& input_shape,
                               int warmup, int iters);

}  // namespace fcbnet
