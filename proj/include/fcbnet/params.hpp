#pragma once

#include <string>
#include <vector>

#include "fcbnet/tensor.hpp"

namespace fcbnet {

// Handle to one learnable tensor and its gradient accumulator. Modules
// append their trainable state to a flat list; the optimizer walks it.
struct ParamRef {
    std::string name;
    Tensor* value = nullptr;
    Tensor* grad = nullptr;
};

using ParamList = std::vector<ParamRef>;

inline int64_t param_count(const ParamList& params) {
    int64_t n = 0;
    for (const auto& p : params) n += p.value->numel();
    return n;
}

inline void zero_grads(const ParamList& params) {
    for (const auto& p : params) p.grad->zero();
}

}  // namespace fcbnet
