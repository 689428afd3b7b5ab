#pragma once

#include <map>
#include <string>

#include "fcbnet/tensor.hpp"

namespace fcbnet {

// Named-tensor container in the safetensors layout: 8-byte little-endian
// header length, JSON header with dtype/shape/data_offsets per tensor
// (plus optional __metadata__), then the raw buffers. F32 only.
void save_safetensors(const std::string& path, const std::map<std::string, const Tensor*>& tensors,
                      const std::map<std::string, std::string>& metadata = {});

std::map<std::string, Tensor> load_safetensors(const std::string& path,
                                               std::map<std::string, std::string>* metadata = nullptr);

}  // namespace fcbnet
