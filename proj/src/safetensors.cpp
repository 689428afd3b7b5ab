#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "fcbnet/safetensors.hpp"

namespace fcbnet {

using nlohmann::json;

void save_safetensors(const std::string& path, const std::map<std::string, const Tensor*>& tensors,
                      const std::map<std::string, std::string>& metadata) {
    json header = json::object();
    if (!metadata.empty()) header["__metadata__"] = metadata;
    uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        const uint64_t bytes = uint64_t(t->numel()) * sizeof(float);
        header[name] = {{"dtype", "F32"},
                        {"shape", t->shape()},
                        {"data_offsets", {offset, offset + bytes}}};
        offset += bytes;
    }
    std::string hs = header.dump();
    while (hs.size() % 8 != 0) hs.push_back(' ');

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    const uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(hs.data(), std::streamsize(hs.size()));
    for (const auto& [name, t] : tensors)
        out.write(reinterpret_cast<const char*>(t->data()),
                  std::streamsize(t->numel() * sizeof(float)));
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::map<std::string, Tensor> load_safetensors(const std::string& path,
                                               std::map<std::string, std::string>* metadata) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 8);
    if (!in || hlen == 0 || hlen > (1u << 30)) throw std::runtime_error("bad tensor file header: " + path);
    std::string hs(hlen, '\0');
    in.read(hs.data(), std::streamsize(hlen));
    if (!in) throw std::runtime_error("truncated tensor file: " + path);
    json header = json::parse(hs, nullptr, false);
    if (header.is_discarded()) throw std::runtime_error("malformed tensor file header: " + path);

    const std::streampos data_start = in.tellg();
    std::map<std::string, Tensor> out;
    for (auto& [name, desc] : header.items()) {
        if (name == "__metadata__") {
            if (metadata)
                for (auto& [k, v] : desc.items()) (*metadata)[k] = v.get<std::string>();
            continue;
        }
        if (desc.at("dtype").get<std::string>() != "F32")
            throw std::runtime_error("unsupported dtype for tensor " + name);
        std::vector<int64_t> shape = desc.at("shape").get<std::vector<int64_t>>();
        const uint64_t begin = desc.at("data_offsets")[0].get<uint64_t>();
        const uint64_t end = desc.at("data_offsets")[1].get<uint64_t>();
        Tensor t(shape);
        if (end - begin != uint64_t(t.numel()) * sizeof(float))
            throw std::runtime_error("offset/shape mismatch for tensor " + name);
        in.seekg(data_start + std::streampos(begin));
        in.read(reinterpret_cast<char*>(t.data()), std::streamsize(end - begin));
        if (!in) throw std::runtime_error("truncated tensor data for " + name);
        out.emplace(name, std::move(t));
    }
    return out;
}

}  // namespace fcbnet
