#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "fcbnet/data.hpp"
#include "fcbnet/rng.hpp"

namespace fcbnet {

using nlohmann::json;

Raster load_raster(const std::string& path) {
    cv::Mat img = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (img.empty()) throw std::runtime_error("cannot read image: " + path);
    const int ch = img.channels();
    if (ch != 1 && ch != 3) throw std::runtime_error("unsupported channel count in " + path);
    float scale;
    switch (img.depth()) {
        case CV_8U: scale = 1.0f / 255.0f; break;
        case CV_16U: scale = 1.0f / 65535.0f; break;
        default: throw std::runtime_error("unsupported bit depth in " + path);
    }
    Raster r;
    r.height = img.rows;
    r.width = img.cols;
    r.channels = ch;
    r.data.resize(size_t(ch) * img.rows * img.cols);
    for (int y = 0; y < img.rows; ++y)
        for (int x = 0; x < img.cols; ++x)
            for (int c = 0; c < ch; ++c) {
                const int src = (ch == 3) ? 2 - c : c;  // BGR -> RGB
                const float v = (img.depth() == CV_8U)
                                    ? float(img.ptr<uint8_t>(y)[x * ch + src])
                                    : float(img.ptr<uint16_t>(y)[x * ch + src]);
                r.at(c, y, x) = v * scale;
            }
    return r;
}

std::vector<std::string> save_raster_bands(const Raster& raster, const std::string& stem) {
    std::vector<std::string> paths;
    for (int64_t c = 0; c < raster.channels; ++c) {
        cv::Mat band(int(raster.height), int(raster.width), CV_16UC1);
        for (int64_t y = 0; y < raster.height; ++y)
            for (int64_t x = 0; x < raster.width; ++x) {
                float v = raster.at(c, y, x);
                v = std::min(1.0f, std::max(0.0f, v));
                band.at<uint16_t>(int(y), int(x)) = uint16_t(std::lround(v * 65535.0f));
            }
        std::string path = stem + "_band" + std::to_string(c) + ".png";
        if (!cv::imwrite(path, band)) throw std::runtime_error("cannot write " + path);
        paths.push_back(std::move(path));
    }
    return paths;
}

LabelMask load_mask(const std::string& path) {
    cv::Mat img = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (img.empty()) throw std::runtime_error("cannot read mask: " + path);
    if (img.channels() != 1) throw std::runtime_error("mask must be single-channel: " + path);
    LabelMask m;
    m.height = img.rows;
    m.width = img.cols;
    m.labels.resize(size_t(img.rows) * img.cols);
    for (int y = 0; y < img.rows; ++y)
        for (int x = 0; x < img.cols; ++x) {
            int32_t v;
            switch (img.depth()) {
                case CV_8U: v = img.ptr<uint8_t>(y)[x]; break;
                case CV_16U: v = img.ptr<uint16_t>(y)[x]; break;
                default: throw std::runtime_error("unsupported mask depth: " + path);
            }
            m.labels[size_t(y) * img.cols + x] = v;
        }
    return m;
}

void save_mask(const std::string& path, const LabelMask& mask, bool scale_to_255) {
    cv::Mat img(int(mask.height), int(mask.width), CV_8UC1);
    for (int64_t y = 0; y < mask.height; ++y)
        for (int64_t x = 0; x < mask.width; ++x) {
            const int32_t v = mask.labels[size_t(y) * mask.width + x];
            img.at<uint8_t>(int(y), int(x)) =
                scale_to_255 ? (v != 0 ? 255 : 0) : uint8_t(std::min(v, 255));
        }
    if (!cv::imwrite(path, img)) throw std::runtime_error("cannot write " + path);
}

std::vector<std::array<int64_t, 2>> patch_offsets(int64_t tile_h, int64_t tile_w, int patch,
                                                  int stride) {
    if (patch > tile_h || patch > tile_w)
        throw std::invalid_argument("patch_offsets: patch larger than tile");
    if (stride < 1) throw std::invalid_argument("patch_offsets: stride must be >= 1");
    const int64_t rows = (tile_h - patch) / stride + 1;
    const int64_t cols = (tile_w - patch) / stride + 1;
    std::vector<std::array<int64_t, 2>> offsets;
    offsets.reserve(size_t(rows * cols));
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c)
            offsets.push_back({r * stride, c * stride});
    return offsets;
}

Raster crop(const Raster& tile, int64_t y, int64_t x, int64_t h, int64_t w) {
    if (y < 0 || x < 0 || y + h > tile.height || x + w > tile.width)
        throw std::invalid_argument("crop: window outside tile");
    Raster out;
    out.height = h;
    out.width = w;
    out.channels = tile.channels;
    out.data.resize(size_t(tile.channels) * h * w);
    for (int64_t c = 0; c < tile.channels; ++c)
        for (int64_t r = 0; r < h; ++r)
            for (int64_t s = 0; s < w; ++s) out.at(c, r, s) = tile.at(c, y + r, x + s);
    return out;
}

LabelMask crop(const LabelMask& tile, int64_t y, int64_t x, int64_t h, int64_t w) {
    if (y < 0 || x < 0 || y + h > tile.height || x + w > tile.width)
        throw std::invalid_argument("crop: window outside tile");
    LabelMask out;
    out.height = h;
    out.width = w;
    out.labels.resize(size_t(h) * w);
    for (int64_t r = 0; r < h; ++r)
        for (int64_t s = 0; s < w; ++s)
            out.labels[size_t(r) * w + s] = tile.labels[size_t(y + r) * tile.width + (x + s)];
    return out;
}

LabelMask binarize_mask(const LabelMask& mask, const std::set<int32_t>& weed_labels) {
    if (weed_labels.empty()) throw std::invalid_argument("binarize_mask: empty weed label set");
    LabelMask out = mask;
    for (auto& v : out.labels) v = weed_labels.count(v) ? 1 : 0;
    return out;
}

int channel_count(ChannelSet cs) {
    switch (cs) {
        case ChannelSet::rgb: return 3;
        case ChannelSet::rgb_nir: return 4;
        case ChannelSet::rgb_nir_re: return 5;
    }
    throw std::logic_error("channel_count: bad enum");
}

ChannelSet channel_set_by_name(const std::string& name) {
    if (name == "rgb") return ChannelSet::rgb;
    if (name == "rgb-nir") return ChannelSet::rgb_nir;
    if (name == "rgb-nir-re") return ChannelSet::rgb_nir_re;
    throw std::invalid_argument("unknown channel set: " + name);
}

std::string to_string(ChannelSet cs) {
    switch (cs) {
        case ChannelSet::rgb: return "rgb";
        case ChannelSet::rgb_nir: return "rgb-nir";
        case ChannelSet::rgb_nir_re: return "rgb-nir-re";
    }
    throw std::logic_error("to_string: bad channel set");
}

std::vector<const SampleRecord*> DatasetManifest::split(const std::string& name) const {
    std::vector<const SampleRecord*> out;
    for (const auto& r : records)
        if (r.split == name) out.push_back(&r);
    return out;
}

Tensor stack_and_normalize(const SampleRecord& record, ChannelSet channel_set,
                           const ChannelStats& stats) {
    const int want = channel_count(channel_set);
    if (int(stats.mean.size()) != want || int(stats.stddev.size()) != want)
        throw std::invalid_argument("stack_and_normalize: stats do not match the channel set");

    std::vector<Raster> bands;
    int have = 0;
    int64_t h = -1, w = -1;
    for (const auto& path : record.band_paths) {
        Raster r = load_raster(path);
        if (h < 0) {
            h = r.height;
            w = r.width;
        } else if (r.height != h || r.width != w) {
            throw std::runtime_error("band dimension mismatch in " + path);
        }
        have += int(r.channels);
        bands.push_back(std::move(r));
    }
    if (have < want) throw std::runtime_error("missing bands: need " + std::to_string(want) +
                                              ", records supply " + std::to_string(have));

    Tensor out({want, h, w});
    int c_out = 0;
    constexpr float kMinStd = 1e-6f;
    for (const auto& r : bands) {
        for (int64_t c = 0; c < r.channels && c_out < want; ++c, ++c_out) {
            const float mean = stats.mean[c_out];
            const float inv = 1.0f / std::max(stats.stddev[c_out], kMinStd);
            float* dst = out.data() + int64_t(c_out) * h * w;
            const float* src = r.data.data() + c * h * w;
            for (int64_t i = 0; i < h * w; ++i) dst[i] = (src[i] - mean) * inv;
        }
    }
    return out;
}

std::vector<int32_t> load_target(const SampleRecord& record) {
    return load_mask(record.mask_path).labels;
}

DatasetManifest split_manifest(std::vector<SampleRecord> records,
                               const std::array<double, 3>& ratios, uint64_t seed) {
    if (records.empty()) throw std::invalid_argument("split_manifest: no records");
    const double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(sum - 1.0) > 1e-6)
        throw std::invalid_argument("split_manifest: ratios must sum to 1");
    const size_t n = records.size();
    Rng rng(seed);
    const std::vector<size_t> order = rng.permutation(n);
    const size_t n_train = size_t(std::floor(ratios[0] * double(n)));
    const size_t n_val = size_t(std::floor(ratios[1] * double(n)));
    DatasetManifest m;
    m.seed = seed;
    m.records.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        SampleRecord rec = std::move(records[order[i]]);
        rec.split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
        m.records.push_back(std::move(rec));
    }
    return m;
}

ChannelStats compute_stats(const DatasetManifest& manifest) {
    const int ch = channel_count(manifest.channel_set);
    std::vector<double> sum(ch, 0.0), sumsq(ch, 0.0);
    int64_t count = 0;
    for (const SampleRecord* rec : manifest.split("train")) {
        int c_out = 0;
        int64_t px = 0;
        for (const auto& path : rec->band_paths) {
            Raster r = load_raster(path);
            px = r.height * r.width;
            for (int64_t c = 0; c < r.channels && c_out < ch; ++c, ++c_out) {
                const float* p = r.data.data() + c * px;
                for (int64_t i = 0; i < px; ++i) {
                    sum[c_out] += p[i];
                    sumsq[c_out] += double(p[i]) * p[i];
                }
            }
        }
        if (c_out < ch) throw std::runtime_error("record missing bands for stats");
        count += px;
    }
    if (count == 0) throw std::runtime_error("compute_stats: empty train split");
    ChannelStats stats;
    stats.mean.resize(ch);
    stats.stddev.resize(ch);
    for (int c = 0; c < ch; ++c) {
        const double mean = sum[c] / double(count);
        const double var = std::max(0.0, sumsq[c] / double(count) - mean * mean);
        stats.mean[c] = float(mean);
        stats.stddev[c] = float(std::sqrt(var));
    }
    return stats;
}

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest: " + path);
    json meta = {{"channel_set", to_string(manifest.channel_set)},
                 {"seed", manifest.seed},
                 {"mean", manifest.stats.mean},
                 {"std", manifest.stats.stddev}};
    out << meta.dump() << "\n";
    for (const auto& r : manifest.records) {
        json line = {{"bands", r.band_paths}, {"mask", r.mask_path}, {"split", r.split}};
        out << line.dump() << "\n";
    }
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read manifest: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty manifest: " + path);
    json meta = json::parse(line);
    DatasetManifest m;
    m.channel_set = channel_set_by_name(meta.at("channel_set").get<std::string>());
    m.seed = meta.at("seed").get<uint64_t>();
    m.stats.mean = meta.at("mean").get<std::vector<float>>();
    m.stats.stddev = meta.at("std").get<std::vector<float>>();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json r = json::parse(line);
        SampleRecord rec;
        rec.band_paths = r.at("bands").get<std::vector<std::string>>();
        rec.mask_path = r.at("mask").get<std::string>();
        rec.split = r.at("split").get<std::string>();
        m.records.push_back(std::move(rec));
    }
    return m;
}

}  // namespace fcbnet
