#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "fcbnet/tensor.hpp"

namespace fcbnet {

// Planar multiband image, values scaled to [0,1] on load.
struct Raster {
    int64_t height = 0, width = 0, channels = 0;
    std::vector<float> data;  // (c, y, x)

    float& at(int64_t c, int64_t y, int64_t x) { return data[(c * height + y) * width + x]; }
    float at(int64_t c, int64_t y, int64_t x) const { return data[(c * height + y) * width + x]; }
};

struct LabelMask {
    int64_t height = 0, width = 0;
    std::vector<int32_t> labels;
};

// PNG/TIFF, 8- or 16-bit, 1 or 3 channels (color returned in RGB order).
Raster load_raster(const std::string& path);
// One 16-bit single-channel PNG per band: <stem>_band<i>.png
std::vector<std::string> save_raster_bands(const Raster& raster, const std::string& stem);
LabelMask load_mask(const std::string& path);
void save_mask(const std::string& path, const LabelMask& mask, bool scale_to_255);

// Top-left offsets of a row-major patch grid; border remainders dropped.
std::vector<std::array<int64_t, 2>> patch_offsets(int64_t tile_h, int64_t tile_w, int patch,
                                                  int stride);
Raster crop(const Raster& tile, int64_t y, int64_t x, int64_t h, int64_t w);
LabelMask crop(const LabelMask& tile, int64_t y, int64_t x, int64_t h, int64_t w);

// pixel -> 1 iff its label is a weed label
LabelMask binarize_mask(const LabelMask& mask, const std::set<int32_t>& weed_labels);

enum class ChannelSet { rgb, rgb_nir, rgb_nir_re };
int channel_count(ChannelSet cs);
ChannelSet channel_set_by_name(const std::string& name);
std::string to_string(ChannelSet cs);

struct SampleRecord {
    std::vector<std::string> band_paths;  // files concatenated channel-wise: R,G,B,NIR,RE
    std::string mask_path;
    std::string split;  // train | val | test
};

struct ChannelStats {
    std::vector<float> mean, stddev;
};

struct DatasetManifest {
    std::vector<SampleRecord> records;
    ChannelSet channel_set = ChannelSet::rgb;
    ChannelStats stats;
    uint64_t seed = 0;

    std::vector<const SampleRecord*> split(const std::string& name) const;
};

// Channels stacked in R,G,B,NIR,RE order from the record's files, then
// (x - mean) / max(std, eps) per channel.
Tensor stack_and_normalize(const SampleRecord& record, ChannelSet channel_set,
                           const ChannelStats& stats);
std::vector<int32_t> load_target(const SampleRecord& record);

// Seed-deterministic shuffle, then contiguous floor-sized train/val
// blocks; test absorbs the remainder.
DatasetManifest split_manifest(std::vector<SampleRecord> records,
                               const std::array<double, 3>& ratios, uint64_t seed);

// Per-channel mean/std over the train split of the [0,1]-scaled bands.
ChannelStats compute_stats(const DatasetManifest& manifest);

// JSON-lines: one meta line, then one line per record.
void save_manifest(const std::string& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::string& path);

}  // namespace fcbnet
