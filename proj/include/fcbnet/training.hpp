#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fcbnet/analysis.hpp"
#include "fcbnet/data.hpp"
#include "fcbnet/metrics.hpp"
#include "fcbnet/model.hpp"

namespace fcbnet {

struct TrainConfig {
    double max_lr = 1e-3;
    int epochs = 100;
    int batch_size = 64;
    double weight_decay = 1e-2;
    double pct_start = 0.3;
    double div_factor = 25.0;
    double final_div_factor = 1e4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    uint64_t seed = 0;
    // reuse frozen-backbone features across epochs (valid without augmentation)
    bool cache_features = true;
    std::optional<std::vector<float>> class_weights;
};

// Cosine warmup from max_lr/div_factor to max_lr at ceil(pct_start*total),
// then cosine anneal to max_lr/final_div_factor at the last step.
double onecycle_lr(int64_t step, int64_t total_steps, const TrainConfig& config);

// Decoupled weight decay; bias-corrected moments.
class AdamW {
public:
    AdamW(ParamList params, const TrainConfig& config);

    void step(double lr);
    void zero_grads();

    int64_t t() const { return t_; }
    void set_t(int64_t t) { t_ = t; }
    const ParamList& params() const { return params_; }
    // moment access by parameter index, for persistence
    Tensor& exp_avg(size_t i) { return m_[i]; }
    Tensor& exp_avg_sq(size_t i) { return v_[i]; }
    const Tensor& exp_avg(size_t i) const { return m_[i]; }
    const Tensor& exp_avg_sq(size_t i) const { return v_[i]; }

private:
    ParamList params_;
    std::vector<Tensor> m_, v_;
    double wd_, beta1_, beta2_;
    double eps_ = 1e-8;
    int64_t t_ = 0;
};

struct TrainSample {
    Tensor image;  // (C, H, W)
    std::vector<int32_t> target;
};

class Dataset {
public:
    virtual ~Dataset() = default;
    virtual size_t size() const = 0;
    virtual TrainSample get(size_t i) const = 0;
};

class InMemoryDataset : public Dataset {
public:
    explicit InMemoryDataset(std::vector<TrainSample> samples) : samples_(std::move(samples)) {}
    size_t size() const override { return samples_.size(); }
    TrainSample get(size_t i) const override { return samples_[i]; }

private:
    std::vector<TrainSample> samples_;
};

// Loads and normalizes manifest records of one split on demand.
class ManifestDataset : public Dataset {
public:
    ManifestDataset(const DatasetManifest& manifest, const std::string& split);
    size_t size() const override { return records_.size(); }
    TrainSample get(size_t i) const override;

private:
    std::vector<SampleRecord> records_;
    ChannelSet channel_set_;
    ChannelStats stats_;
};

struct EpochStats {
    int epoch = 0;
    double mean_loss = 0.0;
    double last_lr = 0.0;
    double val_miou = -1.0;  // -1 when no validation split was given
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    double best_val_miou = -1.0;
    std::string best_checkpoint;
};

struct FitOptions {
    std::string checkpoint_dir;       // empty: keep no checkpoints
    std::optional<int> max_steps;     // cap on optimizer steps, overrides epochs
    bool verbose = false;
};

// Optimizes the trainable subset (the backbone must be frozen). Single
// data-loading thread, deterministic given config.seed.
TrainHistory fit(FcbNet& model, const Dataset& train, const Dataset* val,
                 const TrainConfig& config, const FitOptions& options = {});

struct EvalResult {
    IouReport iou;
    double mean_loss = 0.0;
    LatencyStats latency;
    int64_t pixels = 0;
};

EvalResult evaluate(FcbNet& model, const Dataset& dataset);

// Trainable tensors + BatchNorm buffers + optimizer moments in one
// named-tensor file, with a JSON sidecar (<path>.json) holding the
// architecture fingerprint, step and seed.
void save_checkpoint(const std::string& path, FcbNet& model, const AdamW* opt, int64_t step);
int64_t load_checkpoint(const std::string& path, FcbNet& model, AdamW* opt);

}  // namespace fcbnet
