#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "fcbnet/config.hpp"
#include "fcbnet/kernels.hpp"
#include "fcbnet/safetensors.hpp"
#include "fcbnet/training.hpp"

namespace fcbnet {

double onecycle_lr(int64_t step, int64_t total_steps, const TrainConfig& config) {
    if (step < 0 || step >= total_steps) throw std::invalid_argument("onecycle_lr: step out of range");
    const double lr_max = config.max_lr;
    const double lr_start = lr_max / config.div_factor;
    const double lr_final = lr_max / config.final_div_factor;
    const int64_t peak = int64_t(std::ceil(config.pct_start * double(total_steps)));
    if (step <= peak) {
        if (peak == 0) return lr_max;
        const double t = double(step) / double(peak);
        return lr_start + (lr_max - lr_start) * 0.5 * (1.0 - std::cos(M_PI * t));
    }
    const int64_t span = std::max<int64_t>(1, total_steps - 1 - peak);
    const double t = double(step - peak) / double(span);
    return lr_final + (lr_max - lr_final) * 0.5 * (1.0 + std::cos(M_PI * t));
}

AdamW::AdamW(ParamList params, const TrainConfig& config)
    : params_(std::move(params)),
      wd_(config.weight_decay),
      beta1_(config.beta1),
      beta2_(config.beta2) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.push_back(Tensor::zeros(p.value->shape()));
        v_.push_back(Tensor::zeros(p.value->shape()));
    }
}

void AdamW::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        float* p = params_[i].value->data();
        const float* g = params_[i].grad->data();
        float* m = m_[i].data();
        float* v = v_[i].data();
        const int64_t n = params_[i].value->numel();
        for (int64_t j = 0; j < n; ++j) {
            m[j] = float(beta1_ * m[j] + (1.0 - beta1_) * g[j]);
            v[j] = float(beta2_ * v[j] + (1.0 - beta2_) * double(g[j]) * g[j]);
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] = float(p[j] - lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * p[j]));
        }
    }
}

void AdamW::zero_grads() {
    for (const auto& p : params_) p.grad->zero();
}

ManifestDataset::ManifestDataset(const DatasetManifest& manifest, const std::string& split)
    : channel_set_(manifest.channel_set), stats_(manifest.stats) {
    for (const SampleRecord* r : manifest.split(split)) records_.push_back(*r);
    if (records_.empty()) throw std::invalid_argument("ManifestDataset: split \"" + split + "\" is empty");
}

TrainSample ManifestDataset::get(size_t i) const {
    TrainSample s;
    s.image = stack_and_normalize(records_[i], channel_set_, stats_);
    s.target = load_target(records_[i]);
    return s;
}

namespace {

Tensor add_batch_dim(const Tensor& chw) {
    Tensor out({1, chw.dim(0), chw.dim(1), chw.dim(2)});
    std::copy(chw.data(), chw.data() + chw.numel(), out.data());
    return out;
}

struct Batch {
    Tensor images;  // empty when pyramids are used instead
    FeaturePyramid pyramid;
    std::vector<int32_t> targets;
    int64_t out_h = 0, out_w = 0;
};

FeaturePyramid stack_pyramids(const std::vector<FeaturePyramid>& pyrs,
                              const std::vector<size_t>& idx) {
    FeaturePyramid out;
    for (int s = 0; s < 4; ++s) {
        const Tensor& first = pyrs[idx[0]].levels[s];
        for (size_t k : idx)
            if (!pyrs[k].levels[s].same_shape(first))
                throw std::invalid_argument("fit: training batches need uniformly sized samples");
        Tensor stacked({int64_t(idx.size()), first.dim(1), first.dim(2), first.dim(3)});
        const int64_t chunk = first.numel();
        for (size_t b = 0; b < idx.size(); ++b)
            std::copy(pyrs[idx[b]].levels[s].data(), pyrs[idx[b]].levels[s].data() + chunk,
                      stacked.data() + int64_t(b) * chunk);
        out.levels[s] = std::move(stacked);
    }
    return out;
}

}  // namespace

TrainHistory fit(FcbNet& model, const Dataset& train, const Dataset* val,
                 const TrainConfig& config, const FitOptions& options) {
    if (train.size() == 0) throw std::invalid_argument("fit: empty training split");
    if (!model.backbone().frozen())
        throw std::invalid_argument("fit: only frozen-backbone training is supported");
    if (config.epochs < 1 || config.batch_size < 1)
        throw std::invalid_argument("fit: epochs and batch_size must be positive");

    const size_t n = train.size();
    const int64_t steps_per_epoch = int64_t((n + config.batch_size - 1) / config.batch_size);
    int64_t total_steps = steps_per_epoch * config.epochs;
    int64_t epochs = config.epochs;
    if (options.max_steps) {
        total_steps = *options.max_steps;
        epochs = (total_steps + steps_per_epoch - 1) / steps_per_epoch;
    }

    // the frozen backbone maps each sample to the same features every
    // epoch; cache them once
    std::vector<FeaturePyramid> pyramids;
    std::vector<std::array<int64_t, 2>> sizes(n);
    std::vector<std::vector<int32_t>> targets(n);
    std::vector<Tensor> images;
    for (size_t i = 0; i < n; ++i) {
        TrainSample s = train.get(i);
        sizes[i] = {s.image.dim(1), s.image.dim(2)};
        targets[i] = std::move(s.target);
        Tensor batched = add_batch_dim(s.image);
        if (config.cache_features)
            pyramids.push_back(model.backbone().extract_features(batched));
        else
            images.push_back(std::move(batched));
    }

    AdamW opt(model.trainable_params(), config);
    std::mt19937_64 dropout_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    const std::vector<float>* cw = config.class_weights ? &*config.class_weights : nullptr;

    TrainHistory history;
    std::filesystem::path ckpt_dir(options.checkpoint_dir);
    if (!options.checkpoint_dir.empty()) std::filesystem::create_directories(ckpt_dir);

    int64_t step = 0;
    for (int64_t epoch = 0; epoch < epochs && step < total_steps; ++epoch) {
        std::vector<size_t> order(n);
        for (size_t i = 0; i < n; ++i) order[i] = i;
        std::mt19937_64 shuffle_rng(config.seed * 1000003ULL + uint64_t(epoch));
        for (size_t i = n; i > 1; --i) {
            const size_t j = shuffle_rng() % i;
            std::swap(order[i - 1], order[j]);
        }

        double loss_sum = 0.0;
        int64_t batches = 0;
        double lr = 0.0;
        for (size_t at = 0; at < n && step < total_steps; at += config.batch_size) {
            const size_t take = std::min(size_t(config.batch_size), n - at);
            std::vector<size_t> idx(order.begin() + at, order.begin() + at + take);

            for (size_t k : idx)
                if (sizes[k] != sizes[idx[0]])
                    throw std::invalid_argument("fit: training batches need uniformly sized samples");
            std::vector<int32_t> batch_targets;
            for (size_t k : idx)
                batch_targets.insert(batch_targets.end(), targets[k].begin(), targets[k].end());

            ModelCache cache;
            Tensor logits;
            if (config.cache_features) {
                FeaturePyramid pyr = stack_pyramids(pyramids, idx);
                logits = model.forward_from_pyramid(pyr, sizes[idx[0]][0], sizes[idx[0]][1], true,
                                                    &dropout_rng, &cache);
            } else {
                Tensor batch({int64_t(take), images[0].dim(1), sizes[idx[0]][0], sizes[idx[0]][1]});
                for (size_t b = 0; b < take; ++b)
                    std::copy(images[idx[b]].data(), images[idx[b]].data() + images[idx[b]].numel(),
                              batch.data() + int64_t(b) * images[idx[b]].numel());
                logits = model.forward(batch, true, &dropout_rng, &cache);
            }

            Tensor dlogits;
            const double loss = kern::softmax_cross_entropy(logits, batch_targets, &dlogits, cw);
            if (!std::isfinite(loss))
                throw std::runtime_error("fit: non-finite loss at step " + std::to_string(step) +
                                         " (lr " + std::to_string(lr) + ")");
            model.backward(dlogits, cache);
            lr = onecycle_lr(step, total_steps, config);
            opt.step(lr);
            opt.zero_grads();
            loss_sum += loss;
            ++batches;
            ++step;
        }

        EpochStats es;
        es.epoch = int(epoch);
        es.mean_loss = batches ? loss_sum / double(batches) : 0.0;
        es.last_lr = lr;
        if (val) {
            EvalResult r = evaluate(model, *val);
            es.val_miou = r.iou.miou;
            if (es.val_miou > history.best_val_miou) {
                history.best_val_miou = es.val_miou;
                if (!options.checkpoint_dir.empty()) {
                    history.best_checkpoint = (ckpt_dir / "best.safetensors").string();
                    save_checkpoint(history.best_checkpoint, model, &opt, step);
                }
            }
        }
        history.epochs.push_back(es);
        if (options.verbose) {
            std::string line = "epoch " + std::to_string(epoch) +
                               " loss " + std::to_string(es.mean_loss) + " lr " + std::to_string(lr);
            if (val) line += " val_miou " + std::to_string(es.val_miou);
            std::puts(line.c_str());
        }
    }
    if (!options.checkpoint_dir.empty())
        save_checkpoint((ckpt_dir / "last.safetensors").string(), model, &opt, step);
    return history;
}

EvalResult evaluate(FcbNet& model, const Dataset& dataset) {
    if (dataset.size() == 0) throw std::invalid_argument("evaluate: empty split");
    ConfusionMatrix cm(model.decoder().num_classes());
    EvalResult result;
    double loss_weighted = 0.0;
    for (size_t i = 0; i < dataset.size(); ++i) {
        TrainSample s = dataset.get(i);
        Tensor input = add_batch_dim(s.image);
        const auto t0 = std::chrono::steady_clock::now();
        Tensor logits = model.forward(input);
        const auto t1 = std::chrono::steady_clock::now();
        result.latency.samples_s.push_back(std::chrono::duration<double>(t1 - t0).count());
        const double loss = kern::softmax_cross_entropy(logits, s.target, nullptr);
        cm.accumulate(kern::argmax_channels(logits), s.target);
        loss_weighted += loss * double(s.target.size());
        result.pixels += int64_t(s.target.size());
    }
    result.iou = iou_scores(cm);
    result.mean_loss = loss_weighted / double(result.pixels);

    std::vector<double> sorted = result.latency.samples_s;
    std::sort(sorted.begin(), sorted.end());
    double sum = 0.0;
    for (double v : sorted) sum += v;
    const size_t m = sorted.size();
    result.latency.mean_s = sum / double(m);
    result.latency.median_s = (m % 2 == 1) ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
    result.latency.p95_s = sorted[std::min(size_t(std::ceil(0.95 * double(m))) - 1, m - 1)];
    return result;
}

void save_checkpoint(const std::string& path, FcbNet& model, const AdamW* opt, int64_t step) {
    std::map<std::string, const Tensor*> tensors;
    ParamList params = model.trainable_params();
    for (const auto& p : params) tensors[p.name] = p.value;
    for (const auto& [name, t] : model.buffers()) tensors[name] = t;
    // the frozen backbone too, so a restore stands on its own
    for (const auto& [name, t] : model.backbone().named_tensors()) tensors["backbone." + name] = t;
    if (opt) {
        const ParamList& op = opt->params();
        for (size_t i = 0; i < op.size(); ++i) {
            tensors["opt.m." + op[i].name] = &opt->exp_avg(i);
            tensors["opt.v." + op[i].name] = &opt->exp_avg_sq(i);
        }
    }
    char fp[32];
    std::snprintf(fp, sizeof fp, "%016llx",
                  static_cast<unsigned long long>(model_fingerprint(model.config())));
    save_safetensors(path, tensors, {{"fingerprint", fp}});

    nlohmann::json sidecar = {{"fingerprint", fp},
                              {"step", step},
                              {"optimizer_steps", opt ? opt->t() : 0},
                              {"format", 1}};
    std::ofstream out(path + ".json");
    if (!out) throw std::runtime_error("cannot write checkpoint sidecar: " + path + ".json");
    out << sidecar.dump(2) << "\n";
}

int64_t load_checkpoint(const std::string& path, FcbNet& model, AdamW* opt) {
    std::map<std::string, std::string> meta;
    std::map<std::string, Tensor> tensors = load_safetensors(path, &meta);

    char fp[32];
    std::snprintf(fp, sizeof fp, "%016llx",
                  static_cast<unsigned long long>(model_fingerprint(model.config())));
    const auto it = meta.find("fingerprint");
    if (it == meta.end() || it->second != fp)
        throw std::runtime_error("checkpoint fingerprint mismatch: file " +
                                 (it == meta.end() ? std::string("<missing>") : it->second) +
                                 " vs model " + fp);

    auto assign = [&](const std::string& name, Tensor* dst) {
        auto f = tensors.find(name);
        if (f == tensors.end()) throw std::runtime_error("checkpoint missing tensor: " + name);
        if (!f->second.same_shape(*dst))
            throw std::runtime_error("checkpoint shape mismatch for " + name);
        *dst = std::move(f->second);
    };

    for (const auto& p : model.trainable_params()) assign(p.name, p.value);
    for (const auto& [name, t] : model.buffers()) assign(name, t);
    for (const auto& [name, t] : model.backbone().named_tensors_mut()) assign("backbone." + name, t);
    if (opt) {
        const ParamList& op = opt->params();
        for (size_t i = 0; i < op.size(); ++i) {
            assign("opt.m." + op[i].name, &opt->exp_avg(i));
            assign("opt.v." + op[i].name, &opt->exp_avg_sq(i));
        }
    }

    int64_t step = 0;
    std::ifstream in(path + ".json");
    if (in) {
        nlohmann::json sidecar = nlohmann::json::parse(in, nullptr, false);
        if (!sidecar.is_discarded()) {
            step = sidecar.value("step", int64_t(0));
            if (opt) opt->set_t(sidecar.value("optimizer_steps", int64_t(0)));
        }
    }
    return step;
}

}  // namespace fcbnet
