#include <stdexcept>

#include "fcbnet/metrics.hpp"

namespace fcbnet {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : num_classes_(num_classes), counts_(size_t(num_classes) * num_classes, 0) {
    if (num_classes < 2) throw std::invalid_argument("ConfusionMatrix: needs at least 2 classes");
}

void ConfusionMatrix::accumulate(const std::vector<int32_t>& pred,
                                 const std::vector<int32_t>& target) {
    if (pred.size() != target.size())
        throw std::invalid_argument("ConfusionMatrix: prediction/target size mismatch");
    for (size_t i = 0; i < pred.size(); ++i) {
        const int32_t p = pred[i], t = target[i];
        if (p < 0 || p >= num_classes_ || t < 0 || t >= num_classes_)
            throw std::invalid_argument("ConfusionMatrix: label out of range");
        ++counts_[size_t(t) * num_classes_ + p];
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.num_classes_ != num_classes_)
        throw std::invalid_argument("ConfusionMatrix: class-count mismatch in merge");
    for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

int64_t ConfusionMatrix::total() const {
    int64_t n = 0;
    for (int64_t c : counts_) n += c;
    return n;
}

IouReport iou_scores(const ConfusionMatrix& cm) {
    const int k = cm.num_classes();
    IouReport r;
    r.per_class.resize(k);
    r.absent.resize(k, false);
    double sum = 0.0;
    for (int c = 0; c < k; ++c) {
        const int64_t tp = cm.count(c, c);
        int64_t fp = 0, fn = 0;
        for (int o = 0; o < k; ++o) {
            if (o == c) continue;
            fp += cm.count(o, c);
            fn += cm.count(c, o);
        }
        const int64_t denom = tp + fp + fn;
        if (denom == 0) {
            r.per_class[c] = 1.0;  // vacuously perfect
            r.absent[c] = true;
        } else {
            r.per_class[c] = double(tp) / double(denom);
        }
        sum += r.per_class[c];
    }
    r.miou = sum / double(k);
    return r;
}

}  // namespace fcbnet
