#pragma once

#include <cstdint>
#include <vector>

namespace fcbnet {

// counts_[t * k + p] = pixels with target t predicted p
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes);

    void accumulate(const std::vector<int32_t>& pred, const std::vector<int32_t>& target);
    void merge(const ConfusionMatrix& other);

    int num_classes() const { return num_classes_; }
    int64_t count(int target, int pred) const { return counts_[target * num_classes_ + pred]; }
    int64_t total() const;

private:
    int num_classes_;
    std::vector<int64_t> counts_;
};

struct IouReport {
    std::vector<double> per_class;
    double miou = 0.0;
    // classes absent from both prediction and target score 1.0 and are flagged
    std::vector<bool> absent;
};

IouReport iou_scores(const ConfusionMatrix& cm);

}  // namespace fcbnet
