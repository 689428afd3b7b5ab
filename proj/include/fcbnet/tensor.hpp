#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fcbnet {

// Dense float32 tensor, row-major contiguous. Feature maps use NCHW order.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int64_t> shape)
        : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0f) {}

    Tensor(std::vector<int64_t> shape, float fill_value)
        : shape_(std::move(shape)), data_(checked_numel(shape_), fill_value) {}

    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int64_t> shape, float v) { return Tensor(std::move(shape), v); }

    const std::vector<int64_t>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }

    int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }

    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // NCHW accessor, bounds-unchecked.
    float& at(int64_t n, int64_t c, int64_t h, int64_t w) {
        return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }
    float at(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(float v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(0.0f); }

    std::string shape_str() const {
        std::string s = "(";
        for (size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape_[i]);
        }
        return s + ")";
    }

private:
    static int64_t checked_numel(const std::vector<int64_t>& shape) {
        int64_t n = 1;
        for (int64_t d : shape) {
            if (d < 0) throw std::invalid_argument("tensor dimension must be non-negative");
            n *= d;
        }
        return n;
    }

    std::vector<int64_t> shape_;
    std::vector<float> data_;
};

inline void require_shape(const Tensor& t, const std::vector<int64_t>& shape, const char* what) {
    if (t.shape() != shape) {
        Tensor expect(shape);
        throw std::invalid_argument(std::string(what) + ": expected shape " + expect.shape_str() +
                                    ", got " + t.shape_str());
    }
}

}  // namespace fcbnet
