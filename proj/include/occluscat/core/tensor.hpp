#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <vector>

#include "occluscat/core/common.hpp"
#include "occluscat/core/rng.hpp"

namespace occluscat {

// Dense float32 tensor, always contiguous row-major. Storage is shared so
// reshapes are free; ops never mutate their inputs.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape)
        : shape_(std::move(shape)),
          buf_(std::make_shared<std::vector<float>>(count(shape_), 0.0f)) {}

    Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, float v) {
        Tensor t(std::move(shape));
        std::fill(t.data(), t.data() + t.numel(), v);
        return t;
    }

    static Tensor from(std::vector<int> shape, std::vector<float> values) {
        Tensor t;
        t.shape_ = std::move(shape);
        check(static_cast<int64_t>(values.size()) == count(t.shape_),
              "Tensor::from: value count does not match shape");
        t.buf_ = std::make_shared<std::vector<float>>(std::move(values));
        return t;
    }

    static Tensor randn(std::vector<int> shape, Rng& rng, float stddev = 1.0f) {
        Tensor t(std::move(shape));
        float* p = t.data();
        for (int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<float>(rng.normal(0.0, stddev));
        return t;
    }

    static Tensor uniform(std::vector<int> shape, Rng& rng, float lo, float hi) {
        Tensor t(std::move(shape));
        float* p = t.data();
        for (int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<float>(rng.uniform(lo, hi));
        return t;
    }

    bool defined() const { return buf_ != nullptr; }
    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int64_t numel() const { return buf_ ? static_cast<int64_t>(buf_->size()) : 0; }

    float* data() { return buf_->data(); }
    const float* data() const { return buf_->data(); }
    float& at(int64_t i) { return (*buf_)[static_cast<size_t>(i)]; }
    float at(int64_t i) const { return (*buf_)[static_cast<size_t>(i)]; }

    // Shares storage; only the shape changes.
    Tensor reshaped(std::vector<int> shape) const {
        check(count(shape) == numel(), "reshape: element count mismatch");
        Tensor t;
        t.shape_ = std::move(shape);
        t.buf_ = buf_;
        return t;
    }

    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.buf_ = std::make_shared<std::vector<float>>(*buf_);
        return t;
    }

    void fill(float v) { std::fill(buf_->begin(), buf_->end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
        os << "]";
        return os.str();
    }

    static int64_t count(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int d : shape) {
            check(d >= 0, "negative dimension");
            n *= d;
        }
        return n;
    }

  private:
    std::vector<int> shape_;
    std::shared_ptr<std::vector<float>> buf_;
};

inline bool allclose(const Tensor& a, const Tensor& b, float atol = 1e-6f, float rtol = 0.0f) {
    if (!a.same_shape(b)) return false;
    for (int64_t i = 0; i < a.numel(); ++i) {
        float d = std::abs(a.at(i) - b.at(i));
        if (d > atol + rtol * std::abs(b.at(i))) return false;
    }
    return true;
}

}  // namespace occluscat
