#pragma once

#include <deque>
#include <map>
#include <string>
#include <vector>

#include "occluscat/core/rng.hpp"
#include "occluscat/core/tape.hpp"

namespace occluscat::ag {

// Owns a model's parameters with stable addresses and name-keyed access
// (checkpoints are stored per tensor name).
class ParamRegistry {
  public:
    Parameter& add(const std::string& name, Tensor init) {
        check(by_name_.find(name) == by_name_.end(), "duplicate parameter: " + name);
        store_.emplace_back(name, std::move(init));
        by_name_[name] = &store_.back();
        return store_.back();
    }

    Parameter& get(const std::string& name) {
        auto it = by_name_.find(name);
        check(it != by_name_.end(), "unknown parameter: " + name);
        return *it->second;
    }

    std::vector<Parameter*> all() {
        std::vector<Parameter*> out;
        for (Parameter& p : store_) out.push_back(&p);
        return out;
    }

    const std::map<std::string, Parameter*>& by_name() const { return by_name_; }

    int64_t total_size() const {
        int64_t n = 0;
        for (const Parameter& p : store_) n += p.value.numel();
        return n;
    }

  private:
    std::deque<Parameter> store_;
    std::map<std::string, Parameter*> by_name_;
};

// Kaiming-normal init for convolution / linear weights.
inline Tensor he_init(std::vector<int> shape, Rng& rng, float gain = 1.0f) {
    int64_t fan_in = 1;
    for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    float stddev = gain * std::sqrt(2.0f / static_cast<float>(fan_in));
    return Tensor::randn(std::move(shape), rng, stddev);
}

}  // namespace occluscat::ag
