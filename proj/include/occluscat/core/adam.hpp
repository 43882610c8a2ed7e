#pragma once

#include <cmath>
#include <unordered_map>
#include <vector>

#include "occluscat/core/tape.hpp"

namespace occluscat::ag {

// Adam with bias correction. State is keyed by parameter address; parameters
// must outlive the optimizer.
class Adam {
  public:
    explicit Adam(float lr = 3e-4f, float beta1 = 0.9f, float beta2 = 0.999f,
                  float eps = 1e-8f)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void set_lr(float lr) { lr_ = lr; }
    float lr() const { return lr_; }
    int64_t steps() const { return t_; }

    void step(std::vector<Parameter*>& params) {
        ++t_;
        double bc1 = 1.0 - std::pow(static_cast<double>(beta1_), static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(static_cast<double>(beta2_), static_cast<double>(t_));
        for (Parameter* p : params) {
            State& s = state_[p];
            if (!s.m.defined()) {
                s.m = Tensor::zeros(p->value.shape());
                s.v = Tensor::zeros(p->value.shape());
            }
            float* w = p->value.data();
            float* g = p->grad.data();
            float* m = s.m.data();
            float* v = s.v.data();
            for (int64_t i = 0; i < p->value.numel(); ++i) {
                m[i] = beta1_ * m[i] + (1.0f - beta1_) * g[i];
                v[i] = beta2_ * v[i] + (1.0f - beta2_) * g[i] * g[i];
                float mhat = static_cast<float>(m[i] / bc1);
                float vhat = static_cast<float>(v[i] / bc2);
                w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
            p->zero_grad();
        }
    }

  private:
    struct State {
        Tensor m, v;
    };
    float lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::unordered_map<Parameter*, State> state_;
};

// Cosine decay from base_lr to floor_ratio*base_lr over total_steps.
inline float cosine_lr(float base_lr, int64_t step, int64_t total_steps,
                       float floor_ratio = 0.1f) {
    if (total_steps <= 1) return base_lr;
    double x = static_cast<double>(step) / static_cast<double>(total_steps - 1);
    if (x > 1.0) x = 1.0;
    double c = 0.5 * (1.0 + std::cos(M_PI * x));
    return static_cast<float>(base_lr * (floor_ratio + (1.0 - floor_ratio) * c));
}

}  // namespace occluscat::ag
