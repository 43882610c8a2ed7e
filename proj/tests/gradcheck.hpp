#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "occluscat/core/adam.hpp"
#include "occluscat/core/tape.hpp"

namespace occluscat::testing {

// Rebuilds the graph per evaluation so perturbed parameter values are seen.
using LossBuilder = std::function<ag::Tape::Id(ag::Tape&)>;

struct GradCheckResult {
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;
    int checked = 0;
};

inline double eval_loss(const LossBuilder& build) {
    ag::Tape t;
    return static_cast<double>(t.val(build(t)).at(0));
}

// Central-difference check of d(loss)/d(param) for every element of `p`.
inline GradCheckResult gradcheck(const LossBuilder& build, ag::Parameter& p,
                                 float eps = 1e-3f) {
    p.zero_grad();
    {
        ag::Tape t;
        t.backward(build(t));
    }
    GradCheckResult res;
    for (int64_t i = 0; i < p.value.numel(); ++i) {
        float saved = p.value.at(i);
        p.value.at(i) = saved + eps;
        double lp = eval_loss(build);
        p.value.at(i) = saved - eps;
        double lm = eval_loss(build);
        p.value.at(i) = saved;
        double fd = (lp - lm) / (2.0 * static_cast<double>(eps));
        double an = static_cast<double>(p.grad.at(i));
        double abs_err = std::abs(fd - an);
        double rel_err = abs_err / std::max(1.0, std::max(std::abs(fd), std::abs(an)));
        res.max_abs_err = std::max(res.max_abs_err, abs_err);
        res.max_rel_err = std::max(res.max_rel_err, rel_err);
        ++res.checked;
    }
    return res;
}

}  // namespace occluscat::testing
