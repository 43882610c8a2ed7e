#pragma once

#include <string>

#include "occluscat/core/conv.hpp"
#include "occluscat/core/ops.hpp"
#include "occluscat/core/params.hpp"

namespace occluscat::nn {

inline int gn_groups(int channels) {
    for (int g : {8, 4, 2})
        if (channels % g == 0) return g;
    return 1;
}

struct ConvGN {
    ag::Parameter* w = nullptr;
    ag::Parameter* b = nullptr;
    ag::Parameter* gamma = nullptr;
    ag::Parameter* beta = nullptr;
    int stride = 1, pad = 1, groups = 1;
    bool transposed = false;

    ag::Id forward(ag::Tape& t, ag::Id x, bool relu_after = true) const {
        ag::Id y = transposed
                       ? ag::conv_transpose2d(t, x, t.leaf(*w), t.leaf(*b), stride, pad)
                       : ag::conv2d(t, x, t.leaf(*w), t.leaf(*b), stride, pad);
        y = ag::group_norm(t, y, t.leaf(*gamma), t.leaf(*beta), groups);
        return relu_after ? ag::relu(t, y) : y;
    }
};

inline ConvGN make_conv_gn(ag::ParamRegistry& reg, Rng& rng, const std::string& name, int cin,
                           int cout, int k, int stride, int pad, bool transposed = false) {
    ConvGN c;
    std::vector<int> wshape = transposed ? std::vector<int>{cin, cout, k, k}
                                         : std::vector<int>{cout, cin, k, k};
    c.w = &reg.add(name + ".w", ag::he_init(wshape, rng));
    c.b = &reg.add(name + ".b", Tensor::zeros({cout}));
    c.gamma = &reg.add(name + ".gn_gamma", Tensor::full({cout}, 1.0f));
    c.beta = &reg.add(name + ".gn_beta", Tensor::zeros({cout}));
    c.stride = stride;
    c.pad = pad;
    c.groups = gn_groups(cout);
    c.transposed = transposed;
    return c;
}

// Single-conv residual unit: y = relu(x + GN(conv(x))).
struct ResUnit {
    ConvGN conv;
    ag::Id forward(ag::Tape& t, ag::Id x) const {
        return ag::relu(t, ag::add(t, x, conv.forward(t, x, /*relu_after=*/false)));
    }
};

}  // namespace occluscat::nn
