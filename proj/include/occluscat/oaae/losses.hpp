#pragma once

#include <vector>

#include "occluscat/oaae/model.hpp"

namespace occluscat::oaae {

// VQ and commitment terms for one class's batch of cells, at the selected
// codebook entries. Stop-gradient placement: the VQ term reaches only the
// codebook, the commitment term only the encoder.
struct VqLosses {
    ag::Id vq;
    ag::Id commitment;
    ag::Id quantized_st;  // straight-through output for the decoder path
    std::vector<int> indices;
};

inline VqLosses vq_and_commitment_loss(ag::Tape& t, ag::Id cells, ag::Parameter& codebook) {
    std::vector<int> idx = quantize_indices(t.val(cells), codebook.value);
    ag::Id cb = t.leaf(codebook);
    ag::Id selected = ag::gather_rows(t, cb, idx);
    ag::Id vq = ag::sum_squares_diff(t, t.input(t.val(cells)), selected);
    ag::Id commit = ag::sum_squares_diff(t, cells, t.input(t.val(selected)));
    ag::Id st = ag::straight_through(t, cells, selected);
    return {vq, commit, st, std::move(idx)};
}

// Gaussian NLL up to the additive constant: plain MSE over every channel of
// the variant's stack.
inline ag::Id reconstruction_loss(ag::Tape& t, ag::Id x, ag::Id xhat) {
    return ag::mse_loss(t, x, xhat);
}

// Weighted feature-space distance over the extractor's layers. Features are
// channel-normalized and each layer term is averaged over positions, so the
// random extractor's scale does not leak into the loss.
inline ag::Id perceptual_loss(ag::Tape& t, ag::Id rgb_a, ag::Id rgb_b,
                              const PerceptualExtractor& extractor,
                              const std::vector<float>& layer_weights = {}) {
    check(t.val(rgb_a).dim(1) == 3 && t.val(rgb_b).dim(1) == 3,
          "perceptual_loss: expects RGB inputs");
    std::vector<float> w = layer_weights;
    if (w.empty()) w.assign(static_cast<size_t>(extractor.layers()), 1.0f);
    check(static_cast<int>(w.size()) == extractor.layers(),
          "perceptual_loss: weight count mismatch");
    std::vector<ag::Id> fa = extractor.features(t, rgb_a);
    std::vector<ag::Id> fb = extractor.features(t, rgb_b);
    ag::Id total = t.input(Tensor::zeros({1}));
    for (size_t l = 0; l < fa.size(); ++l) {
        if (w[l] == 0.0f) continue;
        ag::Id na = ag::channel_l2_normalize(t, fa[l]);
        ag::Id nb = ag::channel_l2_normalize(t, fb[l]);
        const Tensor& shape = t.val(na);
        float positions = static_cast<float>(shape.dim(0)) * shape.dim(2) * shape.dim(3);
        ag::Id term = ag::scale(t, ag::sum_squares_diff(t, na, nb), w[l] / positions);
        total = ag::add(t, total, term);
    }
    return total;
}

}  // namespace occluscat::oaae
