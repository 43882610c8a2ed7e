#pragma once

#include <vector>

#include "occluscat/metrics/farneback.hpp"
#include "occluscat/metrics/psnr_ssim.hpp"

namespace occluscat::metrics {

// Optical flow difference per prediction step: mean over pixels of the
// squared flow difference (both components summed). Flows are computed
// between consecutive frames, anchored at the shared last context frame.
// Inputs are grayscale images in the 0..255 range.
inline std::vector<double> ofd_per_step(const std::vector<std::vector<float>>& pred,
                                        const std::vector<std::vector<float>>& gt,
                                        const std::vector<float>& last_context, int height,
                                        int width,
                                        const FarnebackParams& params = FarnebackParams()) {
    check(pred.size() == gt.size(), "ofd: prediction/gt count mismatch");
    check(!pred.empty(), "ofd: need at least one step");
    std::vector<double> out;
    const std::vector<float>* prev_pred = &last_context;
    const std::vector<float>* prev_gt = &last_context;
    for (size_t t = 0; t < pred.size(); ++t) {
        FlowField fp = farneback_flow(*prev_pred, pred[t], height, width, params);
        FlowField fg = farneback_flow(*prev_gt, gt[t], height, width, params);
        double acc = 0.0;
        int64_t hw = static_cast<int64_t>(height) * width;
        for (int64_t i = 0; i < hw; ++i) {
            double dh = static_cast<double>(fp.values[static_cast<size_t>(i) * 2]) -
                        fg.values[static_cast<size_t>(i) * 2];
            double dw = static_cast<double>(fp.values[static_cast<size_t>(i) * 2 + 1]) -
                        fg.values[static_cast<size_t>(i) * 2 + 1];
            acc += dh * dh + dw * dw;
        }
        out.push_back(acc / static_cast<double>(hw));
        prev_pred = &pred[t];
        prev_gt = &gt[t];
    }
    return out;
}

inline double ofd(const std::vector<std::vector<float>>& pred,
                  const std::vector<std::vector<float>>& gt,
                  const std::vector<float>& last_context, int height, int width,
                  const FarnebackParams& params = FarnebackParams()) {
    std::vector<double> steps = ofd_per_step(pred, gt, last_context, height, width, params);
    double sum = 0.0;
    for (double v : steps) sum += v;
    return sum / static_cast<double>(steps.size());
}

}  // namespace occluscat::metrics
