#ifndef SEGFLOW_GRADCHECK_HPP_
#define SEGFLOW_GRADCHECK_HPP_

#include <cmath>
#include <string>
#include <vector>

#include "segflow/ops.hpp"
#include "segflow/rng.hpp"

// Central finite differences vs. analytic gradients for every differentiable
// operator in ops.hpp. Tensor-valued operators are scalarized through a fixed
// random linear readout so one scalar checks all output coordinates at once.
// Coordinates where the scalarized op is not differentiable (bilinear sample
// positions on the integer grid, including clamped border samples) are
// reported and skipped rather than failed.

namespace segflow {

enum class OpId {
    normalize_masks,
    masked_pool,
    compose_segment_flow,
    warp_backward,
    ssim_loss,
    reconstruction_loss,
};

inline const char* op_name(OpId op) {
    switch (op) {
        case OpId::normalize_masks: return "normalize_masks";
        case OpId::masked_pool: return "masked_pool";
        case OpId::compose_segment_flow: return "compose_segment_flow";
        case OpId::warp_backward: return "warp_backward";
        case OpId::ssim_loss: return "ssim_loss";
        case OpId::reconstruction_loss: return "reconstruction_loss";
    }
    return "?";
}

struct GradCheckPoint {
    OpId op;
    std::vector<Tensor<double>> inputs;  // op-specific order, see make_random_point
    Tensor<double> readout;              // scalarization weights (empty for scalar ops)
    LossConfig loss_cfg;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    int checked = 0;
    int skipped = 0;
};

namespace gradcheck_detail {

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
    return s;
}

inline double eval_scalar(const GradCheckPoint& pt) {
    switch (pt.op) {
        case OpId::normalize_masks:
            return dot(normalize_masks(pt.inputs[0]), pt.readout);
        case OpId::masked_pool:
            return dot(masked_pool(pt.inputs[0], pt.inputs[1]), pt.readout);
        case OpId::compose_segment_flow:
            return dot(compose_segment_flow(pt.inputs[0], pt.inputs[1]), pt.readout);
        case OpId::warp_backward:
            return dot(warp_backward(pt.inputs[0], pt.inputs[1]), pt.readout);
        case OpId::ssim_loss:
            return ssim_loss(pt.inputs[0], pt.inputs[1], pt.loss_cfg);
        case OpId::reconstruction_loss:
            return reconstruction_loss(pt.inputs[0], pt.inputs[1], pt.inputs[2], pt.inputs[3],
                                       pt.loss_cfg);
    }
    return 0.0;
}

inline std::vector<Tensor<double>> eval_analytic(const GradCheckPoint& pt) {
    switch (pt.op) {
        case OpId::normalize_masks: {
            const auto probs = normalize_masks(pt.inputs[0]);
            return {normalize_masks_backward(probs, pt.readout)};
        }
        case OpId::masked_pool: {
            auto [dv, ds] = masked_pool_backward(pt.inputs[0], pt.inputs[1], pt.readout, 0.0);
            return {std::move(dv), std::move(ds)};
        }
        case OpId::compose_segment_flow: {
            auto [dvecs, ds] =
                compose_segment_flow_backward(pt.inputs[0], pt.inputs[1], pt.readout);
            return {std::move(dvecs), std::move(ds)};
        }
        case OpId::warp_backward: {
            auto [dx, df] = warp_backward_grad(pt.inputs[0], pt.inputs[1], pt.readout);
            return {std::move(dx), std::move(df)};
        }
        case OpId::ssim_loss: {
            auto [dxh, dx] = ssim_loss_grad(pt.inputs[0], pt.inputs[1], pt.loss_cfg);
            return {std::move(dxh), std::move(dx)};
        }
        case OpId::reconstruction_loss: {
            auto g = reconstruction_loss_grad(pt.inputs[0], pt.inputs[1], pt.inputs[2],
                                              pt.inputs[3], pt.loss_cfg);
            return {std::move(g.dx_i), std::move(g.dx_j), std::move(g.df_ij),
                    std::move(g.df_ji)};
        }
    }
    return {};
}

// Marks flow coordinates whose bilinear sample positions sit within `band`
// of an integer grid line (clamp boundaries included): finite differences
// straddle a kink there. `factor` is the flow upsampling factor.
inline Tensor<double> flow_skip_mask(const Tensor<double>& image, const Tensor<double>& flow,
                                     int factor, double band) {
    const int H = image.dim(1), W = image.dim(2);
    const Tensor<double> flow_up = upsample_flow(flow, factor);
    Tensor<double> fine_unsafe({2, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double sx = x + flow_up(0, y, x);
            const double sy = y + flow_up(1, y, x);
            if (std::abs(sx - std::round(sx)) <= band) fine_unsafe(0, y, x) = 1.0;
            if (std::abs(sy - std::round(sy)) <= band) fine_unsafe(1, y, x) = 1.0;
        }
    if (factor == 1) return fine_unsafe;
    // a coarse coordinate is unsafe if any fine pixel it influences is unsafe
    Tensor<double> coarse = bilinear_resize_backward(flow.shape(), fine_unsafe);
    for (size_t i = 0; i < coarse.numel(); ++i) coarse[i] = coarse[i] > 0.0 ? 1.0 : 0.0;
    return coarse;
}

}  // namespace gradcheck_detail

inline GradCheckResult check_gradient(const GradCheckPoint& pt, double eps) {
    if (!(eps > 0.0 && eps <= 1e-2))
        throw invalid_input("check_gradient: eps must be in (0, 1e-2]");
    for (const auto& t : pt.inputs)
        if (!t.all_finite()) throw invalid_input("check_gradient: non-finite input point");

    using namespace gradcheck_detail;
    const auto analytic = eval_analytic(pt);

    // skip masks per input (1 = skip)
    std::vector<Tensor<double>> skip;
    for (const auto& t : pt.inputs) skip.emplace_back(t.shape());
    const double band = 4.0 * eps;
    if (pt.op == OpId::warp_backward) {
        skip[1] = flow_skip_mask(pt.inputs[0], pt.inputs[1], 1, band);
    } else if (pt.op == OpId::reconstruction_loss) {
        const int factor =
            detail::flow_upsample_factor(pt.inputs[0].shape(), pt.inputs[2].shape());
        skip[2] = flow_skip_mask(pt.inputs[0], pt.inputs[2], factor, band * factor);
        skip[3] = flow_skip_mask(pt.inputs[1], pt.inputs[3], factor, band * factor);
    }

    GradCheckResult res;
    GradCheckPoint work = pt;
    for (size_t t = 0; t < pt.inputs.size(); ++t) {
        for (size_t i = 0; i < pt.inputs[t].numel(); ++i) {
            if (skip[t][i] != 0.0) {
                ++res.skipped;
                continue;
            }
            const double saved = work.inputs[t][i];
            work.inputs[t][i] = saved + eps;
            const double fp = eval_scalar(work);
            work.inputs[t][i] = saved - eps;
            const double fm = eval_scalar(work);
            work.inputs[t][i] = saved;
            const double g_num = (fp - fm) / (2.0 * eps);
            const double g_ana = analytic[t][i];
            const double rel =
                std::abs(g_ana - g_num) / std::max({1.0, std::abs(g_ana), std::abs(g_num)});
            res.max_rel_error = std::max(res.max_rel_error, rel);
            ++res.checked;
        }
    }
    return res;
}

// Random evaluation points with shapes small enough for dense FD sweeps.
inline GradCheckPoint make_random_point(OpId op, Rng& rng) {
    GradCheckPoint pt;
    pt.op = op;
    auto randn = [&rng](std::vector<int> shape, double scale) {
        Tensor<double> t(std::move(shape));
        for (size_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
        return t;
    };
    auto rand01 = [&rng](std::vector<int> shape) {
        Tensor<double> t(std::move(shape));
        for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
        return t;
    };
    auto readout = [&rng](const std::vector<int>& shape) {
        Tensor<double> t(shape);
        for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1.0, 1.0);
        return t;
    };
    switch (op) {
        case OpId::normalize_masks: {
            pt.inputs.push_back(randn({5, 6, 7}, 1.5));
            pt.readout = readout({5, 6, 7});
            break;
        }
        case OpId::masked_pool: {
            pt.inputs.push_back(randn({7, 6, 5}, 1.0));                      // V
            pt.inputs.push_back(normalize_masks(randn({4, 6, 5}, 1.0)));     // S
            pt.readout = readout({4, 7});
            break;
        }
        case OpId::compose_segment_flow: {
            Tensor<double> vecs({5, 2});
            for (size_t i = 0; i < vecs.numel(); ++i) vecs[i] = rng.uniform(-2.0, 2.0);
            pt.inputs.push_back(std::move(vecs));
            pt.inputs.push_back(normalize_masks(randn({5, 6, 7}, 1.0)));
            pt.readout = readout({2, 6, 7});
            break;
        }
        case OpId::warp_backward: {
            pt.inputs.push_back(rand01({3, 8, 8}));
            Tensor<double> f({2, 8, 8});
            for (size_t i = 0; i < f.numel(); ++i) f[i] = rng.uniform(-1.5, 1.5);
            pt.inputs.push_back(std::move(f));
            pt.readout = readout({3, 8, 8});
            break;
        }
        case OpId::ssim_loss: {
            pt.inputs.push_back(rand01({3, 8, 8}));
            pt.inputs.push_back(rand01({3, 8, 8}));
            break;
        }
        case OpId::reconstruction_loss: {
            pt.inputs.push_back(rand01({3, 8, 8}));
            pt.inputs.push_back(rand01({3, 8, 8}));
            const bool coarse = rng.bernoulli(0.5);
            const int fh = coarse ? 4 : 8;
            const double span = coarse ? 0.7 : 1.2;
            for (int k = 0; k < 2; ++k) {
                Tensor<double> f({2, fh, fh});
                for (size_t i = 0; i < f.numel(); ++i) f[i] = rng.uniform(-span, span);
                pt.inputs.push_back(std::move(f));
            }
            break;
        }
    }
    return pt;
}

}  // namespace segflow

#endif  // SEGFLOW_GRADCHECK_HPP_
