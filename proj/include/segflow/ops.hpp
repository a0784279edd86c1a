#ifndef SEGFLOW_OPS_HPP_
#define SEGFLOW_OPS_HPP_

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "segflow/errors.hpp"
#include "segflow/tensor.hpp"

// The differentiable operators that bind appearance and motion into segment
// flow and supervise them by view synthesis. All operators are pure; each
// forward has an explicit analytic-gradient companion used both by training
// and by the finite-difference harness in gradcheck.hpp.
//
// Conventions:
//   images       [C,H,W], values in [0,1]
//   mask stacks  [c,h,w], per-pixel softmax over the c channels
//   flow fields  [2,h,w], channel 0 = dx, channel 1 = dy, units = pixels at
//                the resolution they were composed at
//   flow vectors [c,2], row m = (dx, dy) for segment m

namespace segflow {

struct LossConfig {
    int ssim_window = 3;
    double c1 = 0.0001;   // (0.01)^2 on [0,1]-valued images
    double c2 = 0.0009;   // (0.03)^2
    bool symmetric = true;
};

inline void validate_loss_config(const LossConfig& cfg) {
    if (cfg.ssim_window < 3 || cfg.ssim_window % 2 == 0)
        throw invalid_input("LossConfig: ssim_window must be odd and >= 3");
    if (cfg.c1 <= 0.0 || cfg.c2 <= 0.0)
        throw invalid_input("LossConfig: c1 and c2 must be > 0");
}

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw invalid_input(msg);
}

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

}  // namespace detail

// ---------------------------------------------------------------------------
// normalize_masks: softmax across the channel axis
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> normalize_masks(const Tensor<T>& logits) {
    detail::require(logits.ndim() == 3, "normalize_masks: logits must be [c,h,w]");
    if (!logits.all_finite())
        throw invalid_input("normalize_masks: non-finite logits");
    const int c = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
    Tensor<T> probs(logits.shape());
    const size_t plane = static_cast<size_t>(h) * w;
    for (size_t p = 0; p < plane; ++p) {
        T maxv = logits[p];
        for (int m = 1; m < c; ++m) maxv = std::max(maxv, logits[m * plane + p]);
        T sum = T(0);
        for (int m = 0; m < c; ++m) {
            const T e = std::exp(logits[m * plane + p] - maxv);
            probs[m * plane + p] = e;
            sum += e;
        }
        for (int m = 0; m < c; ++m) probs[m * plane + p] /= sum;
    }
    return probs;
}

template <typename T>
Tensor<T> normalize_masks_backward(const Tensor<T>& probs, const Tensor<T>& dprobs) {
    Tensor<T> dlogits(probs.shape());
    const int c = probs.dim(0);
    const size_t plane = static_cast<size_t>(probs.dim(1)) * probs.dim(2);
    for (size_t p = 0; p < plane; ++p) {
        T dot = T(0);
        for (int m = 0; m < c; ++m) dot += dprobs[m * plane + p] * probs[m * plane + p];
        for (int m = 0; m < c; ++m)
            dlogits[m * plane + p] = probs[m * plane + p] * (dprobs[m * plane + p] - dot);
    }
    return dlogits;
}

// ---------------------------------------------------------------------------
// masked_pool: mask-weighted spatial average of motion features, one row per
// segment. The strict overload rejects (near-)zero-mass channels; training
// uses the lenient overload with a denominator epsilon instead so softmax
// masks can never crash a step.
// ---------------------------------------------------------------------------

inline constexpr double kMaskMassEpsilon = 1e-8;

template <typename T>
Tensor<T> masked_pool_eps(const Tensor<T>& V, const Tensor<T>& S, T denom_eps) {
    detail::require(V.ndim() == 3 && S.ndim() == 3, "masked_pool: V and S must be [*,h,w]");
    detail::require(V.dim(1) == S.dim(1) && V.dim(2) == S.dim(2),
                    "masked_pool: V and S must share spatial size");
    const int d = V.dim(0), c = S.dim(0);
    const size_t plane = static_cast<size_t>(V.dim(1)) * V.dim(2);
    Tensor<T> pooled({c, d});
    for (int m = 0; m < c; ++m) {
        const T* sm = S.data() + m * plane;
        T mass = T(0);
        for (size_t p = 0; p < plane; ++p) mass += sm[p];
        if (denom_eps <= T(0) && mass <= T(kMaskMassEpsilon))
            throw degenerate_mask("masked_pool: mask channel " + std::to_string(m) +
                                  " has mass " + std::to_string(static_cast<double>(mass)));
        const T denom = mass + std::max(denom_eps, T(0));
        for (int k = 0; k < d; ++k) {
            const T* vk = V.data() + k * plane;
            T acc = T(0);
            for (size_t p = 0; p < plane; ++p) acc += vk[p] * sm[p];
            pooled(m, k) = acc / denom;
        }
    }
    return pooled;
}

template <typename T>
Tensor<T> masked_pool(const Tensor<T>& V, const Tensor<T>& S) {
    return masked_pool_eps(V, S, T(0));
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> masked_pool_backward(const Tensor<T>& V, const Tensor<T>& S,
                                                     const Tensor<T>& dpooled, T denom_eps) {
    const int d = V.dim(0), c = S.dim(0);
    const size_t plane = static_cast<size_t>(V.dim(1)) * V.dim(2);
    Tensor<T> dV(V.shape());
    Tensor<T> dS(S.shape());
    for (int m = 0; m < c; ++m) {
        const T* sm = S.data() + m * plane;
        T mass = T(0);
        for (size_t p = 0; p < plane; ++p) mass += sm[p];
        const T denom = mass + std::max(denom_eps, T(0));
        // pooled[m][k] = num_k / denom with d num_k/dS(p) = V_k(p), d denom/dS(p) = 1
        for (int k = 0; k < d; ++k) {
            const T* vk = V.data() + k * plane;
            T num = T(0);
            for (size_t p = 0; p < plane; ++p) num += vk[p] * sm[p];
            const T pooled_mk = num / denom;
            const T g = dpooled(m, k);
            if (g == T(0)) continue;
            T* dvk = dV.data() + k * plane;
            T* dsm = dS.data() + m * plane;
            const T gd = g / denom;
            for (size_t p = 0; p < plane; ++p) {
                dvk[p] += gd * sm[p];
                dsm[p] += gd * (vk[p] - pooled_mk);
            }
        }
    }
    return {std::move(dV), std::move(dS)};
}

// ---------------------------------------------------------------------------
// compose_segment_flow: broadcast each segment's 2-vector over its soft mask
// and sum over segments. Per pixel the result is a convex combination of the
// segment vectors whenever the mask stack is normalized.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> compose_segment_flow(const Tensor<T>& flow_vecs, const Tensor<T>& S) {
    detail::require(flow_vecs.ndim() == 2 && flow_vecs.dim(1) == 2,
                    "compose_segment_flow: flow vectors must be [c,2]");
    detail::require(S.ndim() == 3, "compose_segment_flow: S must be [c,h,w]");
    if (flow_vecs.dim(0) != S.dim(0))
        throw invalid_input("compose_segment_flow: channel count mismatch (" +
                            std::to_string(flow_vecs.dim(0)) + " vectors vs " +
                            std::to_string(S.dim(0)) + " mask channels)");
    const int c = S.dim(0);
    const size_t plane = static_cast<size_t>(S.dim(1)) * S.dim(2);
    Tensor<T> F({2, S.dim(1), S.dim(2)});
    for (int a = 0; a < 2; ++a) {
        T* fa = F.data() + a * plane;
        for (int m = 0; m < c; ++m) {
            const T vm = flow_vecs(m, a);
            const T* sm = S.data() + m * plane;
            for (size_t p = 0; p < plane; ++p) fa[p] += vm * sm[p];
        }
    }
    return F;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> compose_segment_flow_backward(const Tensor<T>& flow_vecs,
                                                              const Tensor<T>& S,
                                                              const Tensor<T>& dF) {
    const int c = S.dim(0);
    const size_t plane = static_cast<size_t>(S.dim(1)) * S.dim(2);
    Tensor<T> dvecs(flow_vecs.shape());
    Tensor<T> dS(S.shape());
    for (int m = 0; m < c; ++m) {
        const T* sm = S.data() + m * plane;
        T* dsm = dS.data() + m * plane;
        for (int a = 0; a < 2; ++a) {
            const T* dfa = dF.data() + a * plane;
            const T vm = flow_vecs(m, a);
            T acc = T(0);
            for (size_t p = 0; p < plane; ++p) {
                acc += dfa[p] * sm[p];
                dsm[p] += dfa[p] * vm;
            }
            dvecs(m, a) = acc;
        }
    }
    return {std::move(dvecs), std::move(dS)};
}

// ---------------------------------------------------------------------------
// bilinear_resize: channel-wise bilinear resampling on half-pixel centers
// with clamp-to-edge. Linear in the input, so the backward is a scatter-add
// with the same weights.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int out_h, int out_w) {
    detail::require(x.ndim() == 3, "bilinear_resize: input must be [C,h,w]");
    detail::require(out_h >= 1 && out_w >= 1, "bilinear_resize: output size must be >= 1");
    const int C = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor<T> y({C, out_h, out_w});
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        fy = std::min(std::max(fy, 0.0), static_cast<double>(h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, h - 1);
        const T wy = static_cast<T>(fy - y0);
        for (int ox = 0; ox < out_w; ++ox) {
            double fx = (ox + 0.5) * sx - 0.5;
            fx = std::min(std::max(fx, 0.0), static_cast<double>(w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, w - 1);
            const T wx = static_cast<T>(fx - x0);
            for (int ch = 0; ch < C; ++ch) {
                const T v00 = x(ch, y0, x0), v01 = x(ch, y0, x1);
                const T v10 = x(ch, y1, x0), v11 = x(ch, y1, x1);
                const T top = v00 + wx * (v01 - v00);
                const T bot = v10 + wx * (v11 - v10);
                y(ch, oy, ox) = top + wy * (bot - top);
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> bilinear_resize_backward(const std::vector<int>& in_shape, const Tensor<T>& dy) {
    const int C = in_shape[0], h = in_shape[1], w = in_shape[2];
    const int out_h = dy.dim(1), out_w = dy.dim(2);
    Tensor<T> dx(in_shape);
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        fy = std::min(std::max(fy, 0.0), static_cast<double>(h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, h - 1);
        const T wy = static_cast<T>(fy - y0);
        for (int ox = 0; ox < out_w; ++ox) {
            double fx = (ox + 0.5) * sx - 0.5;
            fx = std::min(std::max(fx, 0.0), static_cast<double>(w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, w - 1);
            const T wx = static_cast<T>(fx - x0);
            for (int ch = 0; ch < C; ++ch) {
                const T g = dy(ch, oy, ox);
                dx(ch, y0, x0) += (T(1) - wy) * (T(1) - wx) * g;
                dx(ch, y0, x1) += (T(1) - wy) * wx * g;
                dx(ch, y1, x0) += wy * (T(1) - wx) * g;
                dx(ch, y1, x1) += wy * wx * g;
            }
        }
    }
    return dx;
}

// Flow upsampling: bilinear resize by an integer factor with offsets rescaled
// into the finer pixel grid.
template <typename T>
Tensor<T> upsample_flow(const Tensor<T>& F, int factor) {
    detail::require(F.ndim() == 3 && F.dim(0) == 2, "upsample_flow: flow must be [2,h,w]");
    detail::require(factor >= 1, "upsample_flow: factor must be >= 1");
    if (factor == 1) return F;
    Tensor<T> up = bilinear_resize(F, F.dim(1) * factor, F.dim(2) * factor);
    for (size_t i = 0; i < up.numel(); ++i) up[i] *= static_cast<T>(factor);
    return up;
}

template <typename T>
Tensor<T> upsample_flow_backward(const std::vector<int>& in_shape, const Tensor<T>& dup,
                                 int factor) {
    if (factor == 1) return dup;
    Tensor<T> dF = bilinear_resize_backward(in_shape, dup);
    for (size_t i = 0; i < dF.numel(); ++i) dF[i] *= static_cast<T>(factor);
    return dF;
}

// ---------------------------------------------------------------------------
// warp_backward: synthesize the target view by sampling the source image at
// p + F(p) with bilinear interpolation and clamp-to-edge boundaries. With
// F == 0 no interpolation arithmetic perturbs the values, so the output is
// exactly the input. Sub-gradient at integer sample positions: the gradient
// w.r.t. F is zero on the clamped side.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> warp_backward(const Tensor<T>& X, const Tensor<T>& F) {
    detail::require(X.ndim() == 3, "warp_backward: X must be [C,H,W]");
    detail::require(F.ndim() == 3 && F.dim(0) == 2, "warp_backward: F must be [2,H,W]");
    if (X.dim(1) != F.dim(1) || X.dim(2) != F.dim(2))
        throw invalid_input("warp_backward: flow must be spatially matched to the image "
                            "(upsample the flow first)");
    const int C = X.dim(0), H = X.dim(1), W = X.dim(2);
    Tensor<T> out(X.shape());
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double sx = x + static_cast<double>(F(0, y, x));
            double sy = y + static_cast<double>(F(1, y, x));
            sx = std::min(std::max(sx, 0.0), static_cast<double>(W - 1));
            sy = std::min(std::max(sy, 0.0), static_cast<double>(H - 1));
            const int x0 = static_cast<int>(sx);
            const int y0 = static_cast<int>(sy);
            const int x1 = std::min(x0 + 1, W - 1);
            const int y1 = std::min(y0 + 1, H - 1);
            const T fx = static_cast<T>(sx - x0);
            const T fy = static_cast<T>(sy - y0);
            const T w00 = (T(1) - fy) * (T(1) - fx);
            const T w01 = (T(1) - fy) * fx;
            const T w10 = fy * (T(1) - fx);
            const T w11 = fy * fx;
            for (int ch = 0; ch < C; ++ch) {
                out(ch, y, x) = w00 * X(ch, y0, x0) + w01 * X(ch, y0, x1) +
                                w10 * X(ch, y1, x0) + w11 * X(ch, y1, x1);
            }
        }
    }
    return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> warp_backward_grad(const Tensor<T>& X, const Tensor<T>& F,
                                                   const Tensor<T>& dout) {
    const int C = X.dim(0), H = X.dim(1), W = X.dim(2);
    Tensor<T> dX(X.shape());
    Tensor<T> dF(F.shape());
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double sx = x + static_cast<double>(F(0, y, x));
            double sy = y + static_cast<double>(F(1, y, x));
            const bool in_x = sx > 0.0 && sx < static_cast<double>(W - 1);
            const bool in_y = sy > 0.0 && sy < static_cast<double>(H - 1);
            sx = std::min(std::max(sx, 0.0), static_cast<double>(W - 1));
            sy = std::min(std::max(sy, 0.0), static_cast<double>(H - 1));
            const int x0 = static_cast<int>(sx);
            const int y0 = static_cast<int>(sy);
            const int x1 = std::min(x0 + 1, W - 1);
            const int y1 = std::min(y0 + 1, H - 1);
            const T fx = static_cast<T>(sx - x0);
            const T fy = static_cast<T>(sy - y0);
            T gx = T(0), gy = T(0);
            for (int ch = 0; ch < C; ++ch) {
                const T g = dout(ch, y, x);
                const T v00 = X(ch, y0, x0), v01 = X(ch, y0, x1);
                const T v10 = X(ch, y1, x0), v11 = X(ch, y1, x1);
                dX(ch, y0, x0) += (T(1) - fy) * (T(1) - fx) * g;
                dX(ch, y0, x1) += (T(1) - fy) * fx * g;
                dX(ch, y1, x0) += fy * (T(1) - fx) * g;
                dX(ch, y1, x1) += fy * fx * g;
                gx += g * ((T(1) - fy) * (v01 - v00) + fy * (v11 - v10));
                gy += g * ((T(1) - fx) * (v10 - v00) + fx * (v11 - v01));
            }
            if (in_x) dF(0, y, x) = gx;
            if (in_y) dF(1, y, x) = gy;
        }
    }
    return {std::move(dX), std::move(dF)};
}

// ---------------------------------------------------------------------------
// ssim_loss: mean over pixels/channels of (1 - SSIM)/2 with local statistics
// over a uniform window (replicate padding, so every pixel is a window
// center). Value lies in [0,1]; zero exactly when the images are identical.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
struct SsimWindowStats {
    T mux, muy, vx, vy, vxy;  // means, variances, covariance
};

template <typename T>
SsimWindowStats<T> ssim_window_stats(const Tensor<T>& a, const Tensor<T>& b, int ch, int y,
                                     int x, int win) {
    const int H = a.dim(1), W = a.dim(2), r = win / 2;
    T sa = T(0), sb = T(0), saa = T(0), sbb = T(0), sab = T(0);
    for (int dy = -r; dy <= r; ++dy) {
        const int yy = clampi(y + dy, 0, H - 1);
        for (int dx = -r; dx <= r; ++dx) {
            const int xx = clampi(x + dx, 0, W - 1);
            const T va = a(ch, yy, xx);
            const T vb = b(ch, yy, xx);
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
        }
    }
    const T n = static_cast<T>(win * win);
    SsimWindowStats<T> s;
    s.mux = sa / n;
    s.muy = sb / n;
    s.vx = saa / n - s.mux * s.mux;
    s.vy = sbb / n - s.muy * s.muy;
    s.vxy = sab / n - s.mux * s.muy;
    return s;
}

template <typename T>
T ssim_value(const SsimWindowStats<T>& s, T c1, T c2) {
    const T a1 = T(2) * (s.mux * s.muy) + c1;
    const T a2 = T(2) * s.vxy + c2;
    const T b1 = (s.mux * s.mux + s.muy * s.muy) + c1;
    const T b2 = (s.vx + s.vy) + c2;
    return (a1 * a2) / (b1 * b2);
}

}  // namespace detail

template <typename T>
T ssim_loss(const Tensor<T>& x_hat, const Tensor<T>& x, const LossConfig& cfg) {
    validate_loss_config(cfg);
    detail::require(x_hat.ndim() == 3 && x.ndim() == 3, "ssim_loss: images must be [C,H,W]");
    if (!x_hat.same_shape(x))
        throw invalid_input("ssim_loss: image shape mismatch");
    const int C = x_hat.dim(0), H = x_hat.dim(1), W = x_hat.dim(2);
    const T c1 = static_cast<T>(cfg.c1), c2 = static_cast<T>(cfg.c2);
    T total = T(0);
    for (int ch = 0; ch < C; ++ch)
        for (int y = 0; y < H; ++y)
            for (int x0 = 0; x0 < W; ++x0) {
                const auto s = detail::ssim_window_stats(x_hat, x, ch, y, x0, cfg.ssim_window);
                total += (T(1) - detail::ssim_value(s, c1, c2)) / T(2);
            }
    return total / static_cast<T>(static_cast<size_t>(C) * H * W);
}

// Gradient of the scalar ssim_loss w.r.t. both images.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> ssim_loss_grad(const Tensor<T>& x_hat, const Tensor<T>& x,
                                               const LossConfig& cfg) {
    validate_loss_config(cfg);
    const int C = x_hat.dim(0), H = x_hat.dim(1), W = x_hat.dim(2);
    const int win = cfg.ssim_window, r = win / 2;
    const T c1 = static_cast<T>(cfg.c1), c2 = static_cast<T>(cfg.c2);
    const T n = static_cast<T>(win * win);
    const T scale = T(-1) / (T(2) * static_cast<T>(static_cast<size_t>(C) * H * W));
    Tensor<T> dxh(x_hat.shape());
    Tensor<T> dx(x.shape());
    for (int ch = 0; ch < C; ++ch)
        for (int y = 0; y < H; ++y)
            for (int x0 = 0; x0 < W; ++x0) {
                const auto s = detail::ssim_window_stats(x_hat, x, ch, y, x0, win);
                const T a1 = T(2) * (s.mux * s.muy) + c1;
                const T a2 = T(2) * s.vxy + c2;
                const T b1 = (s.mux * s.mux + s.muy * s.muy) + c1;
                const T b2 = (s.vx + s.vy) + c2;
                const T inv = T(1) / (b1 * b2);
                const T ssim = (a1 * a2) * inv;
                const T dS_da1 = a2 * inv;
                const T dS_da2 = a1 * inv;
                const T dS_db1 = -ssim / b1;
                const T dS_db2 = -ssim / b2;
                const T dS_dmux = T(2) * s.muy * dS_da1 + T(2) * s.mux * dS_db1;
                const T dS_dmuy = T(2) * s.mux * dS_da1 + T(2) * s.muy * dS_db1;
                const T dS_dvx = dS_db2;
                const T dS_dvy = dS_db2;
                const T dS_dvxy = T(2) * dS_da2;
                for (int dy = -r; dy <= r; ++dy) {
                    const int yy = detail::clampi(y + dy, 0, H - 1);
                    for (int dx2 = -r; dx2 <= r; ++dx2) {
                        const int xx = detail::clampi(x0 + dx2, 0, W - 1);
                        const T va = x_hat(ch, yy, xx);
                        const T vb = x(ch, yy, xx);
                        dxh(ch, yy, xx) += scale / n *
                            (dS_dmux + T(2) * (va - s.mux) * dS_dvx + (vb - s.muy) * dS_dvxy);
                        dx(ch, yy, xx) += scale / n *
                            (dS_dmuy + T(2) * (vb - s.muy) * dS_dvy + (va - s.mux) * dS_dvxy);
                    }
                }
            }
    return {std::move(dxh), std::move(dx)};
}

// ---------------------------------------------------------------------------
// reconstruction_loss: photometric supervision by view synthesis. Flows are
// upsampled (values rescaled) to the image resolution when composed coarser.
// With cfg.symmetric both frames take a turn as the target and the two
// errors are summed.
// ---------------------------------------------------------------------------

namespace detail {

inline int flow_upsample_factor(const std::vector<int>& img_shape,
                                const std::vector<int>& flow_shape) {
    const int H = img_shape[1], W = img_shape[2];
    const int h = flow_shape[1], w = flow_shape[2];
    if (h <= 0 || w <= 0 || H % h != 0 || W % w != 0 || H / h != W / w)
        throw invalid_input("reconstruction_loss: flow resolution must divide image "
                            "resolution by one integer factor");
    return H / h;
}

}  // namespace detail

template <typename T>
T reconstruction_loss(const Tensor<T>& x_i, const Tensor<T>& x_j, const Tensor<T>& f_ij,
                      const Tensor<T>& f_ji, const LossConfig& cfg) {
    validate_loss_config(cfg);
    detail::require(x_i.same_shape(x_j), "reconstruction_loss: frame shape mismatch");
    detail::require(f_ij.same_shape(f_ji), "reconstruction_loss: flow shape mismatch");
    const int factor = detail::flow_upsample_factor(x_i.shape(), f_ij.shape());
    const Tensor<T> fij_up = upsample_flow(f_ij, factor);
    T loss = ssim_loss(warp_backward(x_i, fij_up), x_j, cfg);
    if (cfg.symmetric) {
        const Tensor<T> fji_up = upsample_flow(f_ji, factor);
        loss += ssim_loss(warp_backward(x_j, fji_up), x_i, cfg);
    }
    return loss;
}

template <typename T>
struct ReconstructionGrads {
    Tensor<T> dx_i, dx_j, df_ij, df_ji;
};

template <typename T>
ReconstructionGrads<T> reconstruction_loss_grad(const Tensor<T>& x_i, const Tensor<T>& x_j,
                                                const Tensor<T>& f_ij, const Tensor<T>& f_ji,
                                                const LossConfig& cfg) {
    validate_loss_config(cfg);
    const int factor = detail::flow_upsample_factor(x_i.shape(), f_ij.shape());
    ReconstructionGrads<T> g;
    g.dx_i = Tensor<T>(x_i.shape());
    g.dx_j = Tensor<T>(x_j.shape());
    g.df_ji = Tensor<T>(f_ji.shape());

    const Tensor<T> fij_up = upsample_flow(f_ij, factor);
    const Tensor<T> xhat_j = warp_backward(x_i, fij_up);
    auto [d_xhat_j, d_target_j] = ssim_loss_grad(xhat_j, x_j, cfg);
    auto [d_xi, d_fij_up] = warp_backward_grad(x_i, fij_up, d_xhat_j);
    g.dx_i = std::move(d_xi);
    g.dx_j = std::move(d_target_j);
    g.df_ij = upsample_flow_backward(f_ij.shape(), d_fij_up, factor);

    if (cfg.symmetric) {
        const Tensor<T> fji_up = upsample_flow(f_ji, factor);
        const Tensor<T> xhat_i = warp_backward(x_j, fji_up);
        auto [d_xhat_i, d_target_i] = ssim_loss_grad(xhat_i, x_i, cfg);
        auto [d_xj, d_fji_up] = warp_backward_grad(x_j, fji_up, d_xhat_i);
        for (size_t k = 0; k < g.dx_j.numel(); ++k) g.dx_j[k] += d_xj[k];
        for (size_t k = 0; k < g.dx_i.numel(); ++k) g.dx_i[k] += d_target_i[k];
        g.df_ji = upsample_flow_backward(f_ji.shape(), d_fji_up, factor);
    }
    return g;
}

// ---------------------------------------------------------------------------
// correlation_volume: normalized inner products between each pixel's feature
// and its spatial neighbors in the other map. Channel k holds displacement
// (dy, dx) with k = (dy+r)*(2r+1) + (dx+r); out-of-bounds neighbors give 0.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> correlation_volume(const Tensor<T>& feat_i, const Tensor<T>& feat_j, int radius) {
    detail::require(feat_i.ndim() == 3 && feat_j.ndim() == 3,
                    "correlation_volume: features must be [d,h,w]");
    if (!feat_i.same_shape(feat_j))
        throw invalid_input("correlation_volume: feature shape mismatch");
    detail::require(radius >= 1, "correlation_volume: radius must be >= 1");
    const int d = feat_i.dim(0), h = feat_i.dim(1), w = feat_i.dim(2);
    const int side = 2 * radius + 1;
    const size_t plane = static_cast<size_t>(h) * w;
    Tensor<T> corr({side * side, h, w});
    const T inv_d = T(1) / static_cast<T>(d);
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
            const int k = (dy + radius) * side + (dx + radius);
            T* ck = corr.data() + static_cast<size_t>(k) * plane;
            for (int y = 0; y < h; ++y) {
                const int yj = y + dy;
                if (yj < 0 || yj >= h) continue;
                for (int x = 0; x < w; ++x) {
                    const int xj = x + dx;
                    if (xj < 0 || xj >= w) continue;
                    T acc = T(0);
                    const T* fi = feat_i.data() + static_cast<size_t>(y) * w + x;
                    const T* fj = feat_j.data() + static_cast<size_t>(yj) * w + xj;
                    for (int ch = 0; ch < d; ++ch)
                        acc += fi[ch * plane] * fj[ch * plane];
                    ck[static_cast<size_t>(y) * w + x] = acc * inv_d;
                }
            }
        }
    }
    return corr;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> correlation_volume_backward(const Tensor<T>& feat_i,
                                                            const Tensor<T>& feat_j, int radius,
                                                            const Tensor<T>& dcorr) {
    const int d = feat_i.dim(0), h = feat_i.dim(1), w = feat_i.dim(2);
    const int side = 2 * radius + 1;
    const size_t plane = static_cast<size_t>(h) * w;
    Tensor<T> dfi(feat_i.shape());
    Tensor<T> dfj(feat_j.shape());
    const T inv_d = T(1) / static_cast<T>(d);
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
            const int k = (dy + radius) * side + (dx + radius);
            const T* ck = dcorr.data() + static_cast<size_t>(k) * plane;
            for (int y = 0; y < h; ++y) {
                const int yj = y + dy;
                if (yj < 0 || yj >= h) continue;
                for (int x = 0; x < w; ++x) {
                    const int xj = x + dx;
                    if (xj < 0 || xj >= w) continue;
                    const T g = ck[static_cast<size_t>(y) * w + x] * inv_d;
                    if (g == T(0)) continue;
                    const T* fi = feat_i.data() + static_cast<size_t>(y) * w + x;
                    const T* fj = feat_j.data() + static_cast<size_t>(yj) * w + xj;
                    T* gi = dfi.data() + static_cast<size_t>(y) * w + x;
                    T* gj = dfj.data() + static_cast<size_t>(yj) * w + xj;
                    for (int ch = 0; ch < d; ++ch) {
                        gi[ch * plane] += g * fj[ch * plane];
                        gj[ch * plane] += g * fi[ch * plane];
                    }
                }
            }
        }
    }
    return {std::move(dfi), std::move(dfj)};
}

}  // namespace segflow

#endif  // SEGFLOW_OPS_HPP_
