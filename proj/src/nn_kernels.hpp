#ifndef SEGFLOW_NN_KERNELS_HPP_
#define SEGFLOW_NN_KERNELS_HPP_

#include <cmath>
#include <cstddef>
#include <vector>

#include "segflow/tensor.hpp"

// Dense kernels for the two pathways: 3x3 convolution (zero padding, stride
// 1 or 2) via im2col + an inner GEMM the compiler can vectorize, per-channel
// spatial normalization with learned affine, ReLU, and fully connected
// layers. Everything is templated so the training path runs in float while
// finite-difference tests instantiate double.

namespace segflow {
namespace nn {

inline int conv_out_size(int in, int stride) { return (in + 2 - 3) / stride + 1; }

// col layout: [cin*9, oh*ow]
template <typename T>
void im2col_3x3(const T* x, int cin, int h, int w, int stride, T* col, int oh, int ow) {
    for (int c = 0; c < cin; ++c) {
        const T* xc = x + static_cast<size_t>(c) * h * w;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                T* row = col + (static_cast<size_t>(c) * 9 + ky * 3 + kx) *
                                   (static_cast<size_t>(oh) * ow);
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + ky - 1;
                    if (iy < 0 || iy >= h) {
                        for (int ox = 0; ox < ow; ++ox) row[oy * ow + ox] = T(0);
                        continue;
                    }
                    const T* xrow = xc + static_cast<size_t>(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride + kx - 1;
                        row[oy * ow + ox] = (ix < 0 || ix >= w) ? T(0) : xrow[ix];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_3x3(const T* col, int cin, int h, int w, int stride, T* dx, int oh, int ow) {
    for (int c = 0; c < cin; ++c) {
        T* dxc = dx + static_cast<size_t>(c) * h * w;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const T* row = col + (static_cast<size_t>(c) * 9 + ky * 3 + kx) *
                                         (static_cast<size_t>(oh) * ow);
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + ky - 1;
                    if (iy < 0 || iy >= h) continue;
                    T* dxrow = dxc + static_cast<size_t>(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride + kx - 1;
                        if (ix >= 0 && ix < w) dxrow[ix] += row[oy * ow + ox];
                    }
                }
            }
        }
    }
}

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        T* ci = c + static_cast<size_t>(i) * n;
        const T* ai = a + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const T av = ai[p];
            if (av == T(0)) continue;
            const T* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C[K,N] += A[M,K]^T * B[M,N]
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* ai = a + static_cast<size_t>(i) * k;
        const T* bi = b + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const T av = ai[p];
            if (av == T(0)) continue;
            T* cp = c + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

template <typename T>
struct Workspace {
    std::vector<T> col;
    std::vector<T> dcol;
    std::vector<T> colt;
    T* col_for(size_t n) {
        if (col.size() < n) col.resize(n);
        return col.data();
    }
    T* dcol_for(size_t n) {
        if (dcol.size() < n) dcol.resize(n);
        return dcol.data();
    }
    T* colt_for(size_t n) {
        if (colt.size() < n) colt.resize(n);
        return colt.data();
    }
};

template <typename T>
void conv3x3_forward(const Tensor<T>& x, const T* weight, const T* bias, int cout, int stride,
                     Tensor<T>& y, Workspace<T>& ws) {
    const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int oh = conv_out_size(h, stride), ow = conv_out_size(w, stride);
    const int n = oh * ow, k = cin * 9;
    y = Tensor<T>({cout, oh, ow});
    T* col = ws.col_for(static_cast<size_t>(k) * n);
    im2col_3x3(x.data(), cin, h, w, stride, col, oh, ow);
    if (bias) {
        for (int m = 0; m < cout; ++m) {
            T* ym = y.data() + static_cast<size_t>(m) * n;
            for (int j = 0; j < n; ++j) ym[j] = bias[m];
        }
    }
    gemm_acc(weight, col, y.data(), cout, k, n);
}

// Accumulates dweight/dbias; writes dx (must be pre-sized and zeroed by caller
// when accumulation across consumers is needed; here dx is overwritten).
template <typename T>
void conv3x3_backward(const Tensor<T>& x, const T* weight, int cout, int stride,
                      const Tensor<T>& dy, T* dweight, T* dbias, Tensor<T>* dx,
                      Workspace<T>& ws) {
    const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int oh = dy.dim(1), ow = dy.dim(2);
    const int n = oh * ow, k = cin * 9;
    T* col = ws.col_for(static_cast<size_t>(k) * n);
    im2col_3x3(x.data(), cin, h, w, stride, col, oh, ow);
    if (dbias) {
        for (int m = 0; m < cout; ++m) {
            const T* dym = dy.data() + static_cast<size_t>(m) * n;
            T acc = T(0);
            for (int j = 0; j < n; ++j) acc += dym[j];
            dbias[m] += acc;
        }
    }
    // dW[cout,k] += dy[cout,n] * col[k,n]^T, via an explicit transpose so the
    // inner loop is elementwise (a scalar-sum inner loop would not vectorize
    // under strict FP)
    T* colt = ws.colt_for(static_cast<size_t>(k) * n);
    for (int p = 0; p < k; ++p)
        for (int j = 0; j < n; ++j)
            colt[static_cast<size_t>(j) * k + p] = col[static_cast<size_t>(p) * n + j];
    gemm_acc(dy.data(), colt, dweight, cout, n, k);
    if (dx) {
        T* dcol = ws.dcol_for(static_cast<size_t>(k) * n);
        std::fill(dcol, dcol + static_cast<size_t>(k) * n, T(0));
        gemm_tn_acc(weight, dy.data(), dcol, cout, k, n);
        *dx = Tensor<T>({cin, h, w});
        col2im_3x3(dcol, cin, h, w, stride, dx->data(), oh, ow);
    }
}

// Per-channel spatial normalization with learned affine. Statistics are
// per-sample, so forward passes stay pure functions of (params, input).
inline constexpr double kNormEpsilon = 1e-5;

template <typename T>
struct NormCache {
    std::vector<T> mean, inv_std;
};

template <typename T>
void channel_norm_forward(const Tensor<T>& x, const T* gamma, const T* beta, Tensor<T>& y,
                          NormCache<T>& cache) {
    const int C = x.dim(0);
    const size_t plane = static_cast<size_t>(x.dim(1)) * x.dim(2);
    y = Tensor<T>(x.shape());
    cache.mean.assign(C, T(0));
    cache.inv_std.assign(C, T(0));
    for (int c = 0; c < C; ++c) {
        const T* xc = x.data() + c * plane;
        T* yc = y.data() + c * plane;
        T mean = T(0);
        for (size_t p = 0; p < plane; ++p) mean += xc[p];
        mean /= static_cast<T>(plane);
        T var = T(0);
        for (size_t p = 0; p < plane; ++p) {
            const T d = xc[p] - mean;
            var += d * d;
        }
        var /= static_cast<T>(plane);
        const T inv_std = T(1) / std::sqrt(var + static_cast<T>(kNormEpsilon));
        cache.mean[c] = mean;
        cache.inv_std[c] = inv_std;
        const T g = gamma[c], b = beta[c];
        for (size_t p = 0; p < plane; ++p) yc[p] = g * (xc[p] - mean) * inv_std + b;
    }
}

template <typename T>
void channel_norm_backward(const Tensor<T>& x, const T* gamma, const NormCache<T>& cache,
                           const Tensor<T>& dy, T* dgamma, T* dbeta, Tensor<T>& dx) {
    const int C = x.dim(0);
    const size_t plane = static_cast<size_t>(x.dim(1)) * x.dim(2);
    dx = Tensor<T>(x.shape());
    const T invn = T(1) / static_cast<T>(plane);
    for (int c = 0; c < C; ++c) {
        const T* xc = x.data() + c * plane;
        const T* dyc = dy.data() + c * plane;
        T* dxc = dx.data() + c * plane;
        const T mean = cache.mean[c], inv_std = cache.inv_std[c], g = gamma[c];
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (size_t p = 0; p < plane; ++p) {
            const T xhat = (xc[p] - mean) * inv_std;
            sum_dy += dyc[p];
            sum_dy_xhat += dyc[p] * xhat;
        }
        dgamma[c] += sum_dy_xhat;
        dbeta[c] += sum_dy;
        for (size_t p = 0; p < plane; ++p) {
            const T xhat = (xc[p] - mean) * inv_std;
            dxc[p] = g * inv_std * (dyc[p] - invn * sum_dy - xhat * invn * sum_dy_xhat);
        }
    }
}

template <typename T>
void relu_forward(Tensor<T>& x) {
    for (size_t i = 0; i < x.numel(); ++i)
        if (x[i] < T(0)) x[i] = T(0);
}

// dx from dy using the post-activation values (0 where the unit was clipped)
template <typename T>
void relu_backward(const Tensor<T>& post, Tensor<T>& dy) {
    for (size_t i = 0; i < dy.numel(); ++i)
        if (post[i] <= T(0)) dy[i] = T(0);
}

// y[cout] = W[cout,cin] x + b
template <typename T>
void linear_forward(const T* x, const T* weight, const T* bias, int cin, int cout, T* y) {
    for (int j = 0; j < cout; ++j) {
        const T* wj = weight + static_cast<size_t>(j) * cin;
        T acc = bias ? bias[j] : T(0);
        for (int i = 0; i < cin; ++i) acc += wj[i] * x[i];
        y[j] = acc;
    }
}

template <typename T>
void linear_backward(const T* x, const T* weight, int cin, int cout, const T* dy, T* dweight,
                     T* dbias, T* dx) {
    for (int j = 0; j < cout; ++j) {
        const T g = dy[j];
        if (dbias) dbias[j] += g;
        const T* wj = weight + static_cast<size_t>(j) * cin;
        T* dwj = dweight + static_cast<size_t>(j) * cin;
        for (int i = 0; i < cin; ++i) {
            dwj[i] += g * x[i];
            if (dx) dx[i] += g * wj[i];
        }
    }
}

}  // namespace nn
}  // namespace segflow

#endif  // SEGFLOW_NN_KERNELS_HPP_
