#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "statelens/error.hpp"
#include "statelens/graph.hpp"
#include "statelens/parallel.hpp"
#include "statelens/tensor.hpp"

// Forward and backward kernels. Every output element is produced by exactly one task with a
// fixed summation order, so results do not depend on the thread count.
namespace statelens::kernels {

namespace detail {

inline std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// Output columns wo for which wo*stride - pad + kc lands inside [0, width).
inline std::pair<std::size_t, std::size_t> valid_cols(std::size_t out_w, std::size_t width, std::size_t stride,
                                                      std::size_t pad, std::size_t kc) {
    long lo_num = static_cast<long>(pad) - static_cast<long>(kc);
    long lo = lo_num <= 0 ? 0 : (lo_num + static_cast<long>(stride) - 1) / static_cast<long>(stride);
    long hi_num = static_cast<long>(width) - 1 + static_cast<long>(pad) - static_cast<long>(kc);
    long hi = hi_num < 0 ? -1 : hi_num / static_cast<long>(stride);
    hi = std::min<long>(hi, static_cast<long>(out_w) - 1);
    if (hi < lo) return {0, 0};
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi) + 1};
}

inline void require_rank(const Shape& s, std::size_t rank, const char* what) {
    if (s.size() != rank)
        throw ValidationError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " + shape_string(s));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

/// Zero-padded cross-correlation. Per output element the accumulation runs over
/// kernel row, kernel column, then input channel, all ascending.
template <class T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, std::span<const T> weight, std::span<const T> bias,
                              const Conv2dParams& p, unsigned threads = 1) {
    detail::require_rank(x.shape(), 4, "conv2d");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (C != p.in_ch) throw ValidationError("conv2d channel mismatch: input " + std::to_string(C) + ", kernel " + std::to_string(p.in_ch));
    if (weight.size() != p.out_ch * p.in_ch * p.kh * p.kw) throw ValidationError("conv2d weight length mismatch");
    const std::size_t Ho = detail::conv_out(H, p.kh, p.stride, p.pad), Wo = detail::conv_out(W, p.kw, p.stride, p.pad);
    BasicTensor<T> y({N, p.out_ch, Ho, Wo});

    parallel_for(N * p.out_ch, threads, [&](std::size_t task) {
        const std::size_t n = task / p.out_ch, oc = task % p.out_ch;
        T* acc = y.raw() + task * Ho * Wo;
        std::fill(acc, acc + Ho * Wo, bias.empty() ? T{0} : bias[oc]);
        for (std::size_t kr = 0; kr < p.kh; ++kr) {
            for (std::size_t kc = 0; kc < p.kw; ++kc) {
                auto [lo, hi] = detail::valid_cols(Wo, W, p.stride, p.pad, kc);
                for (std::size_t ic = 0; ic < C; ++ic) {
                    const T wv = weight[((oc * C + ic) * p.kh + kr) * p.kw + kc];
                    const T* plane = x.raw() + (n * C + ic) * H * W;
                    for (std::size_t ho = 0; ho < Ho; ++ho) {
                        long hi_row = static_cast<long>(ho * p.stride + kr) - static_cast<long>(p.pad);
                        if (hi_row < 0 || hi_row >= static_cast<long>(H)) continue;
                        const T* row = plane + static_cast<std::size_t>(hi_row) * W;
                        T* out = acc + ho * Wo;
                        for (std::size_t wo = lo; wo < hi; ++wo) out[wo] += wv * row[wo * p.stride + kc - p.pad];
                    }
                }
            }
        }
    });
    return y;
}

template <class T>
struct Conv2dGrads {
    BasicTensor<T> dx;
    std::vector<T> dweight;
    std::vector<T> dbias;
};

template <class T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& x, std::span<const T> weight, const BasicTensor<T>& dy,
                               const Conv2dParams& p, bool with_bias, unsigned threads = 1) {
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Ho = dy.dim(2), Wo = dy.dim(3), OC = p.out_ch;
    Conv2dGrads<T> g{BasicTensor<T>(x.shape()), std::vector<T>(weight.size(), T{0}),
                     std::vector<T>(with_bias ? OC : 0, T{0})};

    parallel_for(OC, threads, [&](std::size_t oc) {
        for (std::size_t ic = 0; ic < C; ++ic) {
            for (std::size_t kr = 0; kr < p.kh; ++kr) {
                for (std::size_t kc = 0; kc < p.kw; ++kc) {
                    auto [lo, hi] = detail::valid_cols(Wo, W, p.stride, p.pad, kc);
                    T sum{0};
                    for (std::size_t n = 0; n < N; ++n) {
                        const T* plane = x.raw() + (n * C + ic) * H * W;
                        const T* grad = dy.raw() + (n * OC + oc) * Ho * Wo;
                        for (std::size_t ho = 0; ho < Ho; ++ho) {
                            long hi_row = static_cast<long>(ho * p.stride + kr) - static_cast<long>(p.pad);
                            if (hi_row < 0 || hi_row >= static_cast<long>(H)) continue;
                            const T* row = plane + static_cast<std::size_t>(hi_row) * W;
                            const T* grow = grad + ho * Wo;
                            for (std::size_t wo = lo; wo < hi; ++wo) sum += grow[wo] * row[wo * p.stride + kc - p.pad];
                        }
                    }
                    g.dweight[((oc * C + ic) * p.kh + kr) * p.kw + kc] = sum;
                }
            }
        }
        if (with_bias) {
            T sum{0};
            for (std::size_t n = 0; n < N; ++n) {
                const T* grad = dy.raw() + (n * OC + oc) * Ho * Wo;
                for (std::size_t i = 0; i < Ho * Wo; ++i) sum += grad[i];
            }
            g.dbias[oc] = sum;
        }
    });

    parallel_for(N * C, threads, [&](std::size_t task) {
        const std::size_t n = task / C, ic = task % C;
        T* dplane = g.dx.raw() + task * H * W;
        for (std::size_t oc = 0; oc < OC; ++oc) {
            const T* grad = dy.raw() + (n * OC + oc) * Ho * Wo;
            for (std::size_t kr = 0; kr < p.kh; ++kr) {
                for (std::size_t kc = 0; kc < p.kw; ++kc) {
                    const T wv = weight[((oc * C + ic) * p.kh + kr) * p.kw + kc];
                    auto [lo, hi] = detail::valid_cols(Wo, W, p.stride, p.pad, kc);
                    for (std::size_t ho = 0; ho < Ho; ++ho) {
                        long hi_row = static_cast<long>(ho * p.stride + kr) - static_cast<long>(p.pad);
                        if (hi_row < 0 || hi_row >= static_cast<long>(H)) continue;
                        T* drow = dplane + static_cast<std::size_t>(hi_row) * W;
                        const T* grow = grad + ho * Wo;
                        for (std::size_t wo = lo; wo < hi; ++wo) drow[wo * p.stride + kc - p.pad] += wv * grow[wo];
                    }
                }
            }
        }
    });
    return g;
}

// ---------------------------------------------------------------------------
// batchnorm2d
// ---------------------------------------------------------------------------

/// Inference mode with stored statistics: (x - mean) / sqrt(var + eps) * gamma + beta.
template <class T>
BasicTensor<T> batchnorm_inference(const BasicTensor<T>& x, std::span<const T> params, double eps, unsigned threads = 1) {
    detail::require_rank(x.shape(), 4, "batchnorm2d");
    const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    if (params.size() != 4 * C) throw ValidationError("batchnorm2d parameter length mismatch");
    BasicTensor<T> y(x.shape());
    parallel_for(N * C, threads, [&](std::size_t task) {
        const std::size_t c = task % C;
        const T gamma = params[c], beta = params[C + c], mean = params[2 * C + c];
        const T denom = std::sqrt(params[3 * C + c] + static_cast<T>(eps));
        const T* in = x.raw() + task * HW;
        T* out = y.raw() + task * HW;
        for (std::size_t i = 0; i < HW; ++i) out[i] = (in[i] - mean) / denom * gamma + beta;
    });
    return y;
}

template <class T>
struct BatchNormCache {
    std::vector<T> mean, var, inv_std;
    BasicTensor<T> xhat;
};

/// Training mode: normalizes with batch statistics (biased variance).
template <class T>
BasicTensor<T> batchnorm_train_forward(const BasicTensor<T>& x, std::span<const T> params, double eps,
                                       BatchNormCache<T>& cache, unsigned threads = 1) {
    detail::require_rank(x.shape(), 4, "batchnorm2d");
    const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    const T m = static_cast<T>(N * HW);
    cache.mean.assign(C, T{0});
    cache.var.assign(C, T{0});
    cache.inv_std.assign(C, T{0});
    cache.xhat = BasicTensor<T>(x.shape());
    BasicTensor<T> y(x.shape());
    parallel_for(C, threads, [&](std::size_t c) {
        T sum{0};
        for (std::size_t n = 0; n < N; ++n) {
            const T* in = x.raw() + (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) sum += in[i];
        }
        const T mean = sum / m;
        T sq{0};
        for (std::size_t n = 0; n < N; ++n) {
            const T* in = x.raw() + (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) sq += (in[i] - mean) * (in[i] - mean);
        }
        const T var = sq / m;
        const T inv = T{1} / std::sqrt(var + static_cast<T>(eps));
        cache.mean[c] = mean;
        cache.var[c] = var;
        cache.inv_std[c] = inv;
        const T gamma = params[c], beta = params[C + c];
        for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
                T xh = (x[off + i] - mean) * inv;
                cache.xhat[off + i] = xh;
                y[off + i] = xh * gamma + beta;
            }
        }
    });
    return y;
}

template <class T>
struct BatchNormGrads {
    BasicTensor<T> dx;
    std::vector<T> dgamma, dbeta;
};

template <class T>
BatchNormGrads<T> batchnorm_backward(const BasicTensor<T>& dy, std::span<const T> params, const BatchNormCache<T>& cache,
                                     unsigned threads = 1) {
    const std::size_t N = dy.dim(0), C = dy.dim(1), HW = dy.dim(2) * dy.dim(3);
    const T m = static_cast<T>(N * HW);
    BatchNormGrads<T> g{BasicTensor<T>(dy.shape()), std::vector<T>(C), std::vector<T>(C)};
    parallel_for(C, threads, [&](std::size_t c) {
        T sum_dy{0}, sum_dy_xhat{0};
        for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
                sum_dy += dy[off + i];
                sum_dy_xhat += dy[off + i] * cache.xhat[off + i];
            }
        }
        g.dgamma[c] = sum_dy_xhat;
        g.dbeta[c] = sum_dy;
        const T gamma = params[c];
        const T scale = gamma * cache.inv_std[c] / m;
        for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i)
                g.dx[off + i] = scale * (m * dy[off + i] - sum_dy - cache.xhat[off + i] * sum_dy_xhat);
        }
    });
    return g;
}

// ---------------------------------------------------------------------------
// Pointwise and pooling
// ---------------------------------------------------------------------------

template <class T>
BasicTensor<T> relu_forward(const BasicTensor<T>& x) {
    return elementwise(ElementwiseOp::max_scalar, x, T{0});
}

template <class T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy) {
    BasicTensor<T> dx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T{0} ? dy[i] : T{0};
    return dx;
}

/// 2x2 stride-2 max pooling; `argmax` receives the flat input index of each winner
/// (first maximum in scan order).
template <class T>
BasicTensor<T> maxpool_forward(const BasicTensor<T>& x, std::vector<std::size_t>* argmax = nullptr) {
    detail::require_rank(x.shape(), 4, "maxpool2d");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 || W % 2) throw ValidationError("maxpool2d window overruns input " + shape_string(x.shape()));
    const std::size_t Ho = H / 2, Wo = W / 2;
    BasicTensor<T> y({N, C, Ho, Wo});
    if (argmax) argmax->assign(y.size(), 0);
    for (std::size_t plane = 0; plane < N * C; ++plane) {
        for (std::size_t ho = 0; ho < Ho; ++ho) {
            for (std::size_t wo = 0; wo < Wo; ++wo) {
                std::size_t best = plane * H * W + (2 * ho) * W + 2 * wo;
                for (std::size_t dr = 0; dr < 2; ++dr)
                    for (std::size_t dc = 0; dc < 2; ++dc) {
                        std::size_t idx = plane * H * W + (2 * ho + dr) * W + 2 * wo + dc;
                        if (x[idx] > x[best]) best = idx;
                    }
                std::size_t o = (plane * Ho + ho) * Wo + wo;
                y[o] = x[best];
                if (argmax) (*argmax)[o] = best;
            }
        }
    }
    return y;
}

template <class T>
BasicTensor<T> maxpool_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax, const BasicTensor<T>& dy) {
    BasicTensor<T> dx(input_shape);
    for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax[o]] += dy[o];
    return dx;
}

template <class T>
BasicTensor<T> global_avgpool_forward(const BasicTensor<T>& x) {
    detail::require_rank(x.shape(), 4, "avgpool-global");
    const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    BasicTensor<T> y({N, C, 1, 1});
    for (std::size_t plane = 0; plane < N * C; ++plane) {
        T sum{0};
        for (std::size_t i = 0; i < HW; ++i) sum += x[plane * HW + i];
        y[plane] = sum / static_cast<T>(HW);
    }
    return y;
}

template <class T>
BasicTensor<T> global_avgpool_backward(const Shape& input_shape, const BasicTensor<T>& dy) {
    BasicTensor<T> dx(input_shape);
    const std::size_t HW = input_shape[2] * input_shape[3];
    for (std::size_t plane = 0; plane < dy.size(); ++plane)
        for (std::size_t i = 0; i < HW; ++i) dx[plane * HW + i] = dy[plane] / static_cast<T>(HW);
    return dx;
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

template <class T>
BasicTensor<T> linear_forward(const BasicTensor<T>& x, std::span<const T> weight, std::span<const T> bias,
                              const LinearParams& p) {
    detail::require_rank(x.shape(), 2, "linear");
    const std::size_t N = x.dim(0), I = x.dim(1), O = p.out_features;
    if (I != p.in_features) throw ValidationError("linear feature mismatch");
    BasicTensor<T> y({N, O});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < O; ++o) {
            T acc = bias.empty() ? T{0} : bias[o];
            for (std::size_t i = 0; i < I; ++i) acc += weight[o * I + i] * x[n * I + i];
            y[n * O + o] = acc;
        }
    return y;
}

template <class T>
struct LinearGrads {
    BasicTensor<T> dx;
    std::vector<T> dweight, dbias;
};

template <class T>
LinearGrads<T> linear_backward(const BasicTensor<T>& x, std::span<const T> weight, const BasicTensor<T>& dy,
                               const LinearParams& p) {
    const std::size_t N = x.dim(0), I = x.dim(1), O = p.out_features;
    LinearGrads<T> g{BasicTensor<T>(x.shape()), std::vector<T>(O * I, T{0}), std::vector<T>(p.bias ? O : 0, T{0})};
    for (std::size_t o = 0; o < O; ++o)
        for (std::size_t i = 0; i < I; ++i) {
            T sum{0};
            for (std::size_t n = 0; n < N; ++n) sum += dy[n * O + o] * x[n * I + i];
            g.dweight[o * I + i] = sum;
        }
    if (p.bias)
        for (std::size_t o = 0; o < O; ++o) {
            T sum{0};
            for (std::size_t n = 0; n < N; ++n) sum += dy[n * O + o];
            g.dbias[o] = sum;
        }
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < I; ++i) {
            T sum{0};
            for (std::size_t o = 0; o < O; ++o) sum += weight[o * I + i] * dy[n * O + o];
            g.dx[n * I + i] = sum;
        }
    return g;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

template <class T>
struct LossResult {
    T loss;
    BasicTensor<T> dlogits;
};

/// Mean softmax cross-entropy over the batch with optional label smoothing.
template <class T>
LossResult<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels, T smoothing = T{0}) {
    detail::require_rank(logits.shape(), 2, "cross-entropy");
    const std::size_t N = logits.dim(0), K = logits.dim(1);
    if (labels.size() != N) throw ValidationError("label count does not match batch size");
    LossResult<T> r{T{0}, BasicTensor<T>(logits.shape())};
    const T off = smoothing / static_cast<T>(K);
    const T on = T{1} - smoothing + off;
    for (std::size_t n = 0; n < N; ++n) {
        const T* z = logits.raw() + n * K;
        T zmax = *std::max_element(z, z + K);
        T sum{0};
        for (std::size_t k = 0; k < K; ++k) sum += std::exp(z[k] - zmax);
        const T lse = zmax + std::log(sum);
        for (std::size_t k = 0; k < K; ++k) {
            const T target = static_cast<int>(k) == labels[n] ? on : off;
            r.loss -= target * (z[k] - lse);
            r.dlogits[n * K + k] = (std::exp(z[k] - lse) - target) / static_cast<T>(N);
        }
    }
    r.loss /= static_cast<T>(N);
    return r;
}

}  // namespace statelens::kernels
