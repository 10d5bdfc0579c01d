#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dctnet/tensor.hpp"

namespace dctnet {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

enum class EwiseKind { add, sub, mul, scale_broadcast };

namespace detail {

inline void require_same(const Shape& a, const Shape& b, const char* op) {
    if (a != b) throw shape_error(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

template <typename T>
void axpy(std::span<T> dst, std::span<const T> src, T alpha = T(1)) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += alpha * src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same(a.shape(), b.shape(), "add");
    Tensor<T> out(a.shape());
    auto o = out.data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
    record("add", out, {a, b}, [a, b, out]() mutable {
        auto g = out.grad();
        if (a.requires_grad()) detail::axpy(a.grad_mut(), g);
        if (b.requires_grad()) detail::axpy(b.grad_mut(), g);
    });
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same(a.shape(), b.shape(), "sub");
    Tensor<T> out(a.shape());
    auto o = out.data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
    record("sub", out, {a, b}, [a, b, out]() mutable {
        auto g = out.grad();
        if (a.requires_grad()) detail::axpy(a.grad_mut(), g);
        if (b.requires_grad()) detail::axpy(b.grad_mut(), g, T(-1));
    });
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same(a.shape(), b.shape(), "mul");
    Tensor<T> out(a.shape());
    auto o = out.data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
    record("mul", out, {a, b}, [a, b, out]() mutable {
        auto g = out.grad();
        if (a.requires_grad()) {
            auto ga = a.grad_mut();
            auto y = b.data();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
        }
        if (b.requires_grad()) {
            auto gb = b.grad_mut();
            auto x = a.data();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
        }
    });
    return out;
}

/// a * m where m has shape (1,1,H,W) and is broadcast over batch and channel.
template <typename T>
Tensor<T> scale_broadcast(const Tensor<T>& a, const Tensor<T>& m) {
    const Shape& s = a.shape();
    const Shape& ms = m.shape();
    if (ms.n != 1 || ms.c != 1 || ms.h != s.h || ms.w != s.w) {
        throw shape_error("scale_broadcast: multiplier " + ms.str() + " does not broadcast to " + s.str());
    }
    const std::size_t plane = s.plane();
    const std::size_t planes = s.n * s.c;
    Tensor<T> out(s);
    auto o = out.data();
    auto x = a.data();
    auto w = m.data();
    for (std::size_t p = 0; p < planes; ++p) {
        const std::size_t off = p * plane;
        for (std::size_t k = 0; k < plane; ++k) o[off + k] = x[off + k] * w[k];
    }
    record("scale_broadcast", out, {a, m}, [a, m, out, plane, planes]() mutable {
        auto g = out.grad();
        if (a.requires_grad()) {
            auto ga = a.grad_mut();
            auto w = m.data();
            for (std::size_t p = 0; p < planes; ++p)
                for (std::size_t k = 0; k < plane; ++k) ga[p * plane + k] += g[p * plane + k] * w[k];
        }
        if (m.requires_grad()) {
            auto gm = m.grad_mut();
            auto x = a.data();
            for (std::size_t p = 0; p < planes; ++p)
                for (std::size_t k = 0; k < plane; ++k) gm[k] += g[p * plane + k] * x[p * plane + k];
        }
    });
    return out;
}

template <typename T>
Tensor<T> ewise(EwiseKind kind, const Tensor<T>& a, const Tensor<T>& b) {
    switch (kind) {
        case EwiseKind::add: return add(a, b);
        case EwiseKind::sub: return sub(a, b);
        case EwiseKind::mul: return mul(a, b);
        case EwiseKind::scale_broadcast: return scale_broadcast(a, b);
    }
    throw std::invalid_argument("ewise: unknown op kind");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T alpha) {
    Tensor<T> out(a.shape());
    auto o = out.data();
    auto x = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = alpha * x[i];
    record("scale", out, {a}, [a, out, alpha]() mutable { detail::axpy(a.grad_mut(), out.grad(), alpha); });
    return out;
}

/// Sum of all elements as a (1,1,1,1) tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = T(0);
    for (T v : a.data()) acc += v;
    Tensor<T> out = Tensor<T>::scalar(acc);
    record("sum", out, {a}, [a, out]() mutable {
        const T g = out.grad()[0];
        for (T& v : a.grad_mut()) v += g;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Convolutions

/// out[b,co,i,j] = sum_ci H[co,ci] x[b,ci,i,j] (+ bias[co]).
/// H has shape (C_out, C_in, 1, 1); bias, when given, (1, C_out, 1, 1).
template <typename T>
Tensor<T> conv1x1(const Tensor<T>& x, const Tensor<T>& H, const std::optional<Tensor<T>>& bias = std::nullopt) {
    const Shape& s = x.shape();
    const Shape& hs = H.shape();
    if (hs.h != 1 || hs.w != 1 || hs.c != s.c) {
        throw shape_error("conv1x1: mixing matrix " + hs.str() + " incompatible with input " + s.str());
    }
    const std::size_t cout = hs.n;
    if (bias && (bias->shape() != Shape{1, cout, 1, 1})) {
        throw shape_error("conv1x1: bias " + bias->shape().str() + " expected (1," + std::to_string(cout) + ",1,1)");
    }
    const std::size_t hw = s.plane();
    Tensor<T> out(Shape{s.n, cout, s.h, s.w});
    ConstMatMap<T> Hm(H.raw(), cout, s.c);
    for (std::size_t b = 0; b < s.n; ++b) {
        ConstMatMap<T> xb(x.raw() + b * s.c * hw, s.c, hw);
        MatMap<T> ob(out.raw() + b * cout * hw, cout, hw);
        ob.noalias() = Hm * xb;
        if (bias) {
            for (std::size_t co = 0; co < cout; ++co) ob.row(co).array() += (*bias)[co];
        }
    }
    auto backward = [x, H, bias, out, cout, hw, s]() mutable {
        auto g = out.grad();
        for (std::size_t b = 0; b < s.n; ++b) {
            ConstMatMap<T> gb(g.data() + b * cout * hw, cout, hw);
            if (x.requires_grad()) {
                MatMap<T> gx(x.grad_mut().data() + b * s.c * hw, s.c, hw);
                gx.noalias() += ConstMatMap<T>(H.raw(), cout, s.c).transpose() * gb;
            }
            if (H.requires_grad()) {
                MatMap<T> gH(H.grad_mut().data(), cout, s.c);
                gH.noalias() += gb * ConstMatMap<T>(x.raw() + b * s.c * hw, s.c, hw).transpose();
            }
            if (bias && bias->requires_grad()) {
                auto gbias = bias->grad_mut();
                for (std::size_t co = 0; co < cout; ++co) gbias[co] += gb.row(co).sum();
            }
        }
    };
    if (bias) {
        record("conv1x1", out, {x, H, *bias}, backward);
    } else {
        record("conv1x1", out, {x, H}, backward);
    }
    return out;
}

namespace detail {

struct ConvGeometry {
    std::size_t cin, cout, k, stride, pad, hin, win, hout, wout;
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& w, std::size_t stride) {
    if (w.h != w.w || w.h % 2 == 0) throw shape_error("conv2d: kernel must be square with odd size, got " + w.str());
    if (w.c != x.c) throw shape_error("conv2d: kernel " + w.str() + " expects " + std::to_string(w.c) +
                                      " input channels, input is " + x.str());
    if (stride != 1 && stride != 2) throw std::invalid_argument("conv2d: stride must be 1 or 2");
    ConvGeometry g{x.c, w.n, w.h, stride, w.h / 2, x.h, x.w, 0, 0};
    g.hout = (x.h + 2 * g.pad - g.k) / stride + 1;
    g.wout = (x.w + 2 * g.pad - g.k) / stride + 1;
    return g;
}

// col has (cin*k*k) rows and (hout*wout) columns.
template <typename T>
void im2col(const T* img, T* col, const ConvGeometry& g) {
    const std::size_t cols = g.hout * g.wout;
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
        for (std::size_t ki = 0; ki < g.k; ++ki) {
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                T* row = col + ((ci * g.k + ki) * g.k + kj) * cols;
                for (std::size_t oi = 0; oi < g.hout; ++oi) {
                    const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
                    T* dst = row + oi * g.wout;
                    if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(g.hin)) {
                        std::fill(dst, dst + g.wout, T(0));
                        continue;
                    }
                    const T* src = img + (ci * g.hin + static_cast<std::size_t>(ii)) * g.win;
                    for (std::size_t oj = 0; oj < g.wout; ++oj) {
                        const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
                        dst[oj] = (jj < 0 || jj >= static_cast<std::ptrdiff_t>(g.win)) ? T(0) : src[jj];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, T* img, const ConvGeometry& g) {
    const std::size_t cols = g.hout * g.wout;
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
        for (std::size_t ki = 0; ki < g.k; ++ki) {
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                const T* row = col + ((ci * g.k + ki) * g.k + kj) * cols;
                for (std::size_t oi = 0; oi < g.hout; ++oi) {
                    const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
                    if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(g.hin)) continue;
                    T* dst = img + (ci * g.hin + static_cast<std::size_t>(ii)) * g.win;
                    const T* src = row + oi * g.wout;
                    for (std::size_t oj = 0; oj < g.wout; ++oj) {
                        const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
                        if (jj >= 0 && jj < static_cast<std::ptrdiff_t>(g.win)) dst[jj] += src[oj];
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// Cross-correlation with zero "SAME" padding (pad = K/2), no bias.
/// kernels has shape (C_out, C_in, K, K) with K odd.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernels, std::size_t stride = 1) {
    const Shape& s = x.shape();
    const auto g = detail::conv_geometry(s, kernels.shape(), stride);
    const std::size_t rows = g.cin * g.k * g.k;
    const std::size_t cols = g.hout * g.wout;
    const bool direct = g.k == 1 && g.stride == 1;
    Tensor<T> out(Shape{s.n, g.cout, g.hout, g.wout});
    std::vector<T> col(direct ? 0 : rows * cols);
    ConstMatMap<T> W(kernels.raw(), g.cout, rows);
    for (std::size_t b = 0; b < s.n; ++b) {
        const T* img = x.raw() + b * g.cin * g.hin * g.win;
        const T* colp = img;
        if (!direct) {
            detail::im2col(img, col.data(), g);
            colp = col.data();
        }
        MatMap<T> ob(out.raw() + b * g.cout * cols, g.cout, cols);
        ob.noalias() = W * ConstMatMap<T>(colp, rows, cols);
    }
    record("conv2d", out, {x, kernels}, [x, kernels, out, g, rows, cols, direct]() mutable {
        auto gout = out.grad();
        std::vector<T> col(direct ? 0 : rows * cols);
        std::vector<T> dcol(direct ? 0 : rows * cols);
        ConstMatMap<T> W(kernels.raw(), g.cout, rows);
        const std::size_t nb = x.shape().n;
        for (std::size_t b = 0; b < nb; ++b) {
            ConstMatMap<T> gb(gout.data() + b * g.cout * cols, g.cout, cols);
            const T* img = x.raw() + b * g.cin * g.hin * g.win;
            if (kernels.requires_grad()) {
                const T* colp = img;
                if (!direct) {
                    detail::im2col(img, col.data(), g);
                    colp = col.data();
                }
                MatMap<T> gW(kernels.grad_mut().data(), g.cout, rows);
                gW.noalias() += gb * ConstMatMap<T>(colp, rows, cols).transpose();
            }
            if (x.requires_grad()) {
                T* gimg = x.grad_mut().data() + b * g.cin * g.hin * g.win;
                if (direct) {
                    MatMap<T>(gimg, rows, cols).noalias() += W.transpose() * gb;
                } else {
                    MatMap<T>(dcol.data(), rows, cols).noalias() = W.transpose() * gb;
                    detail::col2im_add(dcol.data(), gimg, g);
                }
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> conv3x3(const Tensor<T>& x, const Tensor<T>& kernels, std::size_t stride = 1) {
    if (kernels.shape().h != 3 || kernels.shape().w != 3) {
        throw shape_error("conv3x3: kernel shape " + kernels.shape().str() + " is not 3x3");
    }
    return conv2d(x, kernels, stride);
}

// ---------------------------------------------------------------------------
// Batch normalization

enum class Mode { train, eval };

/// Running statistics; tensors of shape (1, C, 1, 1).
template <typename T>
struct BatchNormState {
    Tensor<T> running_mean;
    Tensor<T> running_var;

    explicit BatchNormState(std::size_t channels = 0)
        : running_mean(Shape{1, channels, 1, 1}, T(0)), running_var(Shape{1, channels, 1, 1}, T(1)) {}
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormState<T>& state,
                     Mode mode, T eps = T(kBatchNormEps), T momentum = T(kBatchNormMomentum)) {
    const Shape& s = x.shape();
    const Shape cs{1, s.c, 1, 1};
    if (gamma.shape() != cs || beta.shape() != cs) {
        throw shape_error("batch_norm: affine parameters must be " + cs.str() + ", got " + gamma.shape().str() +
                          " and " + beta.shape().str());
    }
    if (state.running_mean.shape() != cs || state.running_var.shape() != cs) {
        throw shape_error("batch_norm: running statistics do not match channel count " + std::to_string(s.c));
    }
    if (!(eps > T(0))) throw std::invalid_argument("batch_norm: eps must be positive");
    const std::size_t hw = s.plane();
    const std::size_t m = s.n * hw;
    Tensor<T> out(s);
    std::vector<T> mean(s.c), invstd(s.c);
    Tensor<T> xhat(s);

    for (std::size_t c = 0; c < s.c; ++c) {
        T mu, var;
        if (mode == Mode::train) {
            double acc = 0;
            for (std::size_t b = 0; b < s.n; ++b) {
                const T* p = x.raw() + (b * s.c + c) * hw;
                for (std::size_t k = 0; k < hw; ++k) acc += p[k];
            }
            mu = static_cast<T>(acc / static_cast<double>(m));
            double sq = 0;
            for (std::size_t b = 0; b < s.n; ++b) {
                const T* p = x.raw() + (b * s.c + c) * hw;
                for (std::size_t k = 0; k < hw; ++k) {
                    const double d = static_cast<double>(p[k]) - mu;
                    sq += d * d;
                }
            }
            var = static_cast<T>(sq / static_cast<double>(m));
            const T unbiased = m > 1 ? static_cast<T>(sq / static_cast<double>(m - 1)) : var;
            state.running_mean[c] = (T(1) - momentum) * state.running_mean[c] + momentum * mu;
            state.running_var[c] = (T(1) - momentum) * state.running_var[c] + momentum * unbiased;
        } else {
            mu = state.running_mean[c];
            var = state.running_var[c];
        }
        mean[c] = mu;
        invstd[c] = T(1) / std::sqrt(var + eps);
        const T gc = gamma[c], bc = beta[c];
        for (std::size_t b = 0; b < s.n; ++b) {
            const std::size_t off = (b * s.c + c) * hw;
            for (std::size_t k = 0; k < hw; ++k) {
                const T xh = (x[off + k] - mu) * invstd[c];
                xhat[off + k] = xh;
                out[off + k] = gc * xh + bc;
            }
        }
    }

    record("batch_norm", out, {x, gamma, beta}, [x, gamma, beta, out, xhat, invstd, mode, s, hw, m]() mutable {
        auto g = out.grad();
        for (std::size_t c = 0; c < s.c; ++c) {
            T sum_g = 0, sum_gx = 0;
            for (std::size_t b = 0; b < s.n; ++b) {
                const std::size_t off = (b * s.c + c) * hw;
                for (std::size_t k = 0; k < hw; ++k) {
                    sum_g += g[off + k];
                    sum_gx += g[off + k] * xhat[off + k];
                }
            }
            if (gamma.requires_grad()) gamma.grad_mut()[c] += sum_gx;
            if (beta.requires_grad()) beta.grad_mut()[c] += sum_g;
            if (!x.requires_grad()) continue;
            auto gx = x.grad_mut();
            const T gc = gamma[c];
            if (mode == Mode::train) {
                const T scale = gc * invstd[c] / static_cast<T>(m);
                for (std::size_t b = 0; b < s.n; ++b) {
                    const std::size_t off = (b * s.c + c) * hw;
                    for (std::size_t k = 0; k < hw; ++k) {
                        gx[off + k] += scale * (static_cast<T>(m) * g[off + k] - sum_g - xhat[off + k] * sum_gx);
                    }
                }
            } else {
                const T scale = gc * invstd[c];
                for (std::size_t b = 0; b < s.n; ++b) {
                    const std::size_t off = (b * s.c + c) * hw;
                    for (std::size_t k = 0; k < hw; ++k) gx[off + k] += scale * g[off + k];
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Heads and plumbing

/// max(x, 0); the subgradient at 0 is 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    auto o = out.data();
    auto v = x.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = v[i] > T(0) ? v[i] : T(0);
    record("relu", out, {x}, [x, out]() mutable {
        auto g = out.grad();
        auto gx = x.grad_mut();
        auto v = x.data();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (v[i] > T(0)) gx[i] += g[i];
    });
    return out;
}

/// (B,C,H,W) -> (B,C,1,1) spatial mean.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    const Shape& s = x.shape();
    const std::size_t hw = s.plane();
    Tensor<T> out(Shape{s.n, s.c, 1, 1});
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
        T acc = 0;
        for (std::size_t k = 0; k < hw; ++k) acc += x[p * hw + k];
        out[p] = acc / static_cast<T>(hw);
    }
    record("global_avg_pool", out, {x}, [x, out, hw]() mutable {
        auto g = out.grad();
        auto gx = x.grad_mut();
        const T inv = T(1) / static_cast<T>(hw);
        for (std::size_t p = 0; p < g.size(); ++p)
            for (std::size_t k = 0; k < hw; ++k) gx[p * hw + k] += g[p] * inv;
    });
    return out;
}

/// 2x2 window, stride 2. Gradient goes to the first maximal element of a window.
template <typename T>
Tensor<T> max_pool2x2(const Tensor<T>& x) {
    const Shape& s = x.shape();
    if (s.h % 2 || s.w % 2) throw shape_error("max_pool2x2: odd spatial size " + s.str());
    const Shape os{s.n, s.c, s.h / 2, s.w / 2};
    Tensor<T> out(os);
    std::vector<std::uint32_t> arg(os.numel());
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
        for (std::size_t i = 0; i < os.h; ++i) {
            for (std::size_t j = 0; j < os.w; ++j) {
                std::size_t best = (p * s.h + 2 * i) * s.w + 2 * j;
                for (std::size_t di = 0; di < 2; ++di)
                    for (std::size_t dj = 0; dj < 2; ++dj) {
                        const std::size_t k = (p * s.h + 2 * i + di) * s.w + 2 * j + dj;
                        if (x[k] > x[best]) best = k;
                    }
                const std::size_t o = (p * os.h + i) * os.w + j;
                out[o] = x[best];
                arg[o] = static_cast<std::uint32_t>(best);
            }
        }
    }
    record("max_pool2x2", out, {x}, [x, out, arg = std::move(arg)]() mutable {
        auto g = out.grad();
        auto gx = x.grad_mut();
        for (std::size_t o = 0; o < g.size(); ++o) gx[arg[o]] += g[o];
    });
    return out;
}

/// Fully connected layer on (B,C,1,1) features. weight (K,C,1,1), bias (1,K,1,1).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    if (x.shape().h != 1 || x.shape().w != 1) throw shape_error("linear: expects (B,C,1,1), got " + x.shape().str());
    return conv1x1(x, weight, std::optional<Tensor<T>>(bias));
}

/// Mean over the batch of -log softmax(logits)[label]. logits: (B,K,1,1).
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
    const Shape& s = logits.shape();
    if (s.h != 1 || s.w != 1) throw shape_error("softmax_cross_entropy: expects (B,K,1,1), got " + s.str());
    if (labels.size() != s.n) {
        throw shape_error("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                          std::to_string(s.n));
    }
    const std::size_t k = s.c;
    std::vector<T> prob(s.numel());
    double loss = 0;
    for (std::size_t b = 0; b < s.n; ++b) {
        const int y = labels[b];
        if (y < 0 || static_cast<std::size_t>(y) >= k) {
            throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(y) + " outside [0," +
                                    std::to_string(k) + ")");
        }
        const T* z = logits.raw() + b * k;
        const T zmax = *std::max_element(z, z + k);
        double denom = 0;
        for (std::size_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(z[j] - zmax));
        for (std::size_t j = 0; j < k; ++j) prob[b * k + j] = static_cast<T>(std::exp(static_cast<double>(z[j] - zmax)) / denom);
        loss += std::log(denom) - static_cast<double>(z[y] - zmax);
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(loss / static_cast<double>(s.n)));
    std::vector<int> lab(labels.begin(), labels.end());
    record("softmax_cross_entropy", out, {logits},
           [logits, out, prob = std::move(prob), lab = std::move(lab), k]() mutable {
               const T g = out.grad()[0] / static_cast<T>(lab.size());
               auto gz = logits.grad_mut();
               for (std::size_t b = 0; b < lab.size(); ++b) {
                   for (std::size_t j = 0; j < k; ++j) {
                       const T onehot = static_cast<std::size_t>(lab[b]) == j ? T(1) : T(0);
                       gz[b * k + j] += g * (prob[b * k + j] - onehot);
                   }
               }
           });
    return out;
}

/// Index of the largest logit per sample; ties go to the lowest class index.
template <typename T>
std::vector<int> argmax_classes(const Tensor<T>& logits) {
    const Shape& s = logits.shape();
    std::vector<int> out(s.n);
    for (std::size_t b = 0; b < s.n; ++b) {
        const T* z = logits.raw() + b * s.c * s.plane();
        std::size_t best = 0;
        for (std::size_t j = 1; j < s.c; ++j)
            if (z[j] > z[best]) best = j;
        out[b] = static_cast<int>(best);
    }
    return out;
}

}  // namespace dctnet
