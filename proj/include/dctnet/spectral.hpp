#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dctnet/dct.hpp"
#include "dctnet/ops.hpp"
#include "dctnet/tensor.hpp"

namespace dctnet {

/// Palindromic extension of a compact half-kernel: w~_k = w_{|K-1-k|}, length 2K-1.
template <typename T>
std::vector<T> extend_kernel(std::span<const T> w) {
    if (w.empty()) throw std::invalid_argument("extend_kernel: empty kernel");
    const std::size_t K = w.size();
    std::vector<T> out(2 * K - 1);
    for (std::size_t k = 0; k < out.size(); ++k) {
        const std::ptrdiff_t d = static_cast<std::ptrdiff_t>(K) - 1 - static_cast<std::ptrdiff_t>(k);
        out[k] = w[static_cast<std::size_t>(d < 0 ? -d : d)];
    }
    return out;
}

namespace detail {

// Half-sample symmetric extension: x^_{-1-j} = x_j, x^_{N+j} = x_{N-1-j}.
inline std::size_t reflect_half_sample(std::ptrdiff_t i, std::size_t n) {
    const auto N = static_cast<std::ptrdiff_t>(n);
    if (i < 0) i = -1 - i;
    if (i >= N) i = 2 * N - 1 - i;
    return static_cast<std::size_t>(i);
}

inline void check_kernel_fits(std::size_t K, std::size_t N, const char* op) {
    if (K == 0) throw std::invalid_argument(std::string(op) + ": empty kernel");
    if (K > N) {
        throw std::invalid_argument(std::string(op) + ": kernel half-length " + std::to_string(K) +
                                    " exceeds signal length " + std::to_string(N));
    }
}

}  // namespace detail

/// Spatial symmetric convolution x *^s w = x * w~ with half-sample symmetric
/// boundary extension of x. Reference path for the transform-domain filter.
template <typename T>
std::vector<T> sym_conv_spatial(std::span<const T> x, std::span<const T> w) {
    const std::size_t N = x.size();
    const std::size_t K = w.size();
    detail::check_kernel_fits(K, N, "sym_conv_spatial");
    const std::vector<T> wt = extend_kernel(w);
    std::vector<T> y(N, T(0));
    for (std::size_t n = 0; n < N; ++n) {
        T acc = 0;
        for (std::size_t m = 0; m < wt.size(); ++m) {
            const std::ptrdiff_t i = static_cast<std::ptrdiff_t>(n + m) - static_cast<std::ptrdiff_t>(K - 1);
            acc += wt[m] * x[detail::reflect_half_sample(i, N)];
        }
        y[n] = acc;
    }
    return y;
}

/// N x N matrix S with sym_conv_spatial(x, w) = S x.
template <typename T>
RowMatrix<T> sym_conv_operator(std::span<const T> w, std::size_t N) {
    detail::check_kernel_fits(w.size(), N, "sym_conv_operator");
    RowMatrix<T> S = RowMatrix<T>::Zero(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
    std::vector<T> e(N, T(0));
    for (std::size_t j = 0; j < N; ++j) {
        e[j] = T(1);
        const auto col = sym_conv_spatial<T>(e, w);
        for (std::size_t i = 0; i < N; ++i) S(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col[i];
        e[j] = T(0);
    }
    return S;
}

/// DCT-domain multipliers of a symmetric kernel:
/// V_k = w_0 + 2 sum_{m=1}^{K-1} w_m cos(pi k m / N).
/// idct(dct(x) * V) reproduces sym_conv_spatial(x, w).
template <typename T>
std::vector<T> kernel_to_multipliers(std::span<const T> w, std::size_t N) {
    detail::check_kernel_fits(w.size(), N, "kernel_to_multipliers");
    std::vector<T> V(N);
    for (std::size_t k = 0; k < N; ++k) {
        double acc = static_cast<double>(w[0]);
        for (std::size_t m = 1; m < w.size(); ++m) {
            acc += 2.0 * static_cast<double>(w[m]) *
                   std::cos(std::numbers::pi * static_cast<double>(k * m) / static_cast<double>(N));
        }
        V[k] = static_cast<T>(acc);
    }
    return V;
}

/// idct2d(dct2d(x) * V), V of shape (1,1,H,W) shared across batch and channels.
template <typename T>
Tensor<T> dct_filter_2d(const Tensor<T>& x, const Tensor<T>& V, DctBackend backend = DctBackend::fast_butterfly) {
    const Shape& s = x.shape();
    if (V.shape() != Shape{1, 1, s.h, s.w}) {
        throw shape_error("dct_filter_2d: multipliers " + V.shape().str() + " do not match input " + s.str());
    }
    return idct2d(scale_broadcast(dct2d(x, backend), V), backend);
}

/// Keeps the low-frequency top-left (H/2, W/2) block of a DCT-domain tensor,
/// scaled by 1/4 so that idct at half size preserves a constant image.
template <typename T>
Tensor<T> truncate_spectrum(const Tensor<T>& X) {
    const Shape& s = X.shape();
    if (s.h % 2 || s.w % 2) throw shape_error("truncate_spectrum: odd spatial size " + s.str());
    const Shape os{s.n, s.c, s.h / 2, s.w / 2};
    Tensor<T> out(os);
    const T q = T(0.25);
    for (std::size_t p = 0; p < s.n * s.c; ++p)
        for (std::size_t i = 0; i < os.h; ++i)
            for (std::size_t j = 0; j < os.w; ++j) out[(p * os.h + i) * os.w + j] = q * X[(p * s.h + i) * s.w + j];
    record("truncate_spectrum", out, {X}, [X, out, s, os, q]() mutable {
        auto g = out.grad();
        auto gx = X.grad_mut();
        for (std::size_t p = 0; p < s.n * s.c; ++p)
            for (std::size_t i = 0; i < os.h; ++i)
                for (std::size_t j = 0; j < os.w; ++j) gx[(p * s.h + i) * s.w + j] += q * g[(p * os.h + i) * os.w + j];
    });
    return out;
}

/// 2x spatial downsampling by truncating the spectrum before the inverse DCT.
template <typename T>
Tensor<T> dct_downsample(const Tensor<T>& x, DctBackend backend = DctBackend::fast_butterfly) {
    const Shape& s = x.shape();
    if (s.h % 2 || s.w % 2) throw shape_error("dct_downsample: odd spatial size " + s.str());
    return idct2d(truncate_spectrum(dct2d(x, backend)), backend);
}

}  // namespace dctnet
