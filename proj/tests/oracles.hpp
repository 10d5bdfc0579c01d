#pragma once
// Brute-force references used by the tests. Nothing here calls into the library
// except for Tensor storage and the tape, so the checks stay independent.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "dctnet/tensor.hpp"

namespace oracle {

using dctnet::Shape;
using dctnet::Tensor;

/// X_k = sum_n x_n cos(pi/N (n + 1/2) k), evaluated term by term in long double.
inline std::vector<double> dct(const std::vector<double>& x) {
    const std::size_t N = x.size();
    std::vector<double> X(N);
    for (std::size_t k = 0; k < N; ++k) {
        long double s = 0;
        for (std::size_t n = 0; n < N; ++n)
            s += x[n] * std::cos(std::numbers::pi_v<long double> / N * (n + 0.5L) * k);
        X[k] = static_cast<double>(s);
    }
    return X;
}

/// x_n = X_0/N + 2/N sum_{k>=1} X_k cos(pi/N (n + 1/2) k).
inline std::vector<double> idct(const std::vector<double>& X) {
    const std::size_t N = X.size();
    std::vector<double> x(N);
    for (std::size_t n = 0; n < N; ++n) {
        long double s = X[0] / static_cast<long double>(N);
        for (std::size_t k = 1; k < N; ++k)
            s += 2.0L / N * X[k] * std::cos(std::numbers::pi_v<long double> / N * (n + 0.5L) * k);
        x[n] = static_cast<double>(s);
    }
    return x;
}

/// Row/column 2D DCT of one H x W plane stored row-major.
inline std::vector<double> dct2(const std::vector<double>& img, std::size_t h, std::size_t w, bool inverse = false) {
    std::vector<double> out(img);
    for (std::size_t i = 0; i < h; ++i) {
        std::vector<double> row(out.begin() + i * w, out.begin() + (i + 1) * w);
        row = inverse ? idct(row) : dct(row);
        std::copy(row.begin(), row.end(), out.begin() + i * w);
    }
    for (std::size_t j = 0; j < w; ++j) {
        std::vector<double> col(h);
        for (std::size_t i = 0; i < h; ++i) col[i] = out[i * w + j];
        col = inverse ? idct(col) : dct(col);
        for (std::size_t i = 0; i < h; ++i) out[i * w + j] = col[i];
    }
    return out;
}

/// Cross-correlation with zero padding K/2, six nested loops.
inline Tensor<double> conv(const Tensor<double>& x, const Tensor<double>& k, std::size_t stride) {
    const Shape s = x.shape(), ks = k.shape();
    const std::size_t pad = ks.h / 2;
    const std::size_t oh = (s.h + 2 * pad - ks.h) / stride + 1, ow = (s.w + 2 * pad - ks.w) / stride + 1;
    Tensor<double> y(Shape{s.n, ks.n, oh, ow});
    for (std::size_t b = 0; b < s.n; ++b)
        for (std::size_t co = 0; co < ks.n; ++co)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    double acc = 0;
                    for (std::size_t ci = 0; ci < s.c; ++ci)
                        for (std::size_t u = 0; u < ks.h; ++u)
                            for (std::size_t v = 0; v < ks.w; ++v) {
                                const long ii = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                                const long jj = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                                if (ii < 0 || jj < 0 || ii >= static_cast<long>(s.h) || jj >= static_cast<long>(s.w)) continue;
                                acc += k(co, ci, u, v) * x(b, ci, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
                            }
                    y(b, co, i, j) = acc;
                }
    return y;
}

inline void fill_uniform(Tensor<double>& t, std::mt19937_64& rng, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> u(lo, hi);
    for (double& v : t.data()) v = u(rng);
}

inline Tensor<double> random(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
    Tensor<double> t(s);
    fill_uniform(t, rng, lo, hi);
    return t;
}

/// Fixed pseudo-random projection weights so the scalar loss touches every output.
inline Tensor<double> probe(Shape s) {
    Tensor<double> w(s);
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = std::sin(0.7 * static_cast<double>(i) + 0.3);
    return w;
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
    return s;
}

/// Largest relative error between analytic gradients of `loss` (already in
/// each tensor's grad) and central differences. Magnitudes below 1e-3 are
/// compared against 1e-3 so exact zeros do not divide by zero.
inline double max_grad_error(std::vector<Tensor<double>> wrt, const std::function<double()>& loss, double step = 1e-6) {
    double worst = 0;
    for (auto& t : wrt) {
        const std::vector<double> g(t.grad().begin(), t.grad().end());
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double keep = t[i];
            t[i] = keep + step;
            const double up = loss();
            t[i] = keep - step;
            const double dn = loss();
            t[i] = keep;
            const double fd = (up - dn) / (2 * step);
            const double an = g.empty() ? 0.0 : g[i];
            worst = std::max(worst, std::fabs(fd - an) / std::max({1e-3, std::fabs(fd), std::fabs(an)}));
        }
    }
    return worst;
}

}  // namespace oracle
