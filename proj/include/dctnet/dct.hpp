#pragma once

#include <Eigen/Core>

#include <array>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstddef>
#include <deque>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dctnet/ops.hpp"
#include "dctnet/tensor.hpp"

// Unnormalized DCT-II pair:
//   X_k = sum_n x_n cos(pi/N (n + 1/2) k)
//   x_n = X_0 / N + (2/N) sum_{k>=1} X_k cos(pi/N (n + 1/2) k)

namespace dctnet {

enum class DctBackend { naive_matrix, fast_butterfly };

inline const char* to_string(DctBackend b) {
    return b == DctBackend::naive_matrix ? "naive_matrix" : "fast_butterfly";
}

struct OpCount {
    std::size_t multiplications = 0;
    std::size_t additions = 0;
    friend bool operator==(const OpCount&, const OpCount&) = default;
};

namespace detail {

/// Scalar that tallies arithmetic, used to measure the fast path's real cost.
struct CountingScalar {
    double v = 0;

    static OpCount& tally() {
        thread_local OpCount c;
        return c;
    }

    CountingScalar() = default;
    CountingScalar(double x) : v(x) {}  // NOLINT: implicit on purpose, mirrors double

    friend CountingScalar operator+(CountingScalar a, CountingScalar b) {
        ++tally().additions;
        return {a.v + b.v};
    }
    friend CountingScalar operator-(CountingScalar a, CountingScalar b) {
        ++tally().additions;
        return {a.v - b.v};
    }
    friend CountingScalar operator*(CountingScalar a, CountingScalar b) {
        ++tally().multiplications;
        return {a.v * b.v};
    }
};

// Lee's recursive split. `coef[level][i]` = 1 / (2 cos((i + 1/2) pi / n)) with n = 2^level.
template <typename U, typename C>
void lee_forward(U* v, U* tmp, std::size_t n, const std::vector<std::vector<C>>& coef) {
    if (n == 1) return;
    const std::size_t half = n / 2;
    const auto& c = coef[static_cast<std::size_t>(std::countr_zero(n))];
    for (std::size_t i = 0; i < half; ++i) {
        const U x = v[i];
        const U y = v[n - 1 - i];
        tmp[i] = x + y;
        tmp[i + half] = (x - y) * U(c[i]);
    }
    lee_forward(tmp, v, half, coef);
    lee_forward(tmp + half, v, half, coef);
    for (std::size_t i = 0; i + 1 < half; ++i) {
        v[2 * i] = tmp[i];
        v[2 * i + 1] = tmp[i + half] + tmp[i + half + 1];
    }
    v[n - 2] = tmp[half - 1];
    v[n - 1] = tmp[n - 1];
}

// Transpose of lee_forward: y_n = sum_k X_k cos(pi/N (n + 1/2) k).
template <typename U, typename C>
void lee_transpose(U* v, U* tmp, std::size_t n, const std::vector<std::vector<C>>& coef) {
    if (n == 1) return;
    const std::size_t half = n / 2;
    const auto& c = coef[static_cast<std::size_t>(std::countr_zero(n))];
    tmp[0] = v[0];
    tmp[half] = v[1];
    for (std::size_t i = 1; i < half; ++i) {
        tmp[i] = v[2 * i];
        tmp[i + half] = v[2 * i - 1] + v[2 * i + 1];
    }
    lee_transpose(tmp, v, half, coef);
    lee_transpose(tmp + half, v, half, coef);
    for (std::size_t i = 0; i < half; ++i) {
        const U x = tmp[i];
        const U y = tmp[i + half] * U(c[i]);
        v[i] = x + y;
        v[n - 1 - i] = x - y;
    }
}

template <typename C>
std::vector<std::vector<C>> lee_coefficients(std::size_t n) {
    std::vector<std::vector<C>> coef(static_cast<std::size_t>(std::countr_zero(n)) + 1);
    for (std::size_t m = 2; m <= n; m *= 2) {
        auto& c = coef[static_cast<std::size_t>(std::countr_zero(m))];
        c.resize(m / 2);
        for (std::size_t i = 0; i < m / 2; ++i) {
            c[i] = static_cast<C>(1.0 / (2.0 * std::cos((static_cast<double>(i) + 0.5) * std::numbers::pi / static_cast<double>(m))));
        }
    }
    return coef;
}

}  // namespace detail

/// Precomputed transform data for one length. Immutable after construction.
template <typename T>
class DctPlan {
public:
    using Matrix = RowMatrix<T>;

    DctPlan(std::size_t n, DctBackend requested) : n_(n), requested_(requested), backend_(requested) {
        if (n == 0) throw std::invalid_argument("DctPlan: length must be positive");
        if (requested == DctBackend::fast_butterfly && !std::has_single_bit(n)) {
            backend_ = DctBackend::naive_matrix;
            note_ = "length " + std::to_string(n) + " is not a power of two; using naive_matrix";
        }
        forward_.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        inverse_.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        const double N = static_cast<double>(n);
        for (std::size_t k = 0; k < n; ++k) {
            for (std::size_t i = 0; i < n; ++i) {
                const double c = std::cos(std::numbers::pi / N * (static_cast<double>(i) + 0.5) * static_cast<double>(k));
                forward_(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = static_cast<T>(c);
                inverse_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = static_cast<T>(c * (k == 0 ? 1.0 : 2.0) / N);
            }
        }
        weights_.resize(n);
        for (std::size_t k = 0; k < n; ++k) weights_[k] = static_cast<T>((k == 0 ? 1.0 : 2.0) / N);
        if (backend_ == DctBackend::fast_butterfly) coef_ = detail::lee_coefficients<T>(n);
    }

    std::size_t size() const noexcept { return n_; }
    DctBackend backend() const noexcept { return backend_; }
    DctBackend requested_backend() const noexcept { return requested_; }
    bool downgraded() const noexcept { return backend_ != requested_; }
    const std::string& note() const noexcept { return note_; }

    /// M[k,n] = cos(pi/N (n + 1/2) k)
    const Matrix& forward_basis() const noexcept { return forward_; }
    /// Inverse of forward_basis, with weights 1/N (k = 0) and 2/N.
    const Matrix& inverse_basis() const noexcept { return inverse_; }

    // In-place strided 1D kernels. `stride` steps between consecutive samples.
    void forward(T* v, std::size_t stride = 1) const { apply(v, stride, Kind::forward); }
    void inverse(T* v, std::size_t stride = 1) const { apply(v, stride, Kind::inverse); }
    /// Applies forward_basis^T.
    void forward_transpose(T* v, std::size_t stride = 1) const { apply(v, stride, Kind::forward_t); }
    /// Applies inverse_basis^T.
    void inverse_transpose(T* v, std::size_t stride = 1) const { apply(v, stride, Kind::inverse_t); }

    /// Arithmetic performed by one 1D forward transform on this plan's backend.
    OpCount op_count_1d() const {
        if (backend_ == DctBackend::naive_matrix) return {n_ * n_, n_ * (n_ - 1)};
        auto coef = detail::lee_coefficients<double>(n_);
        std::vector<detail::CountingScalar> v(n_, 1.0), tmp(n_);
        auto& tally = detail::CountingScalar::tally();
        tally = {};
        detail::lee_forward(v.data(), tmp.data(), n_, coef);
        const OpCount c = tally;
        tally = {};
        return c;
    }

    /// Row-column 2D transform on an n x n image: 2n one-dimensional transforms.
    OpCount op_count_2d() const {
        const OpCount c = op_count_1d();
        return {2 * n_ * c.multiplications, 2 * n_ * c.additions};
    }

private:
    enum class Kind { forward, inverse, forward_t, inverse_t };

    void apply(T* v, std::size_t stride, Kind kind) const {
        thread_local std::vector<T> buf, tmp;
        buf.resize(n_);
        tmp.resize(n_);
        for (std::size_t i = 0; i < n_; ++i) buf[i] = v[i * stride];
        if (backend_ == DctBackend::fast_butterfly) {
            switch (kind) {
                case Kind::forward: detail::lee_forward(buf.data(), tmp.data(), n_, coef_); break;
                case Kind::forward_t: detail::lee_transpose(buf.data(), tmp.data(), n_, coef_); break;
                case Kind::inverse:
                    for (std::size_t k = 0; k < n_; ++k) buf[k] *= weights_[k];
                    detail::lee_transpose(buf.data(), tmp.data(), n_, coef_);
                    break;
                case Kind::inverse_t:
                    detail::lee_forward(buf.data(), tmp.data(), n_, coef_);
                    for (std::size_t k = 0; k < n_; ++k) buf[k] *= weights_[k];
                    break;
            }
        } else {
            Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> in(buf.data(), static_cast<Eigen::Index>(n_));
            Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> out(tmp.data(), static_cast<Eigen::Index>(n_));
            switch (kind) {
                case Kind::forward: out.noalias() = forward_ * in; break;
                case Kind::inverse: out.noalias() = inverse_ * in; break;
                case Kind::forward_t: out.noalias() = forward_.transpose() * in; break;
                case Kind::inverse_t: out.noalias() = inverse_.transpose() * in; break;
            }
            std::swap(buf, tmp);
        }
        for (std::size_t i = 0; i < n_; ++i) v[i * stride] = buf[i];
    }

    std::size_t n_;
    DctBackend requested_;
    DctBackend backend_;
    std::string note_;
    Matrix forward_;
    Matrix inverse_;
    std::vector<T> weights_;
    std::vector<std::vector<T>> coef_;
};

template <typename T>
DctPlan<T> make_plan(std::size_t n, DctBackend backend) {
    return DctPlan<T>(n, backend);
}

/// Process-wide plan registry. Lookups for n < kSlots are a single atomic
/// load once the plan exists; construction is serialized.
template <typename T>
const DctPlan<T>& cached_plan(std::size_t n, DctBackend backend) {
    constexpr std::size_t kSlots = 1024;
    static std::array<std::array<std::atomic<const DctPlan<T>*>, kSlots>, 2> slots{};
    static std::mutex mutex;
    static std::deque<std::unique_ptr<const DctPlan<T>>> owned;
    const std::size_t b = backend == DctBackend::naive_matrix ? 0 : 1;
    if (n == 0) throw std::invalid_argument("cached_plan: length must be positive");
    if (n < kSlots) {
        if (const auto* p = slots[b][n].load(std::memory_order_acquire)) return *p;
    }
    std::lock_guard lock(mutex);
    if (n < kSlots) {
        if (const auto* p = slots[b][n].load(std::memory_order_acquire)) return *p;
    } else {
        for (const auto& p : owned)
            if (p->size() == n && p->requested_backend() == backend) return *p;
    }
    owned.push_back(std::make_unique<const DctPlan<T>>(n, backend));
    const DctPlan<T>* p = owned.back().get();
    if (n < kSlots) slots[b][n].store(p, std::memory_order_release);
    return *p;
}

// ---------------------------------------------------------------------------
// 1D

template <typename T>
std::vector<T> dct1d(const DctPlan<T>& plan, std::span<const T> x) {
    if (x.size() != plan.size()) {
        throw shape_error("dct1d: input length " + std::to_string(x.size()) + " != plan length " + std::to_string(plan.size()));
    }
    std::vector<T> out(x.begin(), x.end());
    plan.forward(out.data());
    return out;
}

template <typename T>
std::vector<T> idct1d(const DctPlan<T>& plan, std::span<const T> X) {
    if (X.size() != plan.size()) {
        throw shape_error("idct1d: input length " + std::to_string(X.size()) + " != plan length " + std::to_string(plan.size()));
    }
    std::vector<T> out(X.begin(), X.end());
    plan.inverse(out.data());
    return out;
}

// ---------------------------------------------------------------------------
// 2D, separable over each (batch, channel) plane

namespace detail {

enum class PlaneOp { forward, inverse, forward_t, inverse_t };

template <typename T>
const RowMatrix<T>& plane_matrix(const DctPlan<T>& p, PlaneOp op) {
    return (op == PlaneOp::forward || op == PlaneOp::forward_t) ? p.forward_basis() : p.inverse_basis();
}

// Applies A_h * X * A_w^T to every plane (A = basis or its transpose per op).
template <typename T>
void apply_planes(T* data, std::size_t planes, const DctPlan<T>& ph, const DctPlan<T>& pw, PlaneOp op) {
    const std::size_t h = ph.size(), w = pw.size();
    const bool transposed = op == PlaneOp::forward_t || op == PlaneOp::inverse_t;
    const bool dense = ph.backend() == DctBackend::naive_matrix && pw.backend() == DctBackend::naive_matrix;
    if (dense) {
        const auto& Mh = plane_matrix(ph, op);
        const auto& Mw = plane_matrix(pw, op);
        MatMap<T> rows(data, static_cast<Eigen::Index>(planes * h), static_cast<Eigen::Index>(w));
        RowMatrix<T> tmp;
        if (transposed) tmp.noalias() = rows * Mw; else tmp.noalias() = rows * Mw.transpose();
        rows = tmp;
        RowMatrix<T> plane_out(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(w));
        for (std::size_t p = 0; p < planes; ++p) {
            MatMap<T> P(data + p * h * w, static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(w));
            if (transposed) plane_out.noalias() = Mh.transpose() * P; else plane_out.noalias() = Mh * P;
            P = plane_out;
        }
        return;
    }
    auto run = [op](const DctPlan<T>& plan, T* v, std::size_t stride) {
        switch (op) {
            case PlaneOp::forward: plan.forward(v, stride); break;
            case PlaneOp::inverse: plan.inverse(v, stride); break;
            case PlaneOp::forward_t: plan.forward_transpose(v, stride); break;
            case PlaneOp::inverse_t: plan.inverse_transpose(v, stride); break;
        }
    };
    for (std::size_t p = 0; p < planes; ++p) {
        T* P = data + p * h * w;
        for (std::size_t i = 0; i < h; ++i) run(pw, P + i * w, 1);
        for (std::size_t j = 0; j < w; ++j) run(ph, P + j, w);
    }
}

template <typename T>
void check_plans(const Shape& s, const DctPlan<T>& ph, const DctPlan<T>& pw, const char* op) {
    if (s.h != ph.size() || s.w != pw.size()) {
        throw shape_error(std::string(op) + ": spatial size " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                          " does not match plans " + std::to_string(ph.size()) + "x" + std::to_string(pw.size()));
    }
}

}  // namespace detail

/// Per-plane 2D DCT along width then height. Differentiable.
template <typename T>
Tensor<T> dct2d(const DctPlan<T>& ph, const DctPlan<T>& pw, const Tensor<T>& x) {
    detail::check_plans(x.shape(), ph, pw, "dct2d");
    Tensor<T> out = x.clone();
    const std::size_t planes = x.shape().n * x.shape().c;
    detail::apply_planes(out.raw(), planes, ph, pw, detail::PlaneOp::forward);
    record("dct2d", out, {x}, [x, out, &ph, &pw, planes]() mutable {
        std::vector<T> g(out.grad().begin(), out.grad().end());
        detail::apply_planes(g.data(), planes, ph, pw, detail::PlaneOp::forward_t);
        detail::axpy(x.grad_mut(), std::span<const T>(g));
    });
    return out;
}

template <typename T>
Tensor<T> idct2d(const DctPlan<T>& ph, const DctPlan<T>& pw, const Tensor<T>& X) {
    detail::check_plans(X.shape(), ph, pw, "idct2d");
    Tensor<T> out = X.clone();
    const std::size_t planes = X.shape().n * X.shape().c;
    detail::apply_planes(out.raw(), planes, ph, pw, detail::PlaneOp::inverse);
    record("idct2d", out, {X}, [X, out, &ph, &pw, planes]() mutable {
        std::vector<T> g(out.grad().begin(), out.grad().end());
        detail::apply_planes(g.data(), planes, ph, pw, detail::PlaneOp::inverse_t);
        detail::axpy(X.grad_mut(), std::span<const T>(g));
    });
    return out;
}

/// Square-image convenience using cached plans.
template <typename T>
Tensor<T> dct2d(const Tensor<T>& x, DctBackend backend = DctBackend::fast_butterfly) {
    return dct2d(cached_plan<T>(x.shape().h, backend), cached_plan<T>(x.shape().w, backend), x);
}

template <typename T>
Tensor<T> idct2d(const Tensor<T>& X, DctBackend backend = DctBackend::fast_butterfly) {
    return idct2d(cached_plan<T>(X.shape().h, backend), cached_plan<T>(X.shape().w, backend), X);
}

}  // namespace dctnet
