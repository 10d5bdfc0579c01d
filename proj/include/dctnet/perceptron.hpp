#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dctnet/dct.hpp"
#include "dctnet/ops.hpp"
#include "dctnet/spectral.hpp"
#include "dctnet/tensor.hpp"

namespace dctnet {

enum class Nonlinearity { soft_threshold, relu_thresholded, relu_bias };

inline const char* to_string(Nonlinearity n) {
    switch (n) {
        case Nonlinearity::soft_threshold: return "soft_threshold";
        case Nonlinearity::relu_thresholded: return "relu_thresholded";
        case Nonlinearity::relu_bias: return "relu_bias";
    }
    return "?";
}

inline Nonlinearity nonlinearity_from_string(const std::string& s) {
    if (s == "soft_threshold") return Nonlinearity::soft_threshold;
    if (s == "relu_thresholded") return Nonlinearity::relu_thresholded;
    if (s == "relu_bias") return Nonlinearity::relu_bias;
    throw std::invalid_argument("unknown nonlinearity '" + s + "'");
}

namespace detail {

template <typename T>
void check_threshold(const Tensor<T>& x, const Tensor<T>& thr, const char* op) {
    const Shape& s = x.shape();
    if (thr.shape() != Shape{1, 1, s.h, s.w}) {
        throw shape_error(std::string(op) + ": thresholds " + thr.shape().str() + " do not broadcast to " + s.str());
    }
    for (T t : thr.data()) {
        if (!(t >= T(0))) throw std::domain_error(std::string(op) + ": negative threshold entry");
    }
}

}  // namespace detail

/// sign(x) * max(|x| - T, 0) with T of shape (1,1,H,W), T >= 0.
/// At the tie |x| = T both derivatives are 0.
template <typename T>
Tensor<T> soft_threshold(const Tensor<T>& x, const Tensor<T>& thr) {
    detail::check_threshold(x, thr, "soft_threshold");
    const std::size_t plane = x.shape().plane();
    const std::size_t planes = x.shape().n * x.shape().c;
    Tensor<T> out(x.shape());
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t k = 0; k < plane; ++k) {
            const T v = x[p * plane + k];
            const T m = std::abs(v) - thr[k];
            out[p * plane + k] = m > T(0) ? (v > T(0) ? m : -m) : T(0);
        }
    }
    record("soft_threshold", out, {x, thr}, [x, thr, out, plane, planes]() mutable {
        auto g = out.grad();
        const bool gx = x.requires_grad(), gt = thr.requires_grad();
        for (std::size_t p = 0; p < planes; ++p) {
            for (std::size_t k = 0; k < plane; ++k) {
                const std::size_t i = p * plane + k;
                const T v = x[i];
                if (!(std::abs(v) > thr[k])) continue;
                if (gx) x.grad_mut()[i] += g[i];
                if (gt) thr.grad_mut()[k] -= v > T(0) ? g[i] : -g[i];
            }
        }
    });
    return out;
}

/// Thresholded ReLU max(x - T, 0), T of shape (1,1,H,W).
template <typename T>
Tensor<T> relu_threshold(const Tensor<T>& x, const Tensor<T>& thr) {
    detail::check_threshold(x, thr, "relu_threshold");
    const std::size_t plane = x.shape().plane();
    const std::size_t planes = x.shape().n * x.shape().c;
    Tensor<T> out(x.shape());
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t k = 0; k < plane; ++k) {
            const T m = x[p * plane + k] - thr[k];
            out[p * plane + k] = m > T(0) ? m : T(0);
        }
    record("relu_threshold", out, {x, thr}, [x, thr, out, plane, planes]() mutable {
        auto g = out.grad();
        const bool gx = x.requires_grad(), gt = thr.requires_grad();
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t k = 0; k < plane; ++k) {
                const std::size_t i = p * plane + k;
                if (!(x[i] > thr[k])) continue;
                if (gx) x.grad_mut()[i] += g[i];
                if (gt) thr.grad_mut()[k] -= g[i];
            }
    });
    return out;
}

struct DctPerceptronConfig {
    std::size_t n = 0;  ///< spatial size of the DCT-domain processing (and of the output)
    std::size_t c_in = 0;
    std::size_t c_out = 0;
    std::size_t pods = 1;
    std::optional<bool> shortcut;  ///< unset: on for a single pod, off for two or more
    Nonlinearity nonlinearity = Nonlinearity::soft_threshold;
    bool downsample = false;  ///< input is 2n x 2n; the spectrum is truncated to n x n
    DctBackend backend = DctBackend::fast_butterfly;

    static DctPerceptronConfig square(std::size_t n, std::size_t c, std::size_t pods = 1) {
        DctPerceptronConfig cfg;
        cfg.n = n;
        cfg.c_in = c;
        cfg.c_out = c;
        cfg.pods = pods;
        return cfg;
    }

    std::size_t input_size() const noexcept { return downsample ? 2 * n : n; }
    bool same_shape() const noexcept { return !downsample && c_in == c_out; }
    bool has_shortcut() const noexcept { return shortcut.value_or(pods == 1) && same_shape(); }
    bool has_threshold() const noexcept { return nonlinearity != Nonlinearity::relu_bias; }
    bool has_bias() const noexcept { return nonlinearity == Nonlinearity::relu_bias; }

    void validate() const {
        if (n == 0 || c_in == 0 || c_out == 0) throw std::invalid_argument("DctPerceptronConfig: zero dimension");
        if (pods == 0) throw std::invalid_argument("DctPerceptronConfig: at least one pod required");
        if (shortcut.value_or(false) && !same_shape()) {
            throw std::invalid_argument("DctPerceptronConfig: shortcut requested but input and output shapes differ");
        }
    }

    /// Trainable scalars: per pod N^2 (scaling) + N^2 (thresholds) + C_out*C_in (+ C_out bias).
    std::size_t parameter_count() const noexcept {
        std::size_t per_pod = n * n + c_out * c_in;
        if (has_threshold()) per_pod += n * n;
        if (has_bias()) per_pod += c_out;
        return pods * per_pod;
    }
};

/// One DCT-domain branch: scaling V, 1x1 mixing H, thresholds T.
template <typename T>
struct PodParams {
    Tensor<T> scaling;                   ///< V, (1,1,N,N)
    Tensor<T> mixing;                    ///< H, (C_out,C_in,1,1)
    std::optional<Tensor<T>> bias;       ///< (1,C_out,1,1), relu_bias variant only
    std::optional<Tensor<T>> threshold;  ///< T, (1,1,N,N), non-negative

    /// V = 1, T = 0, H ~ U(-1/sqrt(C_in), 1/sqrt(C_in)), bias likewise.
    template <typename Rng>
    static PodParams init(const DctPerceptronConfig& cfg, Rng& rng) {
        PodParams p = identity(cfg);
        const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.c_in));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (T& v : p.mixing.data()) v = static_cast<T>(u(rng));
        if (p.bias)
            for (T& v : p.bias->data()) v = static_cast<T>(u(rng));
        return p;
    }

    /// V = 1, H = I (zero-padded when C_out != C_in), T = 0, bias = 0.
    static PodParams identity(const DctPerceptronConfig& cfg) {
        PodParams p;
        p.scaling = Tensor<T>::ones(Shape{1, 1, cfg.n, cfg.n});
        p.mixing = Tensor<T>::zeros(Shape{cfg.c_out, cfg.c_in, 1, 1});
        for (std::size_t i = 0; i < std::min(cfg.c_in, cfg.c_out); ++i) p.mixing[i * cfg.c_in + i] = T(1);
        if (cfg.has_bias()) p.bias = Tensor<T>::zeros(Shape{1, cfg.c_out, 1, 1});
        if (cfg.has_threshold()) p.threshold = Tensor<T>::zeros(Shape{1, 1, cfg.n, cfg.n});
        p.set_requires_grad(true);
        return p;
    }

    void set_requires_grad(bool on) {
        scaling.set_requires_grad(on);
        mixing.set_requires_grad(on);
        if (bias) bias->set_requires_grad(on);
        if (threshold) threshold->set_requires_grad(on);
    }

    std::vector<Tensor<T>> tensors() const {
        std::vector<Tensor<T>> out{scaling, mixing};
        if (bias) out.push_back(*bias);
        if (threshold) out.push_back(*threshold);
        return out;
    }

    void check(const DctPerceptronConfig& cfg) const {
        if (scaling.shape() != Shape{1, 1, cfg.n, cfg.n}) throw shape_error("pod scaling shape " + scaling.shape().str());
        if (mixing.shape() != Shape{cfg.c_out, cfg.c_in, 1, 1}) throw shape_error("pod mixing shape " + mixing.shape().str());
        if (cfg.has_threshold() != threshold.has_value()) throw shape_error("pod threshold presence does not match nonlinearity");
        if (cfg.has_bias() != bias.has_value()) throw shape_error("pod bias presence does not match nonlinearity");
    }
};

/// Scaling, then 1x1 mixing, then the nonlinearity, all in the DCT domain.
template <typename T>
Tensor<T> pod_forward(const Tensor<T>& Xd, const PodParams<T>& p, Nonlinearity nl) {
    const Tensor<T> scaled = scale_broadcast(Xd, p.scaling);
    switch (nl) {
        case Nonlinearity::soft_threshold:
            if (!p.threshold) throw std::invalid_argument("pod_forward: soft_threshold needs thresholds");
            return soft_threshold(conv1x1(scaled, p.mixing), *p.threshold);
        case Nonlinearity::relu_thresholded:
            if (!p.threshold) throw std::invalid_argument("pod_forward: relu_thresholded needs thresholds");
            return relu_threshold(conv1x1(scaled, p.mixing), *p.threshold);
        case Nonlinearity::relu_bias:
            return relu(conv1x1(scaled, p.mixing, p.bias));
    }
    throw std::invalid_argument("pod_forward: unknown nonlinearity");
}

/// y = IDCT( sum_p pod_p(DCT(x)) ) (+ x). The forward DCT is shared by all
/// pods and pod outputs are summed before a single inverse transform.
template <typename T>
Tensor<T> layer_forward(const Tensor<T>& x, const DctPerceptronConfig& cfg, const std::vector<PodParams<T>>& pods) {
    cfg.validate();
    if (pods.size() != cfg.pods) {
        throw std::invalid_argument("layer_forward: config has " + std::to_string(cfg.pods) + " pods, got " +
                                    std::to_string(pods.size()) + " parameter sets");
    }
    const Shape& s = x.shape();
    const std::size_t nin = cfg.input_size();
    if (s.c != cfg.c_in || s.h != nin || s.w != nin) {
        throw shape_error("layer_forward: input " + s.str() + " expected (*," + std::to_string(cfg.c_in) + "," +
                          std::to_string(nin) + "," + std::to_string(nin) + ")");
    }
    Tensor<T> Xd = dct2d(x, cfg.backend);
    if (cfg.downsample) Xd = truncate_spectrum(Xd);
    Tensor<T> acc;
    for (std::size_t p = 0; p < pods.size(); ++p) {
        pods[p].check(cfg);
        Tensor<T> y = pod_forward(Xd, pods[p], cfg.nonlinearity);
        acc = p == 0 ? y : add(acc, y);
    }
    Tensor<T> y = idct2d(acc, cfg.backend);
    if (cfg.has_shortcut()) y = add(y, x);
    return y;
}

/// Owning wrapper: configuration plus one parameter set per pod.
template <typename T>
class DctPerceptron {
public:
    DctPerceptron() = default;

    template <typename Rng>
    DctPerceptron(DctPerceptronConfig cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        for (std::size_t p = 0; p < cfg_.pods; ++p) pods_.push_back(PodParams<T>::init(cfg_, rng));
    }

    DctPerceptron(DctPerceptronConfig cfg, std::vector<PodParams<T>> pods) : cfg_(cfg), pods_(std::move(pods)) {
        cfg_.validate();
        if (pods_.size() != cfg_.pods) throw std::invalid_argument("DctPerceptron: pod count mismatch");
        for (const auto& p : pods_) p.check(cfg_);
    }

    Tensor<T> forward(const Tensor<T>& x) const { return layer_forward(x, cfg_, pods_); }

    const DctPerceptronConfig& config() const noexcept { return cfg_; }
    std::vector<PodParams<T>>& pods() noexcept { return pods_; }
    const std::vector<PodParams<T>>& pods() const noexcept { return pods_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : pods_)
            for (const auto& t : p.tensors()) n += t.numel();
        return n;
    }

    /// Clamps every threshold entry at 0.
    void project_thresholds() {
        for (auto& p : pods_)
            if (p.threshold)
                for (T& v : p.threshold->data()) v = v < T(0) ? T(0) : v;
    }

private:
    DctPerceptronConfig cfg_;
    std::vector<PodParams<T>> pods_;
};

}  // namespace dctnet
