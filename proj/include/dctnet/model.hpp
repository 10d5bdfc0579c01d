#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dctnet/model_spec.hpp"
#include "dctnet/ops.hpp"
#include "dctnet/perceptron.hpp"
#include "dctnet/tensor.hpp"

namespace dctnet {

enum class Constraint { none, non_negative };

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> tensor;
    Constraint constraint = Constraint::none;
};

/// Named trainable tensors plus non-trainable state (BN running statistics).
/// Tensors alias the model's storage.
template <typename T>
class ParameterRegistry {
public:
    void add(std::string name, Tensor<T> t, Constraint c = Constraint::none) {
        params_.push_back({std::move(name), std::move(t), c});
    }
    void add_buffer(std::string name, Tensor<T> t) { buffers_.push_back({std::move(name), std::move(t), Constraint::none}); }

    std::vector<Parameter<T>>& parameters() noexcept { return params_; }
    const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }
    std::vector<Parameter<T>>& buffers() noexcept { return buffers_; }
    const std::vector<Parameter<T>>& buffers() const noexcept { return buffers_; }

    std::size_t trainable_count() const noexcept {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.tensor.numel();
        return n;
    }

    const Parameter<T>* find(const std::string& name) const {
        for (const auto& p : params_)
            if (p.name == name) return &p;
        return nullptr;
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    /// Clamps non-negative parameters at zero.
    void project() {
        for (auto& p : params_)
            if (p.constraint == Constraint::non_negative)
                for (T& v : p.tensor.data()) v = v < T(0) ? T(0) : v;
    }

private:
    std::vector<Parameter<T>> params_;
    std::vector<Parameter<T>> buffers_;
};

// ---------------------------------------------------------------------------
// Units: one planned layer each

template <typename T>
class Unit {
public:
    explicit Unit(LayerDesc desc) : desc_(std::move(desc)) {}
    virtual ~Unit() = default;
    virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
    virtual void collect(ParameterRegistry<T>&) {}
    const LayerDesc& desc() const noexcept { return desc_; }

protected:
    LayerDesc desc_;
};

template <typename T>
class ConvUnit final : public Unit<T> {
public:
    template <typename Rng>
    ConvUnit(LayerDesc d, Rng& rng) : Unit<T>(std::move(d)) {
        const auto& L = this->desc_;
        weight_ = Tensor<T>(Shape{L.c_out, L.c_in, L.kernel, L.kernel});
        // He-normal over fan-in.
        std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / static_cast<double>(L.c_in * L.kernel * L.kernel)));
        for (T& v : weight_.data()) v = static_cast<T>(nd(rng));
        weight_.set_requires_grad(true);
    }
    Tensor<T> forward(const Tensor<T>& x, Mode) override { return conv2d(x, weight_, this->desc_.stride); }
    void collect(ParameterRegistry<T>& r) override { r.add(this->desc_.name + ".weight", weight_); }
    Tensor<T>& weight() noexcept { return weight_; }

private:
    Tensor<T> weight_;
};

template <typename T>
class BatchNormUnit final : public Unit<T> {
public:
    explicit BatchNormUnit(LayerDesc d)
        : Unit<T>(std::move(d)),
          gamma_(Tensor<T>::ones(Shape{1, this->desc_.c_out, 1, 1})),
          beta_(Tensor<T>::zeros(Shape{1, this->desc_.c_out, 1, 1})),
          state_(this->desc_.c_out) {
        gamma_.set_requires_grad(true);
        beta_.set_requires_grad(true);
    }
    Tensor<T> forward(const Tensor<T>& x, Mode mode) override { return batch_norm(x, gamma_, beta_, state_, mode); }
    void collect(ParameterRegistry<T>& r) override {
        r.add(this->desc_.name + ".gamma", gamma_);
        r.add(this->desc_.name + ".beta", beta_);
        r.add_buffer(this->desc_.name + ".running_mean", state_.running_mean);
        r.add_buffer(this->desc_.name + ".running_var", state_.running_var);
    }

private:
    Tensor<T> gamma_, beta_;
    BatchNormState<T> state_;
};

template <typename T>
class DctPerceptronUnit final : public Unit<T> {
public:
    template <typename Rng>
    DctPerceptronUnit(LayerDesc d, Rng& rng) : Unit<T>(std::move(d)), layer_(this->desc_.dctp, rng) {}
    Tensor<T> forward(const Tensor<T>& x, Mode) override { return layer_.forward(x); }
    void collect(ParameterRegistry<T>& r) override {
        for (std::size_t p = 0; p < layer_.pods().size(); ++p) {
            auto& pod = layer_.pods()[p];
            const std::string base = this->desc_.name + ".pod" + std::to_string(p);
            r.add(base + ".scaling", pod.scaling);
            r.add(base + ".mixing", pod.mixing);
            if (pod.bias) r.add(base + ".bias", *pod.bias);
            if (pod.threshold) r.add(base + ".threshold", *pod.threshold, Constraint::non_negative);
        }
    }
    DctPerceptron<T>& layer() noexcept { return layer_; }

private:
    DctPerceptron<T> layer_;
};

template <typename T>
class MaxPoolUnit final : public Unit<T> {
public:
    using Unit<T>::Unit;
    Tensor<T> forward(const Tensor<T>& x, Mode) override { return max_pool2x2(x); }
};

template <typename T>
class GapUnit final : public Unit<T> {
public:
    using Unit<T>::Unit;
    Tensor<T> forward(const Tensor<T>& x, Mode) override { return global_avg_pool(x); }
};

template <typename T>
class LinearUnit final : public Unit<T> {
public:
    template <typename Rng>
    LinearUnit(LayerDesc d, Rng& rng) : Unit<T>(std::move(d)) {
        const auto& L = this->desc_;
        weight_ = Tensor<T>(Shape{L.c_out, L.c_in, 1, 1});
        bias_ = Tensor<T>(Shape{1, L.c_out, 1, 1});
        const double bound = 1.0 / std::sqrt(static_cast<double>(L.c_in));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (T& v : weight_.data()) v = static_cast<T>(u(rng));
        for (T& v : bias_.data()) v = static_cast<T>(u(rng));
        weight_.set_requires_grad(true);
        bias_.set_requires_grad(true);
    }
    Tensor<T> forward(const Tensor<T>& x, Mode) override { return linear(x, weight_, bias_); }
    void collect(ParameterRegistry<T>& r) override {
        r.add(this->desc_.name + ".weight", weight_);
        r.add(this->desc_.name + ".bias", bias_);
    }

private:
    Tensor<T> weight_, bias_;
};

template <typename T, typename Rng>
std::unique_ptr<Unit<T>> make_unit(const LayerDesc& d, Rng& rng) {
    switch (d.kind) {
        case LayerKind::conv: return std::make_unique<ConvUnit<T>>(d, rng);
        case LayerKind::batch_norm: return std::make_unique<BatchNormUnit<T>>(d);
        case LayerKind::dct_perceptron: return std::make_unique<DctPerceptronUnit<T>>(d, rng);
        case LayerKind::max_pool: return std::make_unique<MaxPoolUnit<T>>(d);
        case LayerKind::global_avg_pool: return std::make_unique<GapUnit<T>>(d);
        case LayerKind::linear: return std::make_unique<LinearUnit<T>>(d, rng);
    }
    throw std::invalid_argument("make_unit: unknown layer kind");
}

/// Residual block: main path of (unit, BN) pairs with ReLU after every BN but
/// the last, shortcut (identity or 1x1 projection + BN), add, ReLU.
template <typename T>
class Block {
public:
    template <typename Rng>
    Block(BlockPlan plan, Rng& rng) : plan_(std::move(plan)) {
        for (const auto& d : plan_.main) main_.push_back(make_unit<T>(d, rng));
        for (const auto& d : plan_.projection) projection_.push_back(make_unit<T>(d, rng));
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode) {
        Tensor<T> y = x;
        for (std::size_t i = 0; i < main_.size(); ++i) {
            y = main_[i]->forward(y, mode);
            if (main_[i]->desc().kind == LayerKind::batch_norm && i + 1 < main_.size()) y = relu(y);
        }
        Tensor<T> sc = x;
        for (auto& u : projection_) sc = u->forward(sc, mode);
        return relu(add(y, sc));
    }

    void collect(ParameterRegistry<T>& r) {
        for (auto& u : main_) u->collect(r);
        for (auto& u : projection_) u->collect(r);
    }

    const BlockPlan& plan() const noexcept { return plan_; }
    std::vector<std::unique_ptr<Unit<T>>>& main_units() noexcept { return main_; }
    std::vector<std::unique_ptr<Unit<T>>>& projection_units() noexcept { return projection_; }

private:
    BlockPlan plan_;
    std::vector<std::unique_ptr<Unit<T>>> main_;
    std::vector<std::unique_ptr<Unit<T>>> projection_;
};

/// Standalone block construction; `n` is the input spatial size.
template <typename T, typename Rng>
Block<T> build_block(BlockKind kind, std::size_t c_in, std::size_t c_out, std::size_t n, std::size_t stride,
                     std::size_t pods, Rng& rng) {
    std::size_t width = c_out;
    if (is_bottleneck(kind)) {
        if (c_out % 4) throw spec_error("build_block: bottleneck output channels must be a multiple of 4");
        width = c_out / 4;
    }
    return Block<T>(plan_block("block", kind, c_in, width, n, stride, pods), rng);
}

template <typename T>
class BuiltModel {
public:
    BuiltModel(const ModelSpec& spec, std::uint64_t seed) : spec_(spec), plan_(plan_model(spec)), rng_(seed) {
        for (const auto& d : plan_.stem) stem_.push_back(make_unit<T>(d, rng_));
        for (const auto& b : plan_.blocks) blocks_.push_back(std::make_unique<Block<T>>(b, rng_));
        for (const auto& d : plan_.extra) extra_.push_back(make_unit<T>(d, rng_));
        for (const auto& d : plan_.head) head_.push_back(make_unit<T>(d, rng_));
        rebuild_registry();
    }

    /// Logits (B, classes, 1, 1), or the final feature map without a classifier.
    Tensor<T> forward(const Tensor<T>& x, Mode mode) {
        const Shape& s = x.shape();
        if (s.c != plan_.input.c || s.h != plan_.input.h || s.w != plan_.input.w) {
            throw shape_error(spec_.name + ": input " + s.str() + " expected (*," + std::to_string(plan_.input.c) + "," +
                              std::to_string(plan_.input.h) + "," + std::to_string(plan_.input.w) + ")");
        }
        Tensor<T> y = x;
        for (auto& u : stem_) {
            y = u->forward(y, mode);
            if (u->desc().kind == LayerKind::batch_norm) y = relu(y);
        }
        for (auto& b : blocks_) y = b->forward(y, mode);
        for (auto& u : extra_) y = u->forward(y, mode);
        for (auto& u : head_) y = u->forward(y, mode);
        return y;
    }

    /// Adds a single-pod DCT-P (shortcut on) and BN right before GAP.
    void insert_extra_dctp(std::size_t n, std::size_t c) {
        if (head_.empty() || head_.front()->desc().kind != LayerKind::global_avg_pool) {
            throw spec_error(spec_.name + ": insert_extra_dctp needs a model ending in GAP + linear");
        }
        if (n != plan_.out_spatial || c != plan_.out_channels) {
            throw spec_error(spec_.name + ": extra DCT-P of size " + std::to_string(n) + "x" + std::to_string(n) + "x" +
                             std::to_string(c) + " does not match final feature map " + std::to_string(plan_.out_spatial) +
                             "x" + std::to_string(plan_.out_spatial) + "x" + std::to_string(plan_.out_channels));
        }
        if (!extra_.empty()) throw spec_error(spec_.name + ": model already has an extra DCT-P");
        plan_.extra = plan_extra_dctp(n, c, spec_.backend);
        for (const auto& d : plan_.extra) extra_.push_back(make_unit<T>(d, rng_));
        spec_.extra_dctp = true;
        rebuild_registry();
    }

    const ModelSpec& spec() const noexcept { return spec_; }
    const ModelPlan& plan() const noexcept { return plan_; }
    ParameterRegistry<T>& registry() noexcept { return registry_; }
    const ParameterRegistry<T>& registry() const noexcept { return registry_; }
    std::vector<std::unique_ptr<Block<T>>>& blocks() noexcept { return blocks_; }

private:
    void rebuild_registry() {
        registry_ = {};
        for (auto& u : stem_) u->collect(registry_);
        for (auto& b : blocks_) b->collect(registry_);
        for (auto& u : extra_) u->collect(registry_);
        for (auto& u : head_) u->collect(registry_);
    }

    ModelSpec spec_;
    ModelPlan plan_;
    std::mt19937_64 rng_;
    std::vector<std::unique_ptr<Unit<T>>> stem_;
    std::vector<std::unique_ptr<Block<T>>> blocks_;
    std::vector<std::unique_ptr<Unit<T>>> extra_;
    std::vector<std::unique_ptr<Unit<T>>> head_;
    ParameterRegistry<T> registry_;
};

template <typename T>
std::unique_ptr<BuiltModel<T>> build_model(const ModelSpec& spec, std::uint64_t seed = 0) {
    return std::make_unique<BuiltModel<T>>(spec, seed);
}

/// Free-function form; the model is modified in place and returned.
template <typename T>
BuiltModel<T>& insert_extra_dctp(BuiltModel<T>& model, std::size_t n, std::size_t c) {
    model.insert_extra_dctp(n, c);
    return model;
}

}  // namespace dctnet
