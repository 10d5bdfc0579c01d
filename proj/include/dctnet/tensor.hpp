#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dctnet {

/// Raised when operand shapes are incompatible. The message names both shapes.
class shape_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// (batch, channels, height, width). Matrices and vectors use size-1 axes.
struct Shape {
    std::size_t n = 1;
    std::size_t c = 1;
    std::size_t h = 1;
    std::size_t w = 1;

    constexpr std::size_t numel() const noexcept { return n * c * h * w; }
    constexpr std::size_t plane() const noexcept { return h * w; }
    friend constexpr bool operator==(const Shape&, const Shape&) = default;

    std::string str() const {
        std::ostringstream os;
        os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
        return os.str();
    }
};

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    bool leaf = true;
    const Tape<T>* tape = nullptr;  // producing tape, null for leaves and untracked results

    std::span<T> ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

}  // namespace detail

/// Dense rank-4 tensor with shared value semantics: copies alias the same
/// storage, use clone() for a deep copy.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() : node_(std::make_shared<detail::Node<T>>()) {}

    explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<detail::Node<T>>()) {
        node_->shape = shape;
        node_->data.assign(shape.numel(), fill);
    }

    Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<detail::Node<T>>()) {
        if (values.size() != shape.numel()) {
            throw shape_error("tensor data length " + std::to_string(values.size()) +
                              " does not match shape " + shape.str());
        }
        node_->shape = shape;
        node_->data = std::move(values);
    }

    static Tensor zeros(Shape s) { return Tensor(s, T(0)); }
    static Tensor ones(Shape s) { return Tensor(s, T(1)); }
    static Tensor full(Shape s, T v) { return Tensor(s, v); }
    static Tensor scalar(T v) { return Tensor(Shape{}, v); }

    const Shape& shape() const noexcept { return node_->shape; }
    std::size_t numel() const noexcept { return node_->data.size(); }

    std::span<T> data() noexcept { return node_->data; }
    std::span<const T> data() const noexcept { return node_->data; }
    T* raw() noexcept { return node_->data.data(); }
    const T* raw() const noexcept { return node_->data.data(); }

    T& operator()(std::size_t b, std::size_t c, std::size_t i, std::size_t j) {
        return node_->data[index(b, c, i, j)];
    }
    T operator()(std::size_t b, std::size_t c, std::size_t i, std::size_t j) const {
        return node_->data[index(b, c, i, j)];
    }
    T& operator[](std::size_t k) { return node_->data[k]; }
    T operator[](std::size_t k) const { return node_->data[k]; }

    /// Value of a single-element tensor.
    T item() const {
        if (numel() != 1) throw shape_error("item() on tensor of shape " + shape().str());
        return node_->data[0];
    }

    bool requires_grad() const noexcept { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on = true) {
        node_->requires_grad = on;
        return *this;
    }
    bool is_leaf() const noexcept { return node_->leaf; }

    bool has_grad() const noexcept { return !node_->grad.empty(); }
    std::span<const T> grad() const noexcept { return node_->grad; }
    /// Handle-level const: the gradient buffer belongs to the shared node.
    std::span<T> grad_mut() const { return node_->ensure_grad(); }
    void zero_grad() { node_->grad.clear(); }

    Tensor clone() const {
        Tensor t(shape(), std::vector<T>(node_->data));
        return t;
    }

    /// Copy of the values with no tape history.
    Tensor detach() const { return clone(); }

    bool same_storage(const Tensor& other) const noexcept { return node_ == other.node_; }

    std::size_t index(std::size_t b, std::size_t c, std::size_t i, std::size_t j) const noexcept {
        const Shape& s = node_->shape;
        return ((b * s.c + c) * s.h + i) * s.w + j;
    }

private:
    friend class Tape<T>;
    template <typename U, typename F>
    friend void record(const char* name, Tensor<U>& out, std::initializer_list<Tensor<U>> inputs, F&& backward);

    std::shared_ptr<detail::Node<T>> node_;
};

/// Ordered record of differentiable ops executed while the tape is active.
/// backward() replays the adjoints once each, newest first.
template <typename T>
class Tape {
public:
    struct Entry {
        std::string op;
        std::shared_ptr<detail::Node<T>> output;
        std::function<void()> adjoint;
    };

    /// RAII activation on the current thread. Scopes nest.
    class Scope {
    public:
        explicit Scope(Tape& tape) : previous_(current()) { current() = &tape; }
        ~Scope() { current() = previous_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* previous_;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape*& current() {
        thread_local Tape* active = nullptr;
        return active;
    }

    std::size_t size() const noexcept { return entries_.size(); }
    const std::vector<Entry>& entries() const noexcept { return entries_; }

    /// Op names in the order their adjoints ran during the last backward().
    const std::vector<std::string>& last_replay() const noexcept { return replay_; }

    void clear() {
        entries_.clear();
        replay_.clear();
    }

    void push(std::string op, std::shared_ptr<detail::Node<T>> out, std::function<void()> adjoint) {
        entries_.push_back({std::move(op), std::move(out), std::move(adjoint)});
    }

    /// Seeds d(loss)/d(loss) = 1 and propagates to every requires_grad leaf.
    /// Leaf gradients accumulate across calls; intermediate ones are reset.
    void backward(const Tensor<T>& loss) {
        if (loss.numel() != 1) {
            throw shape_error("backward() needs a scalar loss, got shape " + loss.shape().str());
        }
        if (loss.node_->tape != this) {
            throw std::logic_error("backward(): loss was not produced on this tape");
        }
        for (auto& e : entries_) e.output->grad.clear();
        loss.node_->ensure_grad()[0] = T(1);
        replay_.clear();
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
            if (!it->output->grad.empty()) it->adjoint();
            replay_.push_back(it->op);
        }
    }

private:
    std::vector<Entry> entries_;
    std::vector<std::string> replay_;
};

/// Registers `out` as produced by an op over `inputs` on the active tape.
/// No-op when no tape is active or no input requires a gradient.
template <typename T, typename F>
void record(const char* name, Tensor<T>& out, std::initializer_list<Tensor<T>> inputs, F&& backward) {
    Tape<T>* tape = Tape<T>::current();
    if (tape == nullptr) return;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return;
    out.node_->requires_grad = true;
    out.node_->leaf = false;
    out.node_->tape = tape;
    tape->push(name, out.node_, std::function<void()>(std::forward<F>(backward)));
}

/// Convenience: backward through the tape that produced `loss`'s active scope.
template <typename T>
void backward(Tape<T>& tape, const Tensor<T>& loss) {
    tape.backward(loss);
}

template <typename T>
bool all_finite(std::span<const T> v) {
    return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

}  // namespace dctnet
