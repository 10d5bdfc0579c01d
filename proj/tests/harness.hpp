#pragma once

#include <functional>
#include <vector>

#include "dctnet/ops.hpp"
#include "oracles.hpp"

namespace harness {

using dctnet::Tensor;

/// Gradient of <f(inputs), probe> by the tape versus central differences.
inline double grad_error(std::vector<Tensor<double>> inputs, const std::function<Tensor<double>()>& f, double step = 1e-6) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    dctnet::Tape<double> tape;
    {
        dctnet::Tape<double>::Scope scope(tape);
        const Tensor<double> y = f();
        tape.backward(dctnet::sum(dctnet::mul(y, oracle::probe(y.shape()))));
    }
    auto loss = [&] {
        const Tensor<double> y = f();
        return oracle::dot(y, oracle::probe(y.shape()));
    };
    return oracle::max_grad_error(inputs, loss, step);
}

}  // namespace harness
