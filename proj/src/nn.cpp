#include "crisp/nn.hpp"

#include <vector>

#include "crisp/ops.hpp"

namespace crisp {

Tensor Linear::forward(const Tensor& x) const {
    Tensor y = matmul(x, weight);
    return has_bias ? add(y, bias) : y;
}

Linear make_linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                   std::mt19937_64& rng, bool bias) {
    Linear l;
    l.weight = params.add(name + ".weight", glorot(in, out, rng));
    l.has_bias = bias;
    if (bias) l.bias = params.add(name + ".bias", Tensor::zeros({out}));
    return l;
}

LstmOutput Lstm::run(const Tensor& x, bool reverse) const {
    if (x.dim() != 3) throw DimensionError("lstm expects R x T x In, got " + shape_str(x.shape()));
    const std::size_t rows = x.shape()[0];
    const std::size_t steps = x.shape()[1];
    const std::size_t h = hidden;
    // Input contributions for every step in one product.
    Tensor xw = add(matmul(x, w_ih), bias);
    Tensor state = Tensor::zeros({rows, h});
    Tensor cell = Tensor::zeros({rows, h});
    std::vector<Tensor> outputs(steps);
    for (std::size_t k = 0; k < steps; ++k) {
        const std::size_t t = reverse ? steps - 1 - k : k;
        Tensor gates = add(reshape(slice(xw, 1, t, 1), {rows, 4 * h}), matmul(state, w_hh));
        Tensor i = sigmoid(slice(gates, 1, 0, h));
        Tensor f = sigmoid(slice(gates, 1, h, h));
        Tensor g = tanh(slice(gates, 1, 2 * h, h));
        Tensor o = sigmoid(slice(gates, 1, 3 * h, h));
        cell = add(mul(f, cell), mul(i, g));
        state = mul(o, tanh(cell));
        outputs[t] = reshape(state, {rows, 1, h});
    }
    return {concat(outputs, 1), state};
}

Lstm make_lstm(ParameterSet& params, const std::string& name, std::size_t in, std::size_t hidden,
               std::mt19937_64& rng) {
    Lstm l;
    l.hidden = hidden;
    l.w_ih = params.add(name + ".w_ih", glorot(in, 4 * hidden, rng));
    l.w_hh = params.add(name + ".w_hh", glorot(hidden, 4 * hidden, rng));
    std::vector<double> b(4 * hidden, 0.0);
    // Forget-gate bias of one keeps early gradients flowing through the cell.
    for (std::size_t k = hidden; k < 2 * hidden; ++k) b[k] = 1.0;
    l.bias = params.add(name + ".bias", Tensor({4 * hidden}, std::move(b)));
    return l;
}

}  // namespace crisp
