#include "crisp/temporal.hpp"

#include <cmath>

#include "crisp/ops.hpp"

namespace crisp {

Tensor TemporalEncoder::bilstm(const Tensor& x) const {
    if (x.dim() != 3 || x.shape()[2] != config.input) {
        throw DimensionError("bilstm expects R x T x " + std::to_string(config.input) + ", got " +
                             shape_str(x.shape()));
    }
    Tensor fwd = forward_lstm.run(x, false).sequence;
    Tensor bwd = backward_lstm.run(x, true).sequence;
    return concat({fwd, bwd}, 2);
}

TemporalAttention TemporalEncoder::self_attention(const Tensor& h) const {
    const std::size_t dk = config.head_dim;
    Tensor q = query.forward(h);
    Tensor k = key.forward(h);
    Tensor v = value.forward(h);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    TemporalAttention out;
    std::vector<Tensor> heads;
    for (std::size_t m = 0; m < config.heads; ++m) {
        Tensor qm = slice(q, 2, m * dk, dk);
        Tensor km = slice(k, 2, m * dk, dk);
        Tensor vm = slice(v, 2, m * dk, dk);
        Tensor alpha = softmax(mul(matmul(qm, transpose(km)), scale), -1);
        out.weights.push_back(alpha);
        heads.push_back(matmul(alpha, vm));
    }
    out.output = output.forward(heads.size() == 1 ? heads.front() : concat(heads, 2));
    return out;
}

Tensor TemporalEncoder::pool(const Tensor& h) const {
    const std::size_t steps = h.shape()[1];
    Tensor avg = mean(h, 1);
    Tensor last = reshape(slice(h, 1, steps - 1, 1), {h.shape()[0], h.shape()[2]});
    return pooling.forward(concat({avg, last}, 1));
}

Tensor TemporalEncoder::step_embeddings(const Tensor& h) const {
    const std::size_t width = h.shape()[2];
    // Split W_P into the rows acting on the mean and on the step vector so
    // the mean term broadcasts over time instead of being tiled.
    Tensor w_mean = slice(pooling.weight, 0, 0, width);
    Tensor w_step = slice(pooling.weight, 0, width, width);
    Tensor avg = mean(h, 1, true);
    Tensor y = add(matmul(avg, w_mean), matmul(h, w_step));
    return pooling.has_bias ? add(y, pooling.bias) : y;
}

TemporalEncoder make_temporal_encoder(ParameterSet& params, const TemporalConfig& config,
                                      std::mt19937_64& rng, const std::string& prefix) {
    if (config.heads == 0 || config.head_dim == 0 || config.lstm_hidden == 0 || config.embed == 0) {
        throw ContractError("temporal encoder widths must be positive");
    }
    TemporalEncoder enc;
    enc.config = config;
    const std::size_t h2 = 2 * config.lstm_hidden;
    const std::size_t att = config.heads * config.head_dim;
    enc.forward_lstm = make_lstm(params, prefix + ".lstm_fwd", config.input, config.lstm_hidden, rng);
    enc.backward_lstm = make_lstm(params, prefix + ".lstm_bwd", config.input, config.lstm_hidden, rng);
    enc.query = make_linear(params, prefix + ".w_q", h2, att, rng, false);
    enc.key = make_linear(params, prefix + ".w_k", h2, att, rng, false);
    enc.value = make_linear(params, prefix + ".w_v", h2, att, rng, false);
    enc.output = make_linear(params, prefix + ".w_o", att, h2, rng);
    enc.pooling = make_linear(params, prefix + ".w_pool", 2 * h2, config.embed, rng);
    return enc;
}

}  // namespace crisp
