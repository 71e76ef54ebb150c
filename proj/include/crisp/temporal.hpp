#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "crisp/nn.hpp"
#include "crisp/tensor.hpp"

namespace crisp {

struct TemporalConfig {
    std::size_t input = 31;
    std::size_t lstm_hidden = 128;  // per direction
    std::size_t heads = 4;
    std::size_t head_dim = 64;
    std::size_t embed = 128;
};

struct TemporalAttention {
    Tensor output;                // R x T x 2H
    std::vector<Tensor> weights;  // per head, R x T x T (rows sum to one)
};

/// BiLSTM, multi-head self-attention over time and mean/last pooling. Rows
/// of the input are independent sequences (one per asset, or per asset and
/// window when batched).
struct TemporalEncoder {
    TemporalConfig config;
    Lstm forward_lstm;
    Lstm backward_lstm;
    Linear query, key, value;  // 2H -> heads * head_dim, no bias
    Linear output;             // heads * head_dim -> 2H
    Linear pooling;            // 4H -> embed, applied to [mean ; step]

    /// x: R x T x F -> R x T x 2H, forward then backward states per step.
    Tensor bilstm(const Tensor& x) const;
    TemporalAttention self_attention(const Tensor& h) const;
    /// [time-mean ; last step] -> embed, R x embed.
    Tensor pool(const Tensor& h) const;
    /// The pooling projection applied to [time-mean ; h(t)] for every t,
    /// R x T x embed. Its last step matches pool(h) up to rounding.
    Tensor step_embeddings(const Tensor& h) const;
};

TemporalEncoder make_temporal_encoder(ParameterSet& params, const TemporalConfig& config,
                                      std::mt19937_64& rng, const std::string& prefix = "temporal");

}  // namespace crisp
