#pragma once

#include <cstddef>
#include <random>
#include <string>

#include "crisp/tensor.hpp"

namespace crisp {

/// y = x W (+ b) over the last axis; W is in x out.
struct Linear {
    Tensor weight;
    Tensor bias;  // empty handle when the layer has no bias
    bool has_bias = false;

    Tensor forward(const Tensor& x) const;
};

Linear make_linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                   std::mt19937_64& rng, bool bias = true);

struct LstmOutput {
    Tensor sequence;  // R x T x H, position t holds the state after reading step t
    Tensor last;      // R x H, state after the final step read
};

/// Single-layer LSTM with gate order (input, forget, cell, output).
struct Lstm {
    Tensor w_ih;  // In x 4H
    Tensor w_hh;  // H x 4H
    Tensor bias;  // 4H
    std::size_t hidden = 0;

    /// Runs over R independent sequences x: R x T x In. With `reverse` the
    /// sequence is read from the last step to the first.
    LstmOutput run(const Tensor& x, bool reverse = false) const;
};

Lstm make_lstm(ParameterSet& params, const std::string& name, std::size_t in, std::size_t hidden,
               std::mt19937_64& rng);

}  // namespace crisp
