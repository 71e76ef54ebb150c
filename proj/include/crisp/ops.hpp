#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "crisp/tensor.hpp"

namespace crisp {

// Matrix product over the last two axes. `b` is either 2-D (shared across the
// batch) or carries exactly the same leading batch axes as `a`.
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise arithmetic with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, double c);
Tensor mul(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.2);

/// softmax(x / temperature) along `axis`, max-subtracted.
Tensor softmax(const Tensor& x, int axis = -1, double temperature = 1.0);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
/// Swap the last two axes.
Tensor transpose(const Tensor& x);

/// Flat gather: out[k] = x.flat[indices[k]].
Tensor index_select(const Tensor& x, const std::vector<std::size_t>& indices);

/// Inverted dropout. Identity when `training` is false or p == 0.
Tensor dropout(const Tensor& x, double p, bool training, std::mt19937_64& rng);

/// Clamp to [lo, hi]; gradient 1 on the closed interval, 0 outside.
Tensor clip(const Tensor& x, double lo, double hi);

}  // namespace crisp
