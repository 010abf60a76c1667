#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lwam/numcore/tensor.hpp"

namespace lwam::nc {

// Row-major boolean matrix; entry (i, j) true means query i may attend to key j.
struct BoolMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bits;

  BoolMatrix() = default;
  BoolMatrix(std::size_t r, std::size_t c, bool value = false)
      : rows(r), cols(c), bits(r * c, value ? 1 : 0) {}
  bool operator()(std::size_t i, std::size_t j) const { return bits[i * cols + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v) { bits[i * cols + j] = v ? 1 : 0; }
  bool operator==(const BoolMatrix&) const = default;
};

// Additive bias used for disallowed attention entries.
inline constexpr double kMaskedLogit = -1e30;

// Elementwise arithmetic. `b` may equal `a` in shape or be a trailing suffix of
// it (bias-style broadcast); scalars broadcast everywhere.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);

// [..., i, k] x [..., k, j]; leading batch dims broadcast right-aligned.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);  // swaps the last two axes

Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end);

// [L, h*d] <-> [h, L, d]
Tensor split_heads(const Tensor& x, std::size_t heads);
Tensor merge_heads(const Tensor& x);

// gamma/beta may be undefined for a normalisation without affine.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
Tensor gelu(const Tensor& x);

// softmax(q k^T / sqrt(d) + mask_bias) v per head. A null mask means every key
// is visible. When `probs_out` is given it receives the [h, Lq, Lk] weights.
Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, const BoolMatrix* mask,
                        std::vector<double>* probs_out = nullptr);

Tensor sum(const Tensor& a);
Tensor mean_reduce(const Tensor& a);

Tensor mse_loss(const Tensor& pred, const Tensor& target);
Tensor l1_loss(const Tensor& pred, const Tensor& target);
// Mean negative log-likelihood of `targets` under softmax(logits); logits [n, C].
Tensor cross_entropy_loss(const Tensor& logits, std::span<const int> targets);
// Along the last axis; result drops it.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

Tensor embedding_lookup(const Tensor& table, std::span<const int> indices);
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor mlp_forward(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                   const Tensor& b2);

}  // namespace lwam::nc
