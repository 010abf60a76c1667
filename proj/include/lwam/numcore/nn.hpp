#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "lwam/numcore/ops.hpp"
#include "lwam/numcore/tensor.hpp"

namespace lwam::nc {

enum class Init { kZeros, kOnes, kNormal, kFanIn };

// Named, ordered collection of trainable tensors. Parameters are created on
// first request (initialised from the store's own generator, in call order)
// and looked up on later requests, so the same builder code binds a model to
// a fresh store, a loaded checkpoint, or an EMA shadow copy.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  // kNormal uses `stddev`; kFanIn uses 1/sqrt(shape[0]).
  Tensor param(const std::string& name, Shape shape, Init init, double stddev = 0.0, bool decay = true);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  bool decays(const std::string& name) const;
  std::size_t scalar_count() const;

  ParamStore clone(bool requires_grad) const;
  // Shares tensors whose names start with `prefix`.
  ParamStore select(std::string_view prefix) const;
  ParamStore select(const std::vector<std::string_view>& prefixes) const;
  void zero_grad();

  // One named tensor file per parameter plus an index.
  void save(const std::filesystem::path& dir) const;
  static ParamStore load(const std::filesystem::path& dir, bool requires_grad);

 private:
  struct Entry {
    Tensor tensor;
    bool decay = true;
  };
  std::map<std::string, Entry> entries_;
  std::vector<std::string> order_;
  Rng rng_;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out] or undefined

  static Linear make(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, bool with_bias = true);
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

struct LayerNorm {
  Tensor gamma, beta;
  static LayerNorm make(ParamStore& store, const std::string& name, std::size_t dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta, 1e-5); }
};

struct Mlp {
  Linear fc1, fc2;
  static Mlp make(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out);
  Tensor operator()(const Tensor& x) const { return mlp_forward(x, fc1.weight, fc1.bias, fc2.weight, fc2.bias); }
};

// Applied to per-head queries or keys, [h, L, dh] -> [h, L, dh].
using PositionFn = std::function<Tensor(const Tensor&)>;

struct AttentionOptions {
  const BoolMatrix* mask = nullptr;
  PositionFn q_pos;
  PositionFn k_pos;
  std::vector<double>* probs = nullptr;  // receives [h, Lq, Lk] weights
};

struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  std::size_t heads = 1;

  static MultiHeadAttention make(ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads);
  // xq [Lq, D], xkv [Lk, D] -> [Lq, D]
  Tensor operator()(const Tensor& xq, const Tensor& xkv, const AttentionOptions& opt = {}) const;
};

// Pre-norm bidirectional block.
struct EncoderLayer {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  Mlp ffn;

  static EncoderLayer make(ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads, std::size_t ffn_dim);
  Tensor operator()(const Tensor& x, const AttentionOptions& opt = {}) const;
};

// Pre-norm decoder block: self-attention, cross-attention to memory, FFN.
struct DecoderLayer {
  LayerNorm ln_self, ln_cross, ln_mem, ln_ffn;
  MultiHeadAttention self_attn, cross_attn;
  Mlp ffn;

  static DecoderLayer make(ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads, std::size_t ffn_dim);
  Tensor operator()(const Tensor& x, const Tensor& memory, const AttentionOptions& self_opt,
                    const AttentionOptions& cross_opt) const;
};

}  // namespace lwam::nc
