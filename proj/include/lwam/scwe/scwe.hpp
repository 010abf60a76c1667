#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lwam/numcore/nn.hpp"

namespace lwam::scwe {

using nc::Tensor;

struct EncoderConfig {
  std::size_t queries = 16;  // N
  std::size_t d_e = 64;
  std::size_t d_l = 32;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn = 256;
  std::size_t patches = 98;  // S
  std::size_t c_in = 5;
  std::size_t d_g = 64;

  // Throws ConfigError.
  void validate() const;
};

struct EncodeOutput {
  Tensor scene;  // [N, D_l] per view, [T, M, N, D_l] batched
  Tensor image;  // [S, D_l] per view, [T, M, S, D_l] batched
};

// Query-compression encoder. Binds its parameters under `prefix` in the store.
class Encoder {
 public:
  Encoder(nc::ParamStore& store, const EncoderConfig& cfg, const std::string& prefix = "scwe");

  // patches [S, C_in]. `attention` receives the last layer's [h, N+S, N+S] weights.
  EncodeOutput encode_view(const Tensor& patches, std::vector<double>* attention = nullptr) const;
  // inputs [T, M, S, C_in]; each (frame, view) pair is encoded independently.
  EncodeOutput encode(const Tensor& inputs) const;

  const EncoderConfig& config() const { return cfg_; }
  const Tensor& positions() const { return pos_; }

 private:
  EncoderConfig cfg_;
  nc::Linear embed_;
  Tensor pos_;      // [S, D_e]
  Tensor queries_;  // [N, D_e]
  std::vector<nc::EncoderLayer> layers_;
  nc::LayerNorm ln_out_;
  nc::Linear out_;
};

// phi: D_l -> D_g
nc::Linear make_projector(nc::ParamStore& store, const EncoderConfig& cfg, const std::string& name = "align.proj");

// 1 - mean cosine similarity between LN(phi(image_tokens)) and LN(teacher), both without affine.
// image_tokens [..., D_l]; teacher [..., D_g] with matching leading dims, never differentiable.
Tensor align_loss(const Tensor& image_tokens, const Tensor& teacher, const nc::Linear& phi);

// Frozen random D_g -> D_l map, scaled by 1/sqrt(D_g).
Tensor concat_map(std::size_t d_g, std::size_t d_l, std::uint64_t seed = 0x6e0c0a7);
// Appends teacher [L, D_g] mapped through `map` to context [C, D_l] along the token axis.
Tensor concat_geometry(const Tensor& context, const Tensor& teacher, const Tensor& map);

}  // namespace lwam::scwe
