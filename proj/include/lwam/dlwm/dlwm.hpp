#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "lwam/numcore/nn.hpp"

namespace lwam::dlwm {

using nc::Tensor;

inline constexpr std::size_t kEgoInputDim = 8;
inline constexpr std::size_t kCommands = 4;
inline constexpr double kVelocityScale = 10.0;
inline constexpr double kAccelScale = 5.0;

// [onehot(command), v / 10, a / 5]
std::array<double, kEgoInputDim> ego_vector(int command, std::array<double, 2> v, std::array<double, 2> a);

struct EgoEncoder {
  nc::Linear lin;  // 8 -> D_l
  static EgoEncoder make(nc::ParamStore& store, std::size_t d_l, const std::string& name = "ego.enc");
  // ego [n, 8] -> [n, D_l]
  Tensor operator()(const Tensor& ego) const { return lin(ego); }
};

// scene [T, M, N, D_l], ego [T, 8] -> [T, M*N + 1, D_l]; each frame block is
// [view 0 tokens | view 1 | ... | ego].
Tensor aggregate(const Tensor& scene, const Tensor& ego, const EgoEncoder& enc);

// Entry (i, j) is true iff frame(j) <= frame(i), with frame(k) = k / B.
nc::BoolMatrix build_tf_mask(std::size_t frames, std::size_t block);
// General form over explicit per-token frame ids.
nc::BoolMatrix frame_causal_mask(const std::vector<int>& query_frames, const std::vector<int>& key_frames);

struct Coord {
  int t = 0, m = 0, n = 0;
};

struct RopeConfig {
  std::size_t d_t = 2, d_m = 2, d_n = 4;
  double base_t = 50, base_m = 10, base_n = 100;

  // Split 3:1:4, each part rounded down to an even size of at least 2, remainder to d_n.
  static RopeConfig for_head_dim(std::size_t head_dim);
  std::size_t head_dim() const { return d_t + d_m + d_n; }
  // Throws ConfigError on odd or empty sub-blocks or non-positive bases.
  void validate() const;
};

// x [h, L, D_h]; rotates each sub-block's coordinate pairs (2i, 2i+1) by pos * base^(-2i/d_sub).
Tensor apply_rope(const Tensor& x, const std::vector<Coord>& coords, const RopeConfig& cfg);

// Coordinates of one frame block: scene tokens (t, m, n), ego (t, M, 0).
std::vector<Coord> block_coords(int t, std::size_t views, std::size_t queries);

struct WorldModelConfig {
  std::size_t d_l = 32;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn = 128;
  std::size_t views = 3;
  std::size_t queries = 16;
  std::vector<int> offsets{0, 4, 8};  // relative frames that own a learnable query block

  std::size_t block() const { return views * queries + 1; }
  void validate() const;
};

// Key-value context of the world model: tokens with their RoPE coordinates and frame ids.
struct Context {
  Tensor tokens;  // [L, D_l]
  std::vector<Coord> coords;
  std::vector<int> frame;
};

// Context from world-status frames [F, B, D_l]; frame f gets t = f.
Context make_context(const Tensor& world, const WorldModelConfig& cfg);
// Appends extra tokens belonging to frame `f` (the concatenation ablation).
void append_context(Context& ctx, const Tensor& tokens, int f, const std::vector<Coord>& coords);

class WorldModel {
 public:
  WorldModel(nc::ParamStore& store, const WorldModelConfig& cfg, const std::string& prefix = "dlwm");

  // One learnable query block per predicted relative frame offset; target q predicts
  // frame q + 1 from context frames 0..q. Returns [F, B, D_l].
  Tensor predict_future(const Context& ctx, const std::vector<int>& target_offsets) const;

  const WorldModelConfig& config() const { return cfg_; }
  const RopeConfig& rope() const { return rope_; }

 private:
  WorldModelConfig cfg_;
  std::map<int, Tensor> queries_;
  RopeConfig rope_;
  std::vector<nc::DecoderLayer> layers_;
  nc::LayerNorm ln_out_;
  nc::Linear out_;
};

std::string future_query_name(const std::string& prefix, int offset);

// Mean squared error; the target carries no gradient.
Tensor wm_loss(const Tensor& predicted, const Tensor& target);

struct EgoPrediction {
  Tensor cmd_logits;  // [F, 4]
  Tensor cmd_probs;   // [F, 4]
  Tensor velocity;    // [F, 2], scaled
  Tensor accel;       // [F, 2], scaled
};

struct EgoHeads {
  nc::Mlp cmd, vel, acc;
  static EgoHeads make(nc::ParamStore& store, std::size_t d_l, const std::string& prefix = "ego");
  // future [F, B, D_l]; reads the ego slot (last token) of each block.
  EgoPrediction operator()(const Tensor& future) const;
};

struct EgoTargets {
  std::vector<int> commands;
  std::vector<double> velocity;  // [F * 2], scaled
  std::vector<double> accel;     // [F * 2], scaled
};

// L_cmd + L_v + L_a: cross-entropy plus two mean squared errors.
Tensor ego_loss(const EgoPrediction& pred, const EgoTargets& target);

// shadow <- mu * shadow + (1 - mu) * online. Throws ConfigError if the name sets or shapes differ.
void ema_update(const nc::ParamStore& online, nc::ParamStore& shadow, double mu);

}  // namespace lwam::dlwm
