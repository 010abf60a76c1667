#pragma once

#include <array>
#include <string>
#include <vector>

#include "lwam/dlwm/dlwm.hpp"
#include "lwam/numcore/nn.hpp"
#include "lwam/worldgen/world.hpp"

namespace lwam::trajdec {

using nc::Tensor;

struct TrajDecConfig {
  std::size_t candidates = 4;  // K, one per command
  std::size_t poses = 8;       // n_p
  double dt = 0.5;
  std::size_t d_l = 32;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn = 128;
  std::array<double, 3> pose_scale{10.0, 10.0, 1.0};  // head output units -> (m, m, rad)

  void validate() const;
};

class TrajectoryDecoder {
 public:
  TrajectoryDecoder(nc::ParamStore& store, const TrajDecConfig& cfg, const std::string& prefix = "trajdec");

  // memory [L, D_l] is the current frame block; coords drive the rotary keys.
  // Returns [K, n_p, 3] ego-local (x, y, theta).
  Tensor decode_candidates(const Tensor& memory, const std::vector<dlwm::Coord>& coords) const;

  const TrajDecConfig& config() const { return cfg_; }

 private:
  TrajDecConfig cfg_;
  dlwm::RopeConfig rope_;
  Tensor queries_;  // [K * n_p, D_l]
  std::vector<nc::DecoderLayer> layers_;
  nc::LayerNorm ln_out_;
  nc::Linear head_;
  Tensor scale_;
};

// Candidate `command` wrapped as a trajectory emitted at `origin`.
world::Trajectory select(const Tensor& candidates, int command, double dt, const world::Pose& origin = {});

// Mean |candidate[command] - expert| over the n_p x 3 pose entries.
Tensor traj_loss(const Tensor& candidates, const world::Trajectory& expert, int command);

}  // namespace lwam::trajdec
