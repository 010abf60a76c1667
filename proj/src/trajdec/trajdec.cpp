#include "lwam/trajdec/trajdec.hpp"

#include "lwam/errors.hpp"

namespace lwam::trajdec {

void TrajDecConfig::validate() const {
  if (candidates != dlwm::kCommands) throw ConfigError("candidate count must equal the command count");
  if (poses < 2) throw ConfigError("trajectories need at least two poses");
  if (!(dt > 0)) throw ConfigError("trajectory dt must be positive");
  if (heads == 0 || d_l % heads != 0) throw ConfigError("decoder width must be divisible by the head count");
  if (layers == 0 || ffn == 0) throw ConfigError("decoder sizes must be positive");
}

TrajectoryDecoder::TrajectoryDecoder(nc::ParamStore& store, const TrajDecConfig& cfg, const std::string& prefix)
    : cfg_(cfg) {
  cfg_.validate();
  rope_ = dlwm::RopeConfig::for_head_dim(cfg.d_l / cfg.heads);
  queries_ = store.param(prefix + ".queries", {cfg.candidates * cfg.poses, cfg.d_l}, nc::Init::kNormal, 0.02, false);
  for (std::size_t i = 0; i < cfg.layers; ++i)
    layers_.push_back(nc::DecoderLayer::make(store, prefix + ".layer" + std::to_string(i), cfg.d_l, cfg.heads, cfg.ffn));
  ln_out_ = nc::LayerNorm::make(store, prefix + ".norm_out", cfg.d_l);
  head_ = nc::Linear::make(store, prefix + ".head", cfg.d_l, 3);
  scale_ = Tensor::from({3}, {cfg.pose_scale[0], cfg.pose_scale[1], cfg.pose_scale[2]});
}

Tensor TrajectoryDecoder::decode_candidates(const Tensor& memory, const std::vector<dlwm::Coord>& coords) const {
  if (memory.rank() != 2 || memory.dim(1) != cfg_.d_l || memory.dim(0) != coords.size())
    throw ShapeError("decoder memory must be [" + std::to_string(coords.size()) + ", " + std::to_string(cfg_.d_l) +
                     "], got " + nc::to_string(memory.shape()));
  // Queries sit at the ego slot position of the current frame.
  const int t = coords.empty() ? 0 : coords.back().t;
  const int ego_view = coords.empty() ? 0 : coords.back().m;
  const std::vector<dlwm::Coord> q_coords(cfg_.candidates * cfg_.poses, dlwm::Coord{t, ego_view, 0});
  const dlwm::RopeConfig rope = rope_;
  nc::AttentionOptions self_opt;
  nc::AttentionOptions cross_opt;
  cross_opt.q_pos = [&](const Tensor& x) { return dlwm::apply_rope(x, q_coords, rope); };
  cross_opt.k_pos = [&](const Tensor& x) { return dlwm::apply_rope(x, coords, rope); };
  Tensor x = queries_;
  for (const auto& layer : layers_) x = layer(x, memory, self_opt, cross_opt);
  const Tensor out = nc::mul(head_(ln_out_(x)), scale_);
  return nc::reshape(out, {cfg_.candidates, cfg_.poses, 3});
}

world::Trajectory select(const Tensor& candidates, int command, double dt, const world::Pose& origin) {
  if (candidates.rank() != 3 || candidates.dim(2) != 3) throw ShapeError("candidates must be [K, n_p, 3]");
  const std::size_t K = candidates.dim(0), P = candidates.dim(1);
  if (command < 0 || static_cast<std::size_t>(command) >= K) throw DomainError("command index out of range");
  world::Trajectory tr;
  tr.dt = dt;
  tr.origin = origin;
  const auto d = candidates.data();
  for (std::size_t i = 0; i < P; ++i) {
    const double* p = d.data() + (static_cast<std::size_t>(command) * P + i) * 3;
    tr.poses.push_back({p[0], p[1], p[2]});
  }
  return tr;
}

Tensor traj_loss(const Tensor& candidates, const world::Trajectory& expert, int command) {
  if (candidates.rank() != 3 || candidates.dim(2) != 3) throw ShapeError("candidates must be [K, n_p, 3]");
  const std::size_t K = candidates.dim(0), P = candidates.dim(1);
  if (expert.poses.size() != P)
    throw ShapeError("expert has " + std::to_string(expert.poses.size()) + " poses, decoder " + std::to_string(P));
  if (command < 0 || static_cast<std::size_t>(command) >= K) throw DomainError("command index out of range");
  std::vector<double> target;
  target.reserve(P * 3);
  for (const auto& p : expert.poses) target.insert(target.end(), {p.x, p.y, p.theta});
  const auto c = static_cast<std::size_t>(command);
  const Tensor chosen = nc::reshape(nc::slice(candidates, 0, c, c + 1), {P, 3});
  return nc::l1_loss(chosen, Tensor::from({P, 3}, std::move(target)));
}

}  // namespace lwam::trajdec
