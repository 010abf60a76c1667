#include "lwam/dlwm/dlwm.hpp"

#include <cmath>
#include <set>

#include "lwam/errors.hpp"

namespace lwam::dlwm {

std::array<double, kEgoInputDim> ego_vector(int command, std::array<double, 2> v, std::array<double, 2> a) {
  if (command < 0 || command >= static_cast<int>(kCommands)) throw DomainError("command index out of range");
  std::array<double, kEgoInputDim> out{};
  out[static_cast<std::size_t>(command)] = 1.0;
  out[4] = v[0] / kVelocityScale;
  out[5] = v[1] / kVelocityScale;
  out[6] = a[0] / kAccelScale;
  out[7] = a[1] / kAccelScale;
  return out;
}

EgoEncoder EgoEncoder::make(nc::ParamStore& store, std::size_t d_l, const std::string& name) {
  return {nc::Linear::make(store, name, kEgoInputDim, d_l)};
}

Tensor aggregate(const Tensor& scene, const Tensor& ego, const EgoEncoder& enc) {
  if (scene.rank() != 4) throw ShapeError("aggregate expects scene tokens [T, M, N, D_l]");
  const std::size_t T = scene.dim(0), M = scene.dim(1), N = scene.dim(2), D = scene.dim(3);
  if (ego.rank() != 2 || ego.dim(0) != T || ego.dim(1) != kEgoInputDim)
    throw ShapeError("aggregate expects ego inputs [T, 8], got " + nc::to_string(ego.shape()));
  const Tensor s = nc::reshape(scene, {T, M * N, D});
  const Tensor e = nc::reshape(enc(ego), {T, 1, D});
  return nc::concat({s, e}, 1);
}

nc::BoolMatrix frame_causal_mask(const std::vector<int>& query_frames, const std::vector<int>& key_frames) {
  nc::BoolMatrix m(query_frames.size(), key_frames.size());
  for (std::size_t i = 0; i < query_frames.size(); ++i)
    for (std::size_t j = 0; j < key_frames.size(); ++j) m.set(i, j, key_frames[j] <= query_frames[i]);
  return m;
}

nc::BoolMatrix build_tf_mask(std::size_t frames, std::size_t block) {
  std::vector<int> f(frames * block);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<int>(i / block);
  return frame_causal_mask(f, f);
}

RopeConfig RopeConfig::for_head_dim(std::size_t head_dim) {
  RopeConfig c;
  c.d_t = std::max<std::size_t>(2, 2 * (head_dim * 3 / 16));
  c.d_m = std::max<std::size_t>(2, 2 * (head_dim / 16));
  if (c.d_t + c.d_m + 2 > head_dim) throw ConfigError("head dimension too small for 3D rotary embedding");
  c.d_n = head_dim - c.d_t - c.d_m;
  c.validate();
  return c;
}

void RopeConfig::validate() const {
  for (std::size_t d : {d_t, d_m, d_n})
    if (d == 0 || d % 2 != 0) throw ConfigError("rotary sub-blocks must be even and non-empty");
  if (!(base_t > 0 && base_m > 0 && base_n > 0)) throw ConfigError("rotary bases must be positive");
}

namespace {

// Per-token cos/sin tables, [L, D_h / 2].
struct RopeTables {
  std::vector<double> c, s;
};

RopeTables rope_tables(const std::vector<Coord>& coords, const RopeConfig& cfg) {
  const std::size_t half = cfg.head_dim() / 2;
  RopeTables tab{std::vector<double>(coords.size() * half), std::vector<double>(coords.size() * half)};
  for (std::size_t l = 0; l < coords.size(); ++l) {
    std::size_t p = 0;
    const auto fill = [&](std::size_t d, double base, int pos) {
      for (std::size_t i = 0; i < d / 2; ++i, ++p) {
        const double ang = pos * std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
        tab.c[l * half + p] = std::cos(ang);
        tab.s[l * half + p] = std::sin(ang);
      }
    };
    fill(cfg.d_t, cfg.base_t, coords[l].t);
    fill(cfg.d_m, cfg.base_m, coords[l].m);
    fill(cfg.d_n, cfg.base_n, coords[l].n);
  }
  return tab;
}

}  // namespace

Tensor apply_rope(const Tensor& x, const std::vector<Coord>& coords, const RopeConfig& cfg) {
  cfg.validate();
  if (x.rank() != 3 || x.dim(2) != cfg.head_dim() || x.dim(1) != coords.size())
    throw ShapeError("apply_rope expects [h, " + std::to_string(coords.size()) + ", " +
                     std::to_string(cfg.head_dim()) + "], got " + nc::to_string(x.shape()));
  const std::size_t H = x.dim(0), L = x.dim(1), D = x.dim(2), half = D / 2;
  auto tab = std::make_shared<RopeTables>(rope_tables(coords, cfg));
  const auto xd = x.data();
  std::vector<double> y(xd.size());
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t l = 0; l < L; ++l) {
      const double* xi = xd.data() + (h * L + l) * D;
      double* yi = y.data() + (h * L + l) * D;
      for (std::size_t p = 0; p < half; ++p) {
        const double c = tab->c[l * half + p], s = tab->s[l * half + p];
        yi[2 * p] = c * xi[2 * p] - s * xi[2 * p + 1];
        yi[2 * p + 1] = s * xi[2 * p] + c * xi[2 * p + 1];
      }
    }
  return nc::make_op("apply_rope", x.shape(), std::move(y), {x}, [tab, H, L, D, half](nc::Node& out) {
    auto& in = *out.inputs[0];
    if (!in.requires_grad) return;
    auto g = in.grad_buffer();
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t l = 0; l < L; ++l) {
        const double* go = out.grad.data() + (h * L + l) * D;
        double* gi = g.data() + (h * L + l) * D;
        for (std::size_t p = 0; p < half; ++p) {
          const double c = tab->c[l * half + p], s = tab->s[l * half + p];
          gi[2 * p] += c * go[2 * p] + s * go[2 * p + 1];
          gi[2 * p + 1] += -s * go[2 * p] + c * go[2 * p + 1];
        }
      }
  });
}

std::vector<Coord> block_coords(int t, std::size_t views, std::size_t queries) {
  std::vector<Coord> c;
  c.reserve(views * queries + 1);
  for (std::size_t m = 0; m < views; ++m)
    for (std::size_t n = 0; n < queries; ++n) c.push_back({t, static_cast<int>(m), static_cast<int>(n)});
  c.push_back({t, static_cast<int>(views), 0});
  return c;
}

void WorldModelConfig::validate() const {
  if (heads == 0 || d_l % heads != 0) throw ConfigError("world model width must be divisible by the head count");
  if (layers == 0 || ffn == 0 || views == 0 || queries == 0) throw ConfigError("world model sizes must be positive");
  if (std::set<int>(offsets.begin(), offsets.end()).size() != offsets.size())
    throw ConfigError("duplicate future query offsets");
}

Context make_context(const Tensor& world, const WorldModelConfig& cfg) {
  if (world.rank() != 3 || world.dim(1) != cfg.block() || world.dim(2) != cfg.d_l)
    throw ShapeError("world status must be [F, " + std::to_string(cfg.block()) + ", " + std::to_string(cfg.d_l) +
                     "], got " + nc::to_string(world.shape()));
  const std::size_t F = world.dim(0), B = cfg.block();
  Context ctx;
  ctx.tokens = nc::reshape(world, {F * B, cfg.d_l});
  for (std::size_t f = 0; f < F; ++f) {
    const auto c = block_coords(static_cast<int>(f), cfg.views, cfg.queries);
    ctx.coords.insert(ctx.coords.end(), c.begin(), c.end());
    ctx.frame.insert(ctx.frame.end(), B, static_cast<int>(f));
  }
  return ctx;
}

void append_context(Context& ctx, const Tensor& tokens, int f, const std::vector<Coord>& coords) {
  if (tokens.rank() != 2 || tokens.dim(0) != coords.size()) throw ShapeError("appended context tokens mismatch coords");
  ctx.tokens = nc::concat({ctx.tokens, tokens}, 0);
  ctx.coords.insert(ctx.coords.end(), coords.begin(), coords.end());
  ctx.frame.insert(ctx.frame.end(), coords.size(), f);
}

std::string future_query_name(const std::string& prefix, int offset) {
  return prefix + ".future." + (offset < 0 ? "n" : "p") + std::to_string(std::abs(offset));
}

WorldModel::WorldModel(nc::ParamStore& store, const WorldModelConfig& cfg, const std::string& prefix)
    : cfg_(cfg), rope_(RopeConfig::for_head_dim(cfg.heads ? cfg.d_l / cfg.heads : 0)) {
  cfg_.validate();
  for (int off : cfg.offsets)
    queries_[off] = store.param(future_query_name(prefix, off), {cfg.block(), cfg.d_l}, nc::Init::kNormal, 0.02, false);
  for (std::size_t i = 0; i < cfg.layers; ++i)
    layers_.push_back(nc::DecoderLayer::make(store, prefix + ".layer" + std::to_string(i), cfg.d_l, cfg.heads, cfg.ffn));
  ln_out_ = nc::LayerNorm::make(store, prefix + ".norm_out", cfg.d_l);
  out_ = nc::Linear::make(store, prefix + ".out", cfg.d_l, cfg.d_l);
}

Tensor WorldModel::predict_future(const Context& ctx, const std::vector<int>& target_offsets) const {
  const std::size_t F = target_offsets.size(), B = cfg_.block();
  if (F == 0) throw DomainError("world model needs at least two frames");
  if (ctx.tokens.rank() != 2 || ctx.tokens.dim(0) != ctx.coords.size() || ctx.frame.size() != ctx.coords.size())
    throw ShapeError("malformed world model context");
  std::vector<Tensor> q;
  std::vector<Coord> q_coords;
  std::vector<int> q_frame;
  for (std::size_t f = 0; f < F; ++f) {
    auto it = queries_.find(target_offsets[f]);
    if (it == queries_.end()) throw ConfigError("no future query for frame offset " + std::to_string(target_offsets[f]));
    q.push_back(it->second);
    const auto c = block_coords(static_cast<int>(f + 1), cfg_.views, cfg_.queries);
    q_coords.insert(q_coords.end(), c.begin(), c.end());
    q_frame.insert(q_frame.end(), B, static_cast<int>(f));
  }
  const nc::BoolMatrix self_mask = frame_causal_mask(q_frame, q_frame);
  const nc::BoolMatrix cross_mask = frame_causal_mask(q_frame, ctx.frame);
  const RopeConfig rope = rope_;
  const auto rope_q = [&](const Tensor& t) { return apply_rope(t, q_coords, rope); };
  const auto rope_k = [&](const Tensor& t) { return apply_rope(t, ctx.coords, rope); };
  nc::AttentionOptions self_opt{&self_mask, rope_q, rope_q, nullptr};
  nc::AttentionOptions cross_opt{&cross_mask, rope_q, rope_k, nullptr};
  Tensor x = nc::concat(q, 0);
  for (const auto& layer : layers_) x = layer(x, ctx.tokens, self_opt, cross_opt);
  return nc::reshape(out_(ln_out_(x)), {F, B, cfg_.d_l});
}

Tensor wm_loss(const Tensor& predicted, const Tensor& target) {
  if (predicted.shape() != target.shape())
    throw ShapeError("wm_loss shapes differ: " + nc::to_string(predicted.shape()) + " vs " + nc::to_string(target.shape()));
  if (target.requires_grad()) throw ContractError("world model targets must carry no gradient");
  return nc::mse_loss(predicted, target);
}

EgoHeads EgoHeads::make(nc::ParamStore& store, std::size_t d_l, const std::string& prefix) {
  return {nc::Mlp::make(store, prefix + ".cmd", d_l, d_l, kCommands), nc::Mlp::make(store, prefix + ".vel", d_l, d_l, 2),
          nc::Mlp::make(store, prefix + ".acc", d_l, d_l, 2)};
}

EgoPrediction EgoHeads::operator()(const Tensor& future) const {
  if (future.rank() != 3) throw ShapeError("ego heads expect [F, B, D_l]");
  const std::size_t F = future.dim(0), B = future.dim(1), D = future.dim(2);
  const Tensor ego = nc::reshape(nc::slice(future, 1, B - 1, B), {F, D});
  EgoPrediction p;
  p.cmd_logits = cmd(ego);
  p.cmd_probs = nc::softmax(p.cmd_logits);
  p.velocity = vel(ego);
  p.accel = acc(ego);
  return p;
}

Tensor ego_loss(const EgoPrediction& pred, const EgoTargets& target) {
  const std::size_t F = pred.cmd_logits.dim(0);
  if (target.commands.size() != F || target.velocity.size() != 2 * F || target.accel.size() != 2 * F)
    throw ShapeError("ego targets do not match " + std::to_string(F) + " predicted frames");
  const Tensor l_cmd = nc::cross_entropy_loss(pred.cmd_logits, target.commands);
  const Tensor l_v = nc::mse_loss(pred.velocity, Tensor::from({F, 2}, target.velocity));
  const Tensor l_a = nc::mse_loss(pred.accel, Tensor::from({F, 2}, target.accel));
  return nc::add(nc::add(l_cmd, l_v), l_a);
}

void ema_update(const nc::ParamStore& online, nc::ParamStore& shadow, double mu) {
  if (!(mu >= 0.0 && mu <= 1.0)) throw ConfigError("EMA momentum must lie in [0, 1]");
  if (online.names() != shadow.names()) throw ConfigError("EMA parameter sets differ");
  for (const auto& name : shadow.names()) {
    const Tensor& o = online.at(name);
    Tensor s = shadow.at(name);
    if (o.shape() != s.shape()) throw ConfigError("EMA shape mismatch for " + name);
    if (s.requires_grad()) throw ContractError("EMA shadow parameter " + name + " must not require gradients");
    auto sd = s.mutable_data();
    const auto od = o.data();
    for (std::size_t i = 0; i < sd.size(); ++i) sd[i] = mu * sd[i] + (1.0 - mu) * od[i];
  }
}

}  // namespace lwam::dlwm
