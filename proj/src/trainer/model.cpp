#include "lwam/trainer/model.hpp"

#include <algorithm>
#include <cmath>

#include "lwam/errors.hpp"
#include "lwam/numcore/io.hpp"

namespace lwam::train {

std::size_t Sample::index_of(int rel) const {
  const auto& rels = world::kStoredFrames;
  const auto it = std::find(rels.begin(), rels.end(), rel);
  if (it == rels.end()) throw DomainError("frame " + std::to_string(rel) + " is not stored");
  return static_cast<std::size_t>(it - rels.begin());
}

Dataset Dataset::load(const std::filesystem::path& root, std::size_t max_scenes) {
  Dataset d;
  if (!std::filesystem::is_directory(root)) throw DataError("corpus " + root.string() + " does not exist; run gen-data");
  auto dirs = world::list_scenarios(root);
  if (max_scenes > 0 && dirs.size() > max_scenes) dirs.resize(max_scenes);
  if (dirs.empty()) throw DataError("corpus " + root.string() + " has no scenarios; run gen-data");
  for (const auto& dir : dirs) {
    Sample s;
    s.id = dir.filename().string();
    s.scenario = world::read_scenario(dir);
    const std::size_t S = s.scenario.render.patches();
    for (int rel : world::kStoredFrames) {
      std::vector<Tensor> views, feats;
      for (int m = 0; m < world::kNumViews; ++m) {
        const auto rp = world::raster_path(dir, rel, m);
        const auto tp = world::teacher_path(dir, s.scenario.seed, rel, m);
        if (!std::filesystem::exists(rp)) throw DataError("missing raster " + rp.string() + "; run gen-data");
        if (!std::filesystem::exists(tp)) throw DataError("missing teacher cache " + tp.string() + "; run gen-data");
        views.push_back(nc::load_tensor(rp));
        feats.push_back(nc::load_tensor(tp));
        if (views.back().shape() != nc::Shape{S, world::kRasterChannels} ||
            feats.back().shape() != nc::Shape{S, world::kTeacherDim})
          throw DataError("unexpected tensor shape in " + dir.string());
      }
      s.rasters.push_back(nc::reshape(nc::concat(views, 0), {views.size(), S, world::kRasterChannels}));
      s.teacher.push_back(nc::reshape(nc::concat(feats, 0), {feats.size(), S, world::kTeacherDim}));
    }
    if (!d.samples_.empty() && s.scenario.render.patches() != d.patches())
      throw DataError("corpus mixes patch grids");
    d.samples_.push_back(std::move(s));
  }
  return d;
}

std::size_t Dataset::patches() const { return samples_.front().scenario.render.patches(); }
const world::RenderConfig& Dataset::render() const { return samples_.front().scenario.render; }

Tensor ego_input(const world::EgoState& e) {
  const auto v = dlwm::ego_vector(e.command, e.v, e.a);
  return Tensor::from({1, dlwm::kEgoInputDim}, std::vector<double>(v.begin(), v.end()));
}

Model::Model(nc::ParamStore& store, const TrainConfig& cfg, std::size_t patches, bool inference) : cfg_(cfg) {
  cfg_.validate();
  enc_cfg_.queries = cfg.queries;
  enc_cfg_.d_e = cfg.d_e;
  enc_cfg_.d_l = cfg.d_l;
  enc_cfg_.layers = cfg.enc_layers;
  enc_cfg_.heads = cfg.enc_heads;
  enc_cfg_.ffn = 4 * cfg.d_e;
  enc_cfg_.patches = patches;
  enc_cfg_.c_in = world::kRasterChannels;
  enc_cfg_.d_g = world::kTeacherDim;
  encoder_.emplace(store, enc_cfg_);
  ego_enc_ = dlwm::EgoEncoder::make(store, cfg.d_l);
  trajdec::TrajDecConfig dc;
  dc.poses = world::kTrajPoses;
  dc.dt = world::kTrajDt;
  dc.d_l = cfg.d_l;
  dc.layers = cfg.dec_layers;
  dc.heads = cfg.dec_heads;
  dc.ffn = 4 * cfg.d_l;
  dc.pose_scale = cfg.pose_scale;
  decoder_.emplace(store, dc);
  if (cfg.toggles.geometry == Geometry::kConcat) concat_map_ = scwe::concat_map(enc_cfg_.d_g, cfg.d_l);
  if (inference) return;
  if (cfg.toggles.world_model) wm_.emplace(store, world_model_config());
  if (cfg.toggles.ego_status) heads_ = dlwm::EgoHeads::make(store, cfg.d_l);
  if (cfg.toggles.geometry == Geometry::kDistill) proj_ = scwe::make_projector(store, enc_cfg_);
}

dlwm::WorldModelConfig Model::world_model_config() const {
  dlwm::WorldModelConfig w;
  w.d_l = cfg_.d_l;
  w.layers = cfg_.wm_layers;
  w.heads = cfg_.wm_heads;
  w.ffn = 4 * cfg_.d_l;
  w.views = world::kNumViews;
  w.queries = cfg_.queries;
  w.offsets.assign(cfg_.stride.begin() + 1, cfg_.stride.end());
  return w;
}

scwe::EncodeOutput Model::encode_frame(const Tensor& rasters) const {
  const std::size_t M = rasters.dim(0);
  auto out = encoder_->encode(nc::reshape(rasters, {1, M, enc_cfg_.patches, enc_cfg_.c_in}));
  return {nc::reshape(out.scene, {M, enc_cfg_.queries, enc_cfg_.d_l}),
          nc::reshape(out.image, {M, enc_cfg_.patches, enc_cfg_.d_l})};
}

namespace {

// Teacher tokens of one frame mapped into the latent width, with coordinates after the scene queries.
void append_teacher(std::vector<Tensor>& parts, std::vector<dlwm::Coord>& coords, const Tensor& teacher,
                    const Tensor& map, int t, std::size_t offset) {
  const std::size_t M = teacher.dim(0), S = teacher.dim(1);
  parts.push_back(nc::matmul(nc::reshape(teacher, {M * S, teacher.dim(2)}), map));
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t s = 0; s < S; ++s)
      coords.push_back({t, static_cast<int>(m), static_cast<int>(offset + s)});
}

}  // namespace

Memory Model::memory(const scwe::EncodeOutput& frame, const world::EgoState& ego, const Tensor* teacher) const {
  const std::size_t M = frame.scene.dim(0);
  std::vector<Tensor> parts;
  Memory mem;
  const Tensor& tokens = cfg_.toggles.compression ? frame.scene : frame.image;
  const std::size_t per_view = tokens.dim(1);
  parts.push_back(nc::reshape(tokens, {M * per_view, cfg_.d_l}));
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t n = 0; n < per_view; ++n) mem.coords.push_back({0, static_cast<int>(m), static_cast<int>(n)});
  parts.push_back(ego_enc_(ego_input(ego)));
  mem.coords.push_back({0, static_cast<int>(M), 0});
  if (cfg_.toggles.geometry == Geometry::kConcat) {
    if (!teacher) throw ContractError("the concatenation variant needs teacher features");
    append_teacher(parts, mem.coords, *teacher, concat_map_, 0, per_view);
  }
  mem.tokens = nc::concat(parts, 0);
  return mem;
}

Tensor Model::plan(const Tensor& rasters, const world::EgoState& ego, const Tensor* teacher) const {
  const auto mem = memory(encode_frame(rasters), ego, teacher);
  return decoder_->decode_candidates(mem.tokens, mem.coords);
}

TargetNetwork::TargetNetwork(nc::ParamStore shadow, const scwe::EncoderConfig& enc, std::size_t d_l)
    : store_(std::move(shadow)),
      restored_(store_.names().size()),
      encoder_(store_, enc),
      ego_(dlwm::EgoEncoder::make(store_, d_l)) {
  if (store_.names().size() != restored_) throw DataError("shadow parameters do not match the tracked modules");
}

std::vector<std::string_view> TargetNetwork::tracked() { return {"scwe.", "ego.enc."}; }

nc::ParamStore TargetNetwork::snapshot(const nc::ParamStore& online) { return online.select(tracked()).clone(false); }

void TargetNetwork::update(const nc::ParamStore& online, double momentum) {
  dlwm::ema_update(online.select(tracked()), store_, momentum);
}

LossValues values(const LossTerms& t) {
  LossValues v;
  v.total = t.total.item();
  if (t.traj.defined()) v.traj = t.traj.item();
  if (t.align.defined()) v.align = t.align.item();
  if (t.wm.defined()) v.wm = t.wm.item();
  if (t.ego.defined()) v.ego = t.ego.item();
  return v;
}

Tensor weighted_total(const LossTerms& t, const TrainConfig& cfg) {
  Tensor total = t.traj;
  const auto add_term = [&](const Tensor& term, double w) {
    if (!term.defined()) return;
    const Tensor scaled = nc::scale(term, w);
    total = total.defined() ? nc::add(total, scaled) : scaled;
  };
  add_term(t.align, cfg.alpha);
  add_term(t.wm, cfg.beta);
  add_term(t.ego, cfg.gamma);
  if (!total.defined()) throw ContractError("no loss term is enabled");
  return total;
}

namespace {

template <typename F>
Tensor named_term(const char* name, F&& f) {
  try {
    Tensor t = f();
    for (double v : t.data())
      if (!std::isfinite(v)) throw NumericalError("non-finite value");
    return t;
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("loss term ") + name + " is not finite: " + e.what());
  }
}

}  // namespace

LossTerms total_loss(const Model& model, const Sample& s, const TargetNetwork* target) {
  const TrainConfig& cfg = model.config();
  const auto& P = cfg.stride;
  const bool wm_on = cfg.toggles.world_model;
  const bool concat = cfg.toggles.geometry == Geometry::kConcat;
  const std::vector<int> online = wm_on ? std::vector<int>(P.begin(), P.end() - 1) : std::vector<int>{0};

  std::vector<scwe::EncodeOutput> enc;
  for (int rel : online) enc.push_back(model.encode_frame(s.rasters[s.index_of(rel)]));
  const std::size_t cur = static_cast<std::size_t>(std::find(online.begin(), online.end(), 0) - online.begin());

  LossTerms t;
  t.traj = named_term("traj", [&] {
    const Tensor* teacher = concat ? &s.teacher[s.index_of(0)] : nullptr;
    const Memory mem = model.memory(enc[cur], s.ego(0), teacher);
    return trajdec::traj_loss(model.decoder().decode_candidates(mem.tokens, mem.coords), s.scenario.expert,
                              s.command());
  });

  if (cfg.toggles.geometry == Geometry::kDistill) {
    t.align = named_term("align", [&] {
      std::vector<Tensor> img, teach;
      for (std::size_t i = 0; i < online.size(); ++i) {
        img.push_back(enc[i].image);
        teach.push_back(s.teacher[s.index_of(online[i])]);
      }
      return scwe::align_loss(nc::concat(img, 0), nc::concat(teach, 0), *model.projector());
    });
  }

  if (wm_on) {
    if (!target) throw ContractError("the world model loss needs the EMA target encoder");
    const auto* wm = model.world_model();
    const auto wcfg = wm->config();
    const std::size_t F = online.size(), M = world::kNumViews, N = cfg.queries, D = cfg.d_l;
    const std::vector<int> future(P.begin() + 1, P.end());
    Tensor fut = named_term("wm prediction", [&] {
      std::vector<Tensor> scene, ego;
      for (std::size_t i = 0; i < F; ++i) {
        scene.push_back(enc[i].scene);
        ego.push_back(ego_input(s.ego(online[i])));
      }
      const Tensor world = dlwm::aggregate(nc::reshape(nc::concat(scene, 0), {F, M, N, D}), nc::concat(ego, 0),
                                           model.ego_encoder());
      dlwm::Context ctx = dlwm::make_context(world, wcfg);
      if (concat)
        for (std::size_t i = 0; i < F; ++i) {
          std::vector<Tensor> parts;
          std::vector<dlwm::Coord> coords;
          append_teacher(parts, coords, s.teacher[s.index_of(online[i])], model.concat_map(), static_cast<int>(i), N);
          dlwm::append_context(ctx, parts.front(), static_cast<int>(i), coords);
        }
      return wm->predict_future(ctx, future);
    });
    Tensor gt;
    {
      nc::NoGradGuard ng;
      std::vector<Tensor> scene, ego;
      for (int rel : future) {
        const std::size_t k = s.index_of(rel);
        scene.push_back(target->encoder().encode(nc::reshape(s.rasters[k], {1, M, s.rasters[k].dim(1), s.rasters[k].dim(2)})).scene);
        ego.push_back(ego_input(s.ego(rel)));
      }
      gt = dlwm::aggregate(nc::concat(scene, 0), nc::concat(ego, 0), target->ego()).detach();
    }
    t.wm = named_term("wm", [&] { return dlwm::wm_loss(fut, gt); });

    if (cfg.toggles.ego_status) {
      t.ego = named_term("ego", [&] {
        dlwm::EgoTargets et;
        for (int rel : future) {
          const auto& e = s.ego(rel);
          et.commands.push_back(e.command);
          et.velocity.insert(et.velocity.end(), {e.v[0] / dlwm::kVelocityScale, e.v[1] / dlwm::kVelocityScale});
          et.accel.insert(et.accel.end(), {e.a[0] / dlwm::kAccelScale, e.a[1] / dlwm::kAccelScale});
        }
        return dlwm::ego_loss((*model.ego_heads())(fut), et);
      });
    }
  }
  t.total = named_term("total", [&] { return weighted_total(t, cfg); });
  return t;
}

}  // namespace lwam::train
