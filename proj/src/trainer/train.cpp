#include "lwam/trainer/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "lwam/errors.hpp"
#include "lwam/numcore/io.hpp"
#include "lwam/worldgen/render.hpp"

namespace lwam::train {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string to_json(const StepRecord& r) {
  json j{{"step", r.step},          {"epoch", r.epoch},       {"lr", r.lr},           {"grad_norm", r.grad_norm},
         {"total", r.loss.total},   {"traj", r.loss.traj},    {"align", r.loss.align}, {"wm", r.loss.wm},
         {"ego", r.loss.ego}};
  return j.dump();
}

std::vector<StepRecord> read_log(std::istream& in) {
  std::vector<StepRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      StepRecord r;
      r.step = j.at("step").get<std::size_t>();
      r.epoch = j.at("epoch").get<std::size_t>();
      r.lr = j.at("lr").get<double>();
      r.grad_norm = j.at("grad_norm").get<double>();
      r.loss.total = j.at("total").get<double>();
      r.loss.traj = j.at("traj").get<double>();
      r.loss.align = j.at("align").get<double>();
      r.loss.wm = j.at("wm").get<double>();
      r.loss.ego = j.at("ego").get<double>();
      out.push_back(r);
    } catch (const json::exception& e) {
      throw ParseError(std::string("training log: ") + e.what(), n);
    }
  }
  return out;
}

std::size_t batches_per_epoch(const TrainConfig& cfg, std::size_t dataset_size) {
  if (dataset_size == 0) throw DataError("empty training set");
  return (dataset_size + cfg.batch_size - 1) / cfg.batch_size;
}

std::size_t total_steps(const TrainConfig& cfg, std::size_t dataset_size) {
  return cfg.steps > 0 ? cfg.steps : cfg.epochs * batches_per_epoch(cfg, dataset_size);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x7eu};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

Model bind_model(nc::ParamStore& store, const TrainConfig& cfg, std::size_t patches) {
  const std::size_t before = store.names().size();
  Model m(store, cfg, patches, true);
  if (store.names().size() != before) throw DataError("weights do not match the model configuration");
  return m;
}

namespace {

AdamWConfig adam_config(const TrainConfig& cfg) {
  AdamWConfig a;
  a.beta1 = cfg.adam_beta1;
  a.beta2 = cfg.adam_beta2;
  a.eps = cfg.adam_eps;
  a.weight_decay = cfg.weight_decay;
  a.clip_norm = cfg.grad_clip;
  return a;
}

void save_checkpoint(const fs::path& dir, const nc::ParamStore& online, const nc::ParamStore& shadow,
                     const AdamW& optim, std::size_t step, std::size_t total, const TrainConfig& cfg) {
  online.save(dir / "online");
  shadow.save(dir / "shadow");
  optim.save(dir / "optim");
  const json state{{"step", step}, {"total_steps", total}, {"config", to_ini(cfg)}};
  nc::write_file_atomic(dir / "state.json", state.dump(2) + "\n");
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& data, const TrainOptions& opt) {
  cfg.validate();
  const std::size_t n = data.size();
  const std::size_t bpe = batches_per_epoch(cfg, n);
  const std::size_t total = total_steps(cfg, n);
  const fs::path ckpt = opt.out.empty() ? fs::path{} : opt.out / "checkpoint";
  const bool resumed = opt.resume && !opt.out.empty() && fs::exists(ckpt / "state.json");

  nc::ParamStore online(cfg.seed);
  nc::ParamStore shadow;
  std::size_t step = 0;
  if (resumed) {
    const json state = json::parse(nc::read_file(ckpt / "state.json"));
    if (state.at("config").get<std::string>() != to_ini(cfg))
      throw ConfigError("checkpoint in " + ckpt.string() + " was written with a different config");
    step = state.at("step").get<std::size_t>();
    online = nc::ParamStore::load(ckpt / "online", true);
    shadow = nc::ParamStore::load(ckpt / "shadow", false);
  }
  Model model(online, cfg, data.patches());
  if (!resumed) shadow = TargetNetwork::snapshot(online);
  TargetNetwork target(std::move(shadow), model.encoder_config(), cfg.d_l);
  AdamW optim(online, adam_config(cfg));
  if (resumed) optim.load(ckpt / "optim");

  std::ofstream log;
  if (!opt.out.empty()) {
    fs::create_directories(opt.out);
    nc::write_file_atomic(opt.out / "config.ini", to_ini(cfg));
    const fs::path log_path = opt.out / "train_log.jsonl";
    std::string kept;
    if (resumed && fs::exists(log_path)) {
      std::istringstream in(nc::read_file(log_path));
      for (const auto& r : read_log(in))
        if (r.step <= step) kept += to_json(r) + "\n";
    }
    nc::write_file_atomic(log_path, kept);
    log.open(log_path, std::ios::app);
  }

  TrainResult result;
  result.total_steps = total;
  std::vector<std::size_t> order;
  std::size_t order_epoch = static_cast<std::size_t>(-1);
  const TargetNetwork* tgt = cfg.toggles.world_model ? &target : nullptr;
  while (step < total && !(opt.stop_after > 0 && step >= opt.stop_after)) {
    const std::size_t epoch = step / bpe;
    if (epoch != order_epoch) {
      order = epoch_order(n, cfg.seed, epoch);
      order_epoch = epoch;
    }
    const std::size_t b = step % bpe;
    const std::size_t lo = b * cfg.batch_size, hi = std::min(n, lo + cfg.batch_size);
    const double w = 1.0 / static_cast<double>(hi - lo);
    StepRecord rec;
    for (std::size_t i = lo; i < hi; ++i) {
      const LossTerms terms = total_loss(model, data[order[i]], tgt);
      const LossValues v = values(terms);
      rec.loss.total += w * v.total;
      rec.loss.traj += w * v.traj;
      rec.loss.align += w * v.align;
      rec.loss.wm += w * v.wm;
      rec.loss.ego += w * v.ego;
      nc::backward(nc::scale(terms.total, w));
    }
    rec.step = step + 1;
    rec.epoch = epoch;
    rec.lr = lr_at(step + 1, total, cfg);
    rec.grad_norm = optim.step(online, rec.lr);
    target.update(online, cfg.ema_momentum);
    ++step;

    result.log.push_back(rec);
    if (log.is_open()) log << to_json(rec) << '\n' << std::flush;
    if (opt.on_step) opt.on_step(rec);
    const bool boundary = step % bpe == 0 || step == total || (opt.stop_after > 0 && step == opt.stop_after);
    if (!ckpt.empty() && boundary) save_checkpoint(ckpt, online, target.store(), optim, step, total, cfg);
  }
  if (!opt.out.empty() && step == total) online.save(opt.out / "model");
  result.steps = step;
  result.params = online;
  return result;
}

Trained load_trained(const fs::path& dir) {
  if (!fs::exists(dir / "config.ini")) throw DataError("no config.ini in " + dir.string() + "; run train first");
  Trained t{load_config(dir / "config.ini"), {}};
  if (fs::exists(dir / "model" / "index.txt"))
    t.params = nc::ParamStore::load(dir / "model", false);
  else if (fs::exists(dir / "checkpoint" / "online" / "index.txt"))
    t.params = nc::ParamStore::load(dir / "checkpoint" / "online", false);
  else
    throw DataError("no weights under " + dir.string());
  return t;
}

namespace {

const Tensor* teacher_for(const Model& model, const Sample& s) {
  return model.config().toggles.geometry == Geometry::kConcat ? &s.teacher[s.index_of(0)] : nullptr;
}

}  // namespace

double mean_traj_loss(const Model& model, const Dataset& data) {
  nc::NoGradGuard ng;
  double sum = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Sample& s = data[i];
    const Tensor c = model.plan(s.rasters[s.index_of(0)], s.ego(0), teacher_for(model, s));
    sum += trajdec::traj_loss(c, s.scenario.expert, s.command()).item();
  }
  return sum / static_cast<double>(data.size());
}

OpenLoopResult open_loop(const Dataset& data, const std::function<world::Trajectory(const Sample&)>& planner) {
  OpenLoopResult r;
  if (data.size() == 0) throw DataError("empty evaluation set");
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Sample& s = data[i];
    const world::Trajectory t = planner(s);
    const auto& e = s.scenario.expert.poses;
    if (t.poses.size() != e.size()) throw ShapeError("planner pose count differs from the expert");
    double sum = 0;
    for (std::size_t k = 0; k < e.size(); ++k) sum += std::hypot(t.poses[k].x - e[k].x, t.poses[k].y - e[k].y);
    r.per_scene.push_back(sum / static_cast<double>(e.size()));
    r.fde += std::hypot(t.poses.back().x - e.back().x, t.poses.back().y - e.back().y);
  }
  r.ade = std::accumulate(r.per_scene.begin(), r.per_scene.end(), 0.0) / static_cast<double>(data.size());
  r.fde /= static_cast<double>(data.size());
  return r;
}

OpenLoopResult open_loop(const Model& model, const Dataset& data) {
  nc::NoGradGuard ng;
  return open_loop(data, [&](const Sample& s) {
    const Tensor c = model.plan(s.rasters[s.index_of(0)], s.ego(0), teacher_for(model, s));
    return trajdec::select(c, s.command(), model.decoder().config().dt);
  });
}

double command_accuracy(const Model& model, const Dataset& data) {
  const auto* wm = model.world_model();
  const auto* heads = model.ego_heads();
  if (!wm || !heads) throw ContractError("command accuracy needs the world model and the ego heads");
  nc::NoGradGuard ng;
  const TrainConfig& cfg = model.config();
  const std::vector<int> ctx_frames(cfg.stride.begin(), cfg.stride.end() - 1);
  const std::vector<int> future(cfg.stride.begin() + 1, cfg.stride.end());
  const std::size_t F = ctx_frames.size(), M = world::kNumViews;
  std::size_t hits = 0, count = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Sample& s = data[i];
    std::vector<Tensor> scene, ego;
    for (int rel : ctx_frames) {
      scene.push_back(model.encode_frame(s.rasters[s.index_of(rel)]).scene);
      ego.push_back(ego_input(s.ego(rel)));
    }
    const Tensor world = dlwm::aggregate(nc::reshape(nc::concat(scene, 0), {F, M, cfg.queries, cfg.d_l}),
                                         nc::concat(ego, 0), model.ego_encoder());
    dlwm::Context ctx = dlwm::make_context(world, wm->config());
    if (cfg.toggles.geometry == Geometry::kConcat)
      for (std::size_t f = 0; f < F; ++f) {
        const Tensor& t = s.teacher[s.index_of(ctx_frames[f])];
        const std::size_t S = t.dim(1);
        std::vector<dlwm::Coord> coords;
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t p = 0; p < S; ++p)
            coords.push_back({static_cast<int>(f), static_cast<int>(m), static_cast<int>(cfg.queries + p)});
        dlwm::append_context(ctx, nc::matmul(nc::reshape(t, {M * S, t.dim(2)}), model.concat_map()),
                             static_cast<int>(f), coords);
      }
    const auto pred = (*heads)(wm->predict_future(ctx, future));
    for (std::size_t f = 0; f < future.size(); ++f) {
      const auto row = pred.cmd_probs.data().subspan(f * dlwm::kCommands, dlwm::kCommands);
      const int arg = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      hits += arg == s.ego(future[f]).command;
      ++count;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(count);
}

Tensor render_rasters(const world::WorldSpec& w, const world::EgoState& ego, const world::RenderConfig& render,
                      double time) {
  const auto views = world::render_views(w, ego, render, time);
  std::vector<double> data;
  for (const auto& v : views) data.insert(data.end(), v.raster.begin(), v.raster.end());
  return Tensor::from({views.size(), static_cast<std::size_t>(render.patches()), world::kRasterChannels},
                      std::move(data));
}

Tensor render_teacher(const world::WorldSpec& w, const world::EgoState& ego, const world::RenderConfig& render,
                      double time) {
  std::vector<double> data;
  for (int m = 0; m < world::kNumViews; ++m) {
    const auto f = world::teacher_features(w, ego, m, render, time);
    data.insert(data.end(), f.begin(), f.end());
  }
  return Tensor::from({world::kNumViews, static_cast<std::size_t>(render.patches()), world::kTeacherDim},
                      std::move(data));
}

world::PlanResult ModelPolicy::plan(const world::WorldSpec& w, const world::EgoState& ego, double time) {
  nc::NoGradGuard ng;
  const Tensor rasters = render_rasters(w, ego, render_, time);
  Tensor teacher;
  if (model_.config().toggles.geometry == Geometry::kConcat) teacher = render_teacher(w, ego, render_, time);
  const Tensor c = model_.plan(rasters, ego, teacher.defined() ? &teacher : nullptr);
  world::PlanResult r;
  r.trajectory = trajdec::select(c, ego.command, model_.decoder().config().dt, ego.pose());
  r.candidates_hash = world::hash_values(std::vector<double>(c.data().begin(), c.data().end()));
  return r;
}

ClosedLoopResult closed_loop(world::Policy& policy, const Dataset& data, const TrainConfig& cfg,
                             const std::function<void(const std::string&, const world::Rollout&)>& on_rollout) {
  world::RolloutConfig rc;
  rc.replan_interval = cfg.replan_interval;
  rc.max_time = cfg.max_time;
  ClosedLoopResult out;
  if (data.size() == 0) throw DataError("empty evaluation set");
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Sample& s = data[i];
    const world::Rollout r = world::run_closed_loop(s.scenario.world, policy, rc);
    if (on_rollout) on_rollout(s.id, r);
    auto report = metrics::evaluate_rollout(s.scenario.world, r);
    report.scenario = s.id;
    out.route_completion += report.route_completion;
    out.hd_score += report.hd_score;
    out.reports.push_back(std::move(report));
  }
  out.route_completion /= static_cast<double>(data.size());
  out.hd_score /= static_cast<double>(data.size());
  return out;
}

AttentionMap attention_probe(const Model& model, const Sample& s, int view) {
  if (view < 0 || view >= world::kNumViews) throw DomainError("view index out of range");
  nc::NoGradGuard ng;
  const Tensor& r = s.rasters[s.index_of(0)];
  const std::size_t S = r.dim(1), C = r.dim(2);
  const auto slice = r.data().subspan(static_cast<std::size_t>(view) * S * C, S * C);
  std::vector<double> attn;
  model.encoder().encode_view(Tensor::from({S, C}, std::vector<double>(slice.begin(), slice.end())), &attn);
  AttentionMap a;
  a.queries = model.encoder_config().queries;
  a.patches = S;
  a.grid_h = static_cast<std::size_t>(s.scenario.render.grid_h);
  a.grid_w = static_cast<std::size_t>(s.scenario.render.grid_w);
  const std::size_t L = a.queries + S;
  const std::size_t heads = attn.size() / (L * L);
  a.weights.assign(a.queries * S, 0.0);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t q = 0; q < a.queries; ++q)
      for (std::size_t p = 0; p < S; ++p)
        a.weights[q * S + p] += attn[(h * L + q) * L + a.queries + p] / static_cast<double>(heads);
  return a;
}

std::vector<AblationRow> ablation_rows(const std::string& matrix, const TrainConfig& base) {
  std::vector<AblationRow> rows;
  if (matrix == "table3") {
    struct Spec {
      const char* name;
      bool compression;
      Geometry geometry;
      bool wm, ego;
    };
    const Spec specs[] = {
        {"baseline", false, Geometry::kOff, false, false},
        {"compression", true, Geometry::kOff, false, false},
        {"compression+wm", true, Geometry::kOff, true, false},
        {"compression+wm+ego", true, Geometry::kOff, true, true},
        {"compression+geometry", true, Geometry::kDistill, false, false},
        {"compression+geometry+wm", true, Geometry::kDistill, true, false},
        {"full", true, Geometry::kDistill, true, true},
    };
    for (const auto& s : specs) {
      AblationRow r{s.name, base};
      r.cfg.toggles = {s.compression, s.geometry, s.wm, s.ego};
      rows.push_back(r);
    }
  } else if (matrix == "table5") {
    const char* names[] = {"0>8", "-3>0>4>8", "dense"};
    for (std::size_t i = 0; i < stride_patterns().size(); ++i) {
      AblationRow r{names[i], base};
      r.cfg.toggles = Toggles{};
      r.cfg.stride = stride_patterns()[i];
      rows.push_back(r);
    }
  } else {
    throw ConfigError("matrix must be table3 or table5, got '" + matrix + "'");
  }
  for (const auto& r : rows) r.cfg.validate();
  return rows;
}

AblationResult run_ablation_row(const AblationRow& row, const Dataset& train_data, const Dataset& eval_data) {
  TrainResult t = train(row.cfg, train_data);
  const Model model = bind_model(t.params, row.cfg, train_data.patches());
  AblationResult r;
  r.name = row.name;
  r.ade = open_loop(model, eval_data).ade;
  ModelPolicy policy(model, eval_data.render());
  r.reports = closed_loop(policy, eval_data, row.cfg).reports;
  return r;
}

std::string ablation_header() { return "config," + metrics::table1_header() + ",ADE"; }

std::string ablation_csv_row(const AblationResult& r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", r.ade);
  return r.name + "," + metrics::table1_row(r.reports) + "," + buf;
}

}  // namespace lwam::train
