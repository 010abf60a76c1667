#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "lwam/errors.hpp"
#include "lwam/metrics/metrics.hpp"
#include "lwam/numcore/io.hpp"
#include "lwam/trainer/train.hpp"
#include "lwam/worldgen/corpus.hpp"
#include "plot.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace lwam;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kNumerical = 4 };

const char* version() { return LWAM_GIT_DESCRIBE; }

fs::path default_corpus(const std::string& flag, const std::string& from_config = "") {
  if (!flag.empty()) return flag;
  if (!from_config.empty()) return from_config;
  if (const char* env = std::getenv("LWAM_CORPUS"); env && *env) return env;
  throw ConfigError("no corpus given: pass --corpus, set it in the config, or set LWAM_CORPUS");
}

// Directory name, scenario count and a digest of every scenario's metadata.
std::string corpus_id(const fs::path& root) {
  if (!fs::is_directory(root)) return "";
  std::uint64_t h = 1469598103934665603ull;
  std::size_t count = 0;
  for (const auto& dir : world::list_scenarios(root)) {
    ++count;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file() || entry.path().extension() == ".lwt") continue;
      for (unsigned char c : nc::read_file(entry.path())) h = (h ^ c) * 1099511628211ull;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return fs::absolute(root).lexically_normal().filename().string() + ":" + std::to_string(count) + ":" + buf;
}

void write_manifest(const fs::path& out, const std::string& command, const std::string& config, std::uint64_t seed,
                    const fs::path& corpus) {
  fs::create_directories(out);
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  const json m{{"command", command},
               {"config", config.empty() ? json(nullptr) : json(config)},
               {"seed", seed},
               {"version", version()},
               {"corpus", corpus.empty() ? json(nullptr) : json(corpus_id(corpus))},
               {"corpus_path", corpus.empty() ? json(nullptr) : json(corpus.string())},
               {"output", out.string()},
               {"created", stamp}};
  nc::write_file_atomic(out / "manifest.json", m.dump(2) + "\n");
}

train::TrainConfig read_config(const std::string& path) {
  try {
    return train::load_config(path);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- gen-data ----

struct GenArgs {
  std::uint64_t seed = 0;
  std::size_t count = 64;
  std::string mix = "E,M,H,X";
  std::string out;
  int grid_h = 7, grid_w = 14;
};

int cmd_gen_data(const GenArgs& a) {
  if (a.grid_h <= 0 || a.grid_w <= 0) throw ConfigError("grid dimensions must be positive");
  world::GenDataOptions g;
  g.seed = a.seed;
  g.count = a.count;
  g.mix = world::parse_difficulty_mix(a.mix);
  g.render.grid_h = a.grid_h;
  g.render.grid_w = a.grid_w;
  const fs::path out = default_corpus(a.out);
  const auto r = world::generate_corpus(out, g);
  write_manifest(out, "gen-data", "", a.seed, out);
  std::printf("corpus %s: %zu generated, %zu already complete\n", out.string().c_str(), r.generated, r.skipped);
  return kOk;
}

// ---- train ----

struct TrainArgs {
  std::string config, out, corpus;
  bool resume = false;
  std::size_t stop_after = 0;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  const train::TrainConfig cfg = read_config(a.config);
  const fs::path corpus = default_corpus(a.corpus, cfg.corpus);
  const train::Dataset data = train::Dataset::load(corpus, cfg.max_scenes);
  write_manifest(a.out, "train", a.config, cfg.seed, corpus);
  train::TrainOptions opt;
  opt.out = a.out;
  opt.resume = a.resume;
  opt.stop_after = a.stop_after;
  if (!a.quiet)
    opt.on_step = [](const train::StepRecord& r) {
      if (r.step == 1 || r.step % 25 == 0)
        std::printf("step %zu lr %.3e total %.4f traj %.4f align %.4f wm %.4f ego %.4f\n", r.step, r.lr,
                    r.loss.total, r.loss.traj, r.loss.align, r.loss.wm, r.loss.ego);
    };
  const auto res = train::train(cfg, data, opt);
  std::printf("trained %zu/%zu steps into %s\n", res.steps, res.total_steps, a.out.c_str());
  return kOk;
}

// ---- eval ----

struct EvalArgs {
  std::string checkpoint, corpus, mode = "openloop", out, config;
  std::size_t max_scenes = 0;
};

struct Loaded {
  train::TrainConfig cfg;
  nc::ParamStore params;
  std::optional<train::Model> model;
};

void load_model(Loaded& l, const std::string& dir, const train::Dataset& data) {
  auto t = train::load_trained(dir);
  l.cfg = t.cfg;
  l.params = std::move(t.params);
  if (l.params.contains("scwe.pos")) {
    const std::size_t trained = l.params.at("scwe.pos").dim(0);
    if (trained != data.patches())
      throw ConfigError("checkpoint was trained on " + std::to_string(trained) + " patches per view but the corpus has " +
                        std::to_string(data.patches()));
  }
  l.model.emplace(train::bind_model(l.params, l.cfg, data.patches()));
}

int cmd_eval(const EvalArgs& a) {
  if (a.mode != "openloop" && a.mode != "closedloop") throw ConfigError("mode must be openloop or closedloop");
  const bool expert = a.checkpoint == "expert", stationary = a.checkpoint == "stationary";
  train::TrainConfig base = a.config.empty() ? train::TrainConfig{} : read_config(a.config);
  Loaded l;
  std::string eval_corpus = base.eval_corpus;
  if (!expert && !stationary) {
    const auto t = train::load_trained(a.checkpoint);
    if (eval_corpus.empty()) eval_corpus = t.cfg.eval_corpus;
  }
  const fs::path corpus = default_corpus(a.corpus, eval_corpus);
  const train::Dataset data = train::Dataset::load(corpus, a.max_scenes);
  if (!expert && !stationary) {
    load_model(l, a.checkpoint, data);
    base = l.cfg;
  }
  const fs::path out = a.out;
  write_manifest(out, "eval " + a.mode, a.config, base.seed, corpus);

  if (a.mode == "openloop") {
    std::vector<plot::TrajectoryPair> pairs;
    const auto planner = [&](const train::Sample& s) -> world::Trajectory {
      world::Trajectory t;
      if (expert) {
        t = s.scenario.expert;
      } else if (stationary) {
        t = s.scenario.expert;
        for (auto& p : t.poses) p = {};
      } else {
        nc::NoGradGuard ng;
        const nc::Tensor* teacher =
            l.cfg.toggles.geometry == train::Geometry::kConcat ? &s.teacher[s.index_of(0)] : nullptr;
        t = trajdec::select(l.model->plan(s.rasters[s.index_of(0)], s.ego(0), teacher), s.command(), world::kTrajDt);
      }
      plot::TrajectoryPair p{s.id, {}, {}};
      for (const auto& q : s.scenario.expert.poses) p.expert.push_back({q.x, q.y});
      for (const auto& q : t.poses) p.predicted.push_back({q.x, q.y});
      pairs.push_back(std::move(p));
      return t;
    };
    const auto r = train::open_loop(data, planner);
    json j{{"ade", r.ade}, {"fde", r.fde}, {"scenes", data.size()}, {"policy", a.checkpoint}};
    std::string csv = "scene,ade\n";
    for (std::size_t i = 0; i < data.size(); ++i) csv += data[i].id + "," + fmt("%.6f", r.per_scene[i]) + "\n";
    nc::write_file_atomic(out / "openloop.json", j.dump(2) + "\n");
    nc::write_file_atomic(out / "openloop.csv", csv);
    nc::write_file_atomic(out / "trajectories.json", plot::trajectories_to_json(pairs));
    if (l.model)
      nc::write_file_atomic(out / "attention.json",
                            plot::attention_to_json(train::attention_probe(*l.model, data[0], 1), data[0].id, 1));
    std::printf("open-loop ADE %.4f FDE %.4f over %zu scenes\n", r.ade, r.fde, data.size());
    return kOk;
  }

  world::ExpertPolicy ep;
  world::StationaryPolicy sp;
  std::optional<train::ModelPolicy> mp;
  world::Policy* policy = expert ? static_cast<world::Policy*>(&ep) : stationary ? static_cast<world::Policy*>(&sp) : nullptr;
  if (!policy) {
    mp.emplace(*l.model, data.render());
    policy = &*mp;
  }
  fs::create_directories(out / "rollouts");
  const auto r = train::closed_loop(*policy, data, base, [&](const std::string& id, const world::Rollout& ro) {
    std::ostringstream os;
    world::write_rollout(os, ro);
    nc::write_file_atomic(out / "rollouts" / (id + ".jsonl"), os.str());
  });
  std::string reports;
  for (const auto& rep : r.reports) reports += metrics::report_json(rep) + "\n";
  nc::write_file_atomic(out / "reports.jsonl", reports);
  nc::write_file_atomic(out / "table1.csv", metrics::table1_header() + "\n" + metrics::table1_row(r.reports) + "\n");
  nc::write_file_atomic(out / "closed_loop.csv",
                        metrics::closed_loop_header() + "\n" + metrics::closed_loop_row(r.reports) + "\n");
  std::printf("closed-loop RC %.4f HD-Score %.4f over %zu scenes\n", r.route_completion, r.hd_score, data.size());
  return kOk;
}

// ---- ablate ----

struct AblateArgs {
  std::string matrix, config, out, corpus, eval_corpus;
  std::size_t seeds = 1;
  std::size_t eval_scenes = 0;
};

int cmd_ablate(const AblateArgs& a) {
  const train::TrainConfig base = read_config(a.config);
  const auto rows = train::ablation_rows(a.matrix, base);
  if (a.seeds == 0) throw ConfigError("--seeds must be positive");
  const fs::path corpus = default_corpus(a.corpus, base.corpus);
  const train::Dataset train_data = train::Dataset::load(corpus, base.max_scenes);
  const std::string ec = !a.eval_corpus.empty() ? a.eval_corpus : base.eval_corpus;
  if (ec.empty()) throw ConfigError("ablation needs an evaluation corpus: pass --eval-corpus or set [data] eval_corpus");
  const train::Dataset eval_data = train::Dataset::load(ec, a.eval_scenes ? a.eval_scenes : base.eval_scenes);
  write_manifest(a.out, "ablate " + a.matrix, a.config, base.seed, corpus);

  std::string csv = train::ablation_header() + "\n";
  std::string seeds_csv = "config,seed,ADE,EPDMS\n";
  for (const auto& row : rows) {
    train::AblationResult merged{row.name, 0, {}};
    for (std::size_t k = 0; k < a.seeds; ++k) {
      train::AblationRow seeded = row;
      seeded.cfg.seed = base.seed + k;
      const auto r = train::run_ablation_row(seeded, train_data, eval_data);
      double ep = 0;
      for (const auto& rep : r.reports) ep += rep.epdms;
      seeds_csv += row.name + "," + std::to_string(seeded.cfg.seed) + "," + fmt("%.6f", r.ade) + "," +
                   fmt("%.6f", 100 * ep / static_cast<double>(r.reports.size())) + "\n";
      merged.ade += r.ade / static_cast<double>(a.seeds);
      merged.reports.insert(merged.reports.end(), r.reports.begin(), r.reports.end());
    }
    const std::string line = train::ablation_csv_row(merged);
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    csv += line + "\n";
  }
  nc::write_file_atomic(fs::path(a.out) / (a.matrix + ".csv"), csv);
  nc::write_file_atomic(fs::path(a.out) / (a.matrix + "_seeds.csv"), seeds_csv);
  return kOk;
}

// ---- plot ----

int plot_file(const fs::path& in, const fs::path& out) {
  const std::string text = nc::read_file(in);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) throw ParseError("empty plot input " + in.string(), 1);
  if (text.find("\"attention\"") != std::string::npos) {
    const auto a = plot::attention_from_json(text);
    nc::write_file_atomic(out / "attention.svg", plot::heatmap_svg(a));
    nc::write_file_atomic(out / "attention.csv", plot::heatmap_csv(a));
    return 1;
  }
  if (text.find("\"trajectories\"") != std::string::npos) {
    const auto pairs = plot::trajectories_from_json(text);
    for (const auto& p : pairs) {
      nc::write_file_atomic(out / ("trajectory_" + p.scene + ".svg"), plot::trajectory_svg(p));
      nc::write_file_atomic(out / ("trajectory_" + p.scene + ".csv"), plot::trajectory_csv(p));
    }
    return static_cast<int>(pairs.size());
  }
  std::istringstream is(text);
  const auto log = train::read_log(is);
  nc::write_file_atomic(out / "loss.svg", plot::line_chart_svg("training losses", plot::loss_series(log)));
  nc::write_file_atomic(out / "loss.csv", plot::loss_csv(log));
  return 1;
}

int cmd_plot(const std::string& input, const std::string& out) {
  const fs::path in = input;
  if (!fs::exists(in)) throw DataError("plot input " + input + " does not exist");
  fs::create_directories(out);
  int made = 0;
  if (fs::is_directory(in)) {
    for (const char* name : {"train_log.jsonl", "trajectories.json", "attention.json"})
      if (fs::exists(in / name)) made += plot_file(in / name, out);
    if (made == 0) throw DataError("no plottable files in " + input);
  } else {
    made = plot_file(in, out);
  }
  write_manifest(out, "plot", "", 0, {});
  std::printf("wrote %d plot(s) to %s\n", made, out.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent world-model driving agent: data, training, evaluation and plots"};
  app.set_version_flag("--version", std::string("lwam ") + version());
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate the synthetic scenario corpus with cached teacher features");
  g->add_option("--seed", gen.seed, "First scenario seed")->capture_default_str();
  g->add_option("--count", gen.count, "Number of scenarios")->capture_default_str();
  g->add_option("--difficulty-mix", gen.mix, "Repeating difficulty cycle, e.g. E,M,H,X or E:2,M:1")->capture_default_str();
  g->add_option("--out", gen.out, "Corpus directory (default: $LWAM_CORPUS)");
  g->add_option("--grid-h", gen.grid_h, "Patch rows per view")->capture_default_str();
  g->add_option("--grid-w", gen.grid_w, "Patch columns per view")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model from a config file");
  t->add_option("--config", tr.config, "Config file")->required();
  t->add_option("--out", tr.out, "Run directory")->required();
  t->add_option("--corpus", tr.corpus, "Corpus directory (overrides the config and $LWAM_CORPUS)");
  t->add_flag("--resume", tr.resume, "Continue from the run directory's last checkpoint");
  t->add_option("--stop-after", tr.stop_after, "Stop after this many optimizer steps");
  t->add_flag("--quiet", tr.quiet, "Only print the final line");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Open-loop or closed-loop evaluation");
  e->add_option("--checkpoint", ev.checkpoint, "Run directory, or the built-in policies expert and stationary")
      ->required();
  e->add_option("--corpus", ev.corpus, "Evaluation corpus (default: config eval_corpus or $LWAM_CORPUS)");
  e->add_option("--mode", ev.mode, "openloop or closedloop")->capture_default_str();
  e->add_option("--out", ev.out, "Output directory")->required();
  e->add_option("--config", ev.config, "Config supplying closed-loop settings for the built-in policies");
  e->add_option("--max-scenes", ev.max_scenes, "Use only the first N scenarios");

  AblateArgs ab;
  auto* b = app.add_subcommand("ablate", "Run an ablation matrix and write one CSV row per configuration");
  b->add_option("--matrix", ab.matrix, "table3 or table5")->required();
  b->add_option("--config", ab.config, "Base config")->required();
  b->add_option("--out", ab.out, "Output directory")->required();
  b->add_option("--corpus", ab.corpus, "Training corpus");
  b->add_option("--eval-corpus", ab.eval_corpus, "Held-out corpus");
  b->add_option("--eval-scenes", ab.eval_scenes, "Use only the first N held-out scenarios");
  b->add_option("--seeds", ab.seeds, "Training seeds per row, starting at the config seed")->capture_default_str();

  std::string plot_in, plot_out;
  auto* p = app.add_subcommand("plot", "Render SVG and CSV figures from a training log or evaluation output");
  p->add_option("--input", plot_in, "train_log.jsonl, trajectories.json, attention.json or a directory")->required();
  p->add_option("--out", plot_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForVersion& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kConfig;
  }

  try {
    if (g->parsed()) return cmd_gen_data(gen);
    if (t->parsed()) return cmd_train(tr);
    if (e->parsed()) return cmd_eval(ev);
    if (b->parsed()) return cmd_ablate(ab);
    if (p->parsed()) return cmd_plot(plot_in, plot_out);
  } catch (const ConfigError& err) {
    std::fprintf(stderr, "config error: %s\n", err.what());
    return kConfig;
  } catch (const ParseError& err) {
    std::fprintf(stderr, "parse error: %s\n", err.what());
    return kData;
  } catch (const DataError& err) {
    std::fprintf(stderr, "data error: %s\n", err.what());
    return kData;
  } catch (const NumericalError& err) {
    std::fprintf(stderr, "numerical error: %s\n", err.what());
    return kNumerical;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kOther;
  }
  return kOther;
}
