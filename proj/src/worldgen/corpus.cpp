#include "lwam/worldgen/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "json.hpp"
#include "lwam/errors.hpp"
#include "lwam/numcore/io.hpp"
#include "lwam/worldgen/closed_loop.hpp"

namespace fs = std::filesystem;

namespace lwam::world {

namespace {

using nlohmann::json;

json ego_json(const EgoState& e) {
  return {{"x", e.x},       {"y", e.y},       {"theta", e.theta},         {"v", {e.v[0], e.v[1]}},
          {"a", {e.a[0], e.a[1]}}, {"command", e.command}, {"curvature", e.curvature}};
}

EgoState ego_from(const json& j) {
  EgoState e;
  e.x = j.at("x").get<double>();
  e.y = j.at("y").get<double>();
  e.theta = j.at("theta").get<double>();
  e.v = {j.at("v").at(0).get<double>(), j.at("v").at(1).get<double>()};
  e.a = {j.at("a").at(0).get<double>(), j.at("a").at(1).get<double>()};
  e.command = j.at("command").get<int>();
  e.curvature = j.at("curvature").get<double>();
  if (e.command < 0 || e.command >= kNumCommands) throw DataError("command out of range");
  return e;
}

struct Meta {
  std::uint64_t seed = 0;
  Difficulty difficulty = Difficulty::E;
  RenderConfig render;
  double anchor_time = 0;
};

std::string meta_text(const Scenario& s) {
  std::ostringstream os;
  os.precision(17);
  os << "seed " << s.seed << "\n";
  os << "difficulty " << to_string(s.difficulty) << "\n";
  os << "frames";
  for (int r : kStoredFrames) os << ' ' << r;
  os << "\n";
  os << "dt " << kFrameDt << "\n";
  os << "grid " << s.render.grid_h << ' ' << s.render.grid_w << "\n";
  os << "far_plane " << s.render.far_plane << "\n";
  os << "anchor_time " << s.anchor_time << "\n";
  return os.str();
}

Meta parse_meta(const fs::path& path) {
  std::istringstream in(nc::read_file(path));
  Meta m;
  std::string line;
  std::size_t lineno = 0;
  bool have_seed = false, have_grid = false;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    bool ok = true;
    if (key == "seed") {
      ok = static_cast<bool>(ls >> m.seed);
      have_seed = ok;
    } else if (key == "difficulty") {
      std::string d;
      ok = static_cast<bool>(ls >> d);
      if (ok) m.difficulty = parse_difficulty(d);
    } else if (key == "frames") {
      std::vector<int> frames;
      for (int r; ls >> r;) frames.push_back(r);
      if (frames != kStoredFrames) throw ParseError(path.string() + ": unexpected frame list", lineno);
    } else if (key == "dt") {
      double dt = 0;
      ok = static_cast<bool>(ls >> dt) && dt == kFrameDt;
    } else if (key == "grid") {
      ok = static_cast<bool>(ls >> m.render.grid_h >> m.render.grid_w);
      have_grid = ok;
    } else if (key == "far_plane") {
      ok = static_cast<bool>(ls >> m.render.far_plane);
    } else if (key == "anchor_time") {
      ok = static_cast<bool>(ls >> m.anchor_time);
    }
    if (!ok) throw ParseError(path.string() + ": bad value for '" + key + "'", lineno);
  }
  if (!have_seed || !have_grid) throw DataError(path.string() + ": meta lacks seed or grid");
  return m;
}

std::string rel_tag(int rel) { return std::to_string(rel); }

}  // namespace

const FrameRecord& Scenario::frame(int rel) const {
  for (const auto& f : frames)
    if (f.rel == rel) return f;
  throw DataError("scenario has no frame " + std::to_string(rel));
}

Scenario build_scenario(std::uint64_t seed, Difficulty difficulty, const RenderConfig& render) {
  Scenario sc;
  sc.seed = seed;
  sc.difficulty = difficulty;
  sc.render = render;
  sc.world = generate_world(seed, difficulty);

  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x5747u};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u(0, 1);
  EgoState start = start_state(sc.world);
  const double lat = (u(rng) - 0.5) * 1.2;
  const double h = start.theta;
  start.x -= lat * std::sin(h);
  start.y += lat * std::cos(h);
  start.theta = wrap_angle(h + (u(rng) - 0.5) * 0.1);
  const double from_rest = u(rng);
  const double speed = u(rng);
  start.v = {from_rest < 0.25 ? 0.0 : speed * sc.world.speed_limit, 0};

  ExpertPolicy expert;
  RolloutConfig rc;
  rc.max_time = time_budget(sc.world);
  const Rollout ro = run_closed_loop(sc.world, start, expert, rc);
  const double t_end = ro.records.back().t;
  const double first = -kStoredFrames.front() * kFrameDt;
  const double last = t_end - kStoredFrames.back() * kFrameDt;
  const long n_anchor = static_cast<long>(std::floor((last - first) / kFrameDt + 1e-9)) + 1;
  if (n_anchor < 1) throw DomainError("expert rollout too short to place an anchor frame");
  const long pick = std::uniform_int_distribution<long>(0, n_anchor - 1)(rng);
  sc.anchor_time = first + static_cast<double>(pick) * kFrameDt;

  for (int rel : kStoredFrames) {
    FrameRecord f;
    f.rel = rel;
    f.time = sc.anchor_time + rel * kFrameDt;
    const auto idx = static_cast<std::size_t>(std::lround(f.time / rc.dt_sim));
    f.ego = ro.records.at(idx).ego;
    for (int m = 0; m < kNumViews; ++m) {
      f.K[static_cast<std::size_t>(m)] = view_intrinsics();
      f.cam_to_world[static_cast<std::size_t>(m)] = view_extrinsics(f.ego, m);
    }
    sc.frames.push_back(f);
  }
  sc.expert = expert_policy(sc.world, sc.frame(0).ego, sc.anchor_time);
  return sc;
}

std::string scenario_dirname(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%05zu", index);
  return buf;
}

fs::path raster_path(const fs::path& dir, int rel, int view) {
  return dir / ("raster_f" + rel_tag(rel) + "_v" + std::to_string(view) + ".lwt");
}

fs::path teacher_path(const fs::path& dir, std::uint64_t seed, int rel, int view) {
  return dir / ("teacher_s" + std::to_string(seed) + "_f" + rel_tag(rel) + "_v" + std::to_string(view) + ".lwt");
}

void write_scenario(const fs::path& dir, const Scenario& s) {
  fs::create_directories(dir);
  const auto S = static_cast<std::size_t>(s.render.patches());
  json sample;
  sample["anchor_time"] = s.anchor_time;
  auto& frames = sample["frames"] = json::array();
  for (const auto& f : s.frames) {
    json jf;
    jf["rel"] = f.rel;
    jf["time"] = f.time;
    jf["ego"] = ego_json(f.ego);
    auto& views = jf["views"] = json::array();
    for (int m = 0; m < kNumViews; ++m) {
      const auto& K = f.K[static_cast<std::size_t>(m)];
      const auto& E = f.cam_to_world[static_cast<std::size_t>(m)];
      views.push_back({{"K", {K.fx, K.fy, K.cx, K.cy}}, {"R", E.rotation}, {"t", E.translation}});
    }
    frames.push_back(jf);

    const auto rendered = render_views(s.world, f.ego, s.render, f.time);
    for (int m = 0; m < kNumViews; ++m) {
      nc::save_tensor(raster_path(dir, f.rel, m),
                      nc::Tensor::from({S, kRasterChannels}, rendered[static_cast<std::size_t>(m)].raster));
      nc::save_tensor(teacher_path(dir, s.seed, f.rel, m),
                      nc::Tensor::from({S, kTeacherDim}, teacher_features(s.world, f.ego, m, s.render, f.time)));
    }
  }
  auto& poses = sample["expert"]["poses"] = json::array();
  for (const auto& p : s.expert.poses) poses.push_back({p.x, p.y, p.theta});
  sample["expert"]["dt"] = s.expert.dt;
  sample["expert"]["origin"] = {s.expert.origin.x, s.expert.origin.y, s.expert.origin.theta};
  auto& cmds = sample["commands"] = json::array();
  for (const auto& f : s.frames) cmds.push_back(f.ego.command);

  nc::write_file_atomic(dir / "spec.json", world_to_json(s.world));
  nc::write_file_atomic(dir / "sample.json", sample.dump(1));
  nc::write_file_atomic(dir / "meta", meta_text(s));
}

bool scenario_complete(const fs::path& dir) { return fs::exists(dir / "meta"); }

Scenario read_scenario(const fs::path& dir) {
  if (!scenario_complete(dir)) throw DataError(dir.string() + " is not a complete scenario; run gen-data");
  const Meta meta = parse_meta(dir / "meta");
  Scenario s;
  s.seed = meta.seed;
  s.difficulty = meta.difficulty;
  s.render = meta.render;
  s.anchor_time = meta.anchor_time;
  s.world = world_from_json(nc::read_file(dir / "spec.json"));
  try {
    const auto j = json::parse(nc::read_file(dir / "sample.json"));
    for (const auto& jf : j.at("frames")) {
      FrameRecord f;
      f.rel = jf.at("rel").get<int>();
      f.time = jf.at("time").get<double>();
      f.ego = ego_from(jf.at("ego"));
      const auto& views = jf.at("views");
      if (views.size() != kNumViews) throw DataError("scenario frame must have three views");
      for (int m = 0; m < kNumViews; ++m) {
        const auto& v = views.at(static_cast<std::size_t>(m));
        const auto k = v.at("K").get<std::vector<double>>();
        if (k.size() != 4) throw DataError("intrinsics need four values");
        f.K[static_cast<std::size_t>(m)] = {k[0], k[1], k[2], k[3]};
        f.cam_to_world[static_cast<std::size_t>(m)].rotation = v.at("R").get<cam::Mat3>();
        f.cam_to_world[static_cast<std::size_t>(m)].translation = v.at("t").get<cam::Vec3>();
      }
      s.frames.push_back(f);
    }
    const auto& ex = j.at("expert");
    s.expert.dt = ex.at("dt").get<double>();
    const auto o = ex.at("origin").get<std::vector<double>>();
    if (o.size() != 3) throw DataError("expert origin needs three values");
    s.expert.origin = {o[0], o[1], o[2]};
    for (const auto& p : ex.at("poses"))
      s.expert.poses.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
  } catch (const json::exception& e) {
    throw DataError(dir.string() + "/sample.json: " + e.what());
  }
  std::vector<int> rels;
  for (const auto& f : s.frames) rels.push_back(f.rel);
  if (rels != kStoredFrames) throw DataError(dir.string() + ": frame list does not match the corpus layout");
  s.expert.validate(kTrajPoses);
  return s;
}

std::vector<Difficulty> parse_difficulty_mix(const std::string& text) {
  std::vector<Difficulty> mix;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
    if (item.empty()) continue;
    int weight = 1;
    const auto colon = item.find(':');
    if (colon != std::string::npos) {
      try {
        weight = std::stoi(item.substr(colon + 1));
      } catch (const std::exception&) {
        throw ConfigError("bad weight in difficulty mix '" + item + "'");
      }
      if (weight < 0) throw ConfigError("negative weight in difficulty mix");
      item = item.substr(0, colon);
    }
    const Difficulty d = parse_difficulty(item);
    for (int i = 0; i < weight; ++i) mix.push_back(d);
  }
  if (mix.empty()) throw ConfigError("difficulty mix is empty");
  return mix;
}

GenDataResult generate_corpus(const fs::path& root, const GenDataOptions& opts) {
  if (opts.mix.empty()) throw ConfigError("difficulty mix is empty");
  fs::create_directories(root);
  GenDataResult res;
  for (std::size_t i = 0; i < opts.count; ++i) {
    const fs::path dir = root / scenario_dirname(i);
    const std::uint64_t seed = opts.seed + i;
    const Difficulty d = opts.mix[i % opts.mix.size()];
    if (scenario_complete(dir)) {
      const Meta m = parse_meta(dir / "meta");
      if (m.seed != seed || m.difficulty != d || m.render.grid_h != opts.render.grid_h ||
          m.render.grid_w != opts.render.grid_w)
        throw DataError(dir.string() + " was generated with different settings");
      ++res.skipped;
      continue;
    }
    write_scenario(dir, build_scenario(seed, d, opts.render));
    ++res.generated;
  }
  return res;
}

std::vector<fs::path> list_scenarios(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("corpus directory " + root.string() + " does not exist; run gen-data");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && e.path().filename().string().rfind("scene_", 0) == 0) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace lwam::world
