#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "lwam/campipe/camera.hpp"
#include "lwam/errors.hpp"
#include "lwam/numcore/io.hpp"
#include "lwam/worldgen/closed_loop.hpp"
#include "lwam/worldgen/corpus.hpp"
#include "lwam/worldgen/render.hpp"
#include "lwam/worldgen/sim.hpp"
#include "world_fixtures.hpp"

using namespace lwam;
using namespace lwam::world;
using lwam::testing::ego_at;
using lwam::testing::straight_world;
namespace fs = std::filesystem;

namespace {

const Difficulty kTiers[] = {Difficulty::E, Difficulty::M, Difficulty::H, Difficulty::X};

// Independent ray caster: explicit face-plane intersections and a brute-force corridor test.
struct OracleHit {
  double depth = 1;
  int semantic = kBackground;
};

OracleHit oracle_cast(const WorldSpec& w, const EgoState& ego, int m, const RenderConfig& cfg, int i, int j) {
  const cam::Intrinsics K = view_intrinsics();
  const cam::Extrinsics E = view_extrinsics(ego, m);
  const cam::Pixel px{(j + 0.5) * 448.0 / cfg.grid_w, (i + 0.5) * 224.0 / cfg.grid_h};
  const cam::Vec3 o = E.translation;
  const cam::Vec3 p1 = cam::unproject(K, E.matrix(), px, 1.0);
  const cam::Vec3 d{p1[0] - o[0], p1[1] - o[1], p1[2] - o[2]};  // unit camera depth per step

  double best = std::numeric_limits<double>::infinity();
  for (const auto& b : w.obstacles) {
    const double lo[3] = {b.cx - b.hx, b.cy - b.hy, 0}, hi[3] = {b.cx + b.hx, b.cy + b.hy, kObstacleHeight};
    for (int axis = 0; axis < 3; ++axis) {
      if (d[axis] == 0) continue;
      for (double plane : {lo[axis], hi[axis]}) {
        const double t = (plane - o[axis]) / d[axis];
        if (t <= 0) continue;
        bool inside = true;
        for (int k = 0; k < 3; ++k) {
          if (k == axis) continue;
          const double c = o[k] + t * d[k];
          inside = inside && c >= lo[k] - 1e-12 && c <= hi[k] + 1e-12;
        }
        if (inside) best = std::min(best, t);
      }
    }
  }
  const double tg = d[2] < 0 ? -o[2] / d[2] : std::numeric_limits<double>::infinity();
  OracleHit h;
  if (best < tg) {
    if (best <= cfg.far_plane) h = {best / cfg.far_plane, kObstacle};
    return h;
  }
  if (tg > cfg.far_plane) return h;
  const Vec2 g{o[0] + tg * d[0], o[1] + tg * d[1]};
  double dist = std::numeric_limits<double>::infinity();
  const auto& pts = w.centerline.points();
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    const Vec2 ab = pts[k + 1] - pts[k];
    double f = dot(g - pts[k], ab) / dot(ab, ab);
    f = std::clamp(f, 0.0, 1.0);
    dist = std::min(dist, norm(g - (pts[k] + f * ab)));
  }
  const double s = w.centerline.project(g).s;
  if (dist <= w.lane_half_width && s >= 0 && s <= w.centerline.length()) {
    h.depth = tg / cfg.far_plane;
    const bool stop_line = w.light && w.light->red_at(0.0) && std::fabs(s - w.light->s) <= 0.3;
    h.semantic = dist >= w.lane_half_width - 0.2 || stop_line ? kMarking : kRoad;
  }
  return h;
}

int semantic_of(const View& v, int p) {
  for (int c = 0; c < 4; ++c)
    if (v.raster[static_cast<std::size_t>(p * kRasterChannels + 1 + c)] == 1.0) return c;
  return -1;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = nc::read_file(e.path());
  return files;
}

}  // namespace

TEST_CASE("generate_world is deterministic and valid") {
  for (auto d : kTiers) {
    for (std::uint64_t seed : {0ULL, 1ULL, 77ULL, 123456789ULL}) {
      const WorldSpec a = generate_world(seed, d);
      const WorldSpec b = generate_world(seed, d);
      CHECK(world_to_json(a) == world_to_json(b));
      CHECK(a.centerline.is_simple());
      CHECK(a.lane_half_width > kEgoHalfWidth);
      CHECK(a.centerline.length() >= a.route_length);
      CHECK_NOTHROW(a.validate());
      const WorldSpec back = world_from_json(world_to_json(a));
      CHECK(world_to_json(back) == world_to_json(a));
    }
  }
  CHECK(world_to_json(generate_world(1, Difficulty::M)) != world_to_json(generate_world(2, Difficulty::M)));
}

TEST_CASE("easy worlds keep every obstacle at least 10 m from the route") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const WorldSpec w = generate_world(seed, Difficulty::E);
    for (const auto& b : w.obstacles) CHECK(w.centerline.distance_to(b) >= 10.0);
    CHECK(!w.light);
  }
}

TEST_CASE("obstacle count is nondecreasing from E to X") {
  double mean[4] = {0, 0, 0, 0};
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::size_t prev = 0;
    for (int t = 0; t < 4; ++t) {
      const std::size_t n = generate_world(seed, kTiers[t]).obstacles.size();
      CHECK(n >= prev);
      prev = n;
      mean[t] += static_cast<double>(n) / 100;
    }
  }
  CHECK(mean[0] < mean[1]);
  CHECK(mean[1] < mean[2]);
  CHECK(mean[2] < mean[3]);
}

TEST_CASE("command taxonomy follows the route geometry") {
  const WorldSpec straight = straight_world();
  CHECK(command_at(straight, 20) == kStraight);
  CHECK(command_at(straight, 141) == kUnknown);
  // A road that turns left by 90 degrees over a 10 m arc starting at s = 30.
  WorldSpec w;
  std::vector<Vec2> pts{{0, 0}};
  double h = 0;
  for (int i = 0; i < 120; ++i) {
    const double k = (i >= 30 && i < 40) ? std::numbers::pi / 20 : 0.0;
    pts.push_back(pts.back() + Vec2{std::cos(h + k / 2), std::sin(h + k / 2)});
    h += k;
  }
  w.centerline = Polyline(pts);
  w.route_length = 100;
  CHECK(command_at(w, 25) == kLeft);
  CHECK(command_at(w, 5) == kStraight);
  WorldSpec mirrored = w;
  for (auto& p : pts) p.y = -p.y;
  mirrored.centerline = Polyline(pts);
  CHECK(command_at(mirrored, 25) == kRight);
  CHECK_THROWS_AS(command_name(4), DomainError);
}

TEST_CASE("rasters are well formed and agree with an independent ray caster") {
  const RenderConfig cfg{14, 28, 50};
  for (auto d : kTiers) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const WorldSpec w = generate_world(seed, d);
      for (double s : {0.0, 30.0, 60.0}) {
        const Vec2 c = w.centerline.point_at(s);
        const EgoState ego = ego_at(c.x, c.y, w.centerline.heading_at(s));
        const auto views = render_views(w, ego, cfg);
        for (int m = 0; m < kNumViews; ++m) {
          const View& v = views[static_cast<std::size_t>(m)];
          REQUIRE(v.raster.size() == static_cast<std::size_t>(cfg.patches() * kRasterChannels));
          for (int i = 0; i < cfg.grid_h; ++i) {
            for (int j = 0; j < cfg.grid_w; ++j) {
              const int p = i * cfg.grid_w + j;
              const double depth = v.raster[static_cast<std::size_t>(p * kRasterChannels)];
              CHECK(depth > 0);
              CHECK(depth <= 1);
              double sum = 0;
              for (int ch = 1; ch < kRasterChannels; ++ch) sum += v.raster[static_cast<std::size_t>(p * kRasterChannels + ch)];
              CHECK(sum == 1.0);
              const OracleHit o = oracle_cast(w, ego, m, cfg, i, j);
              CHECK(std::fabs(o.depth - depth) < 1e-9);
              CHECK(o.semantic == semantic_of(v, p));
            }
          }
        }
      }
    }
  }
}

TEST_CASE("empty world renders the far plane everywhere") {
  const WorldSpec w = straight_world();
  const EgoState ego = ego_at(50, 55, std::numbers::pi / 2);
  for (const auto& v : render_views(w, ego)) {
    for (int p = 0; p < 14 * 28; ++p) {
      CHECK(v.raster[static_cast<std::size_t>(p * kRasterChannels)] == 1.0);
      CHECK(semantic_of(v, p) == kBackground);
    }
  }
  CHECK_THROWS_AS(render_views(w, ego_at(50, 100, 0)), DomainError);
}

TEST_CASE("obstacle 5 m ahead fills the centre patches of the front view") {
  // Near face at x = 15 for an ego at x = 10.
  const WorldSpec w = straight_world(200, 150, {Box{16, 0, 1, 1.5}});
  const EgoState ego = ego_at(10, 0, 0);
  const RenderConfig cfg{14, 28, 50};
  const View front = render_views(w, ego, cfg)[1];
  // Row 6 looks slightly upward and clears the 1.5 m box top; row 7 is the first centre row below the horizon.
  for (int j : {13, 14}) {
    const int p = 7 * 28 + j;
    CHECK(front.raster[static_cast<std::size_t>(p * kRasterChannels)] == doctest::Approx(5.0 / 50).epsilon(1e-12));
    CHECK(semantic_of(front, p) == kObstacle);
  }
}

TEST_CASE("left and right views of a mirrored world are mirror images") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ux(12, 45), uy(-8, 8), uh(0.4, 1.8);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Box> obs, refl;
    for (int k = 0; k < 6; ++k) {
      Box b{ux(rng), uy(rng), uh(rng), uh(rng)};
      obs.push_back(b);
      b.cy = -b.cy;
      refl.push_back(b);
    }
    const WorldSpec a = straight_world(200, 150, obs);
    const WorldSpec b = straight_world(200, 150, refl);
    const EgoState ego = ego_at(5, 0, 0);
    const RenderConfig cfg{14, 28, 50};
    const auto va = render_views(a, ego, cfg);
    const auto vb = render_views(b, ego, cfg);
    for (auto [ma, mb] : {std::pair{0, 2}, std::pair{2, 0}, std::pair{1, 1}}) {
      for (int i = 0; i < cfg.grid_h; ++i)
        for (int j = 0; j < cfg.grid_w; ++j)
          for (int c = 0; c < kRasterChannels; ++c) {
            const double x = va[static_cast<std::size_t>(ma)].raster[static_cast<std::size_t>((i * cfg.grid_w + j) * kRasterChannels + c)];
            const double y = vb[static_cast<std::size_t>(mb)].raster[static_cast<std::size_t>((i * cfg.grid_w + cfg.grid_w - 1 - j) * kRasterChannels + c)];
            CHECK(std::fabs(x - y) < 1e-12);
          }
    }
  }
}

TEST_CASE("stop line is painted only during the red phase") {
  WorldSpec w = straight_world();
  w.light = TrafficLight{20, 10, 0, 5};
  // Patch row 9 meets the ground 8.4 m ahead of the camera, on the stop line.
  const EgoState ego = ego_at(11.6, 0, 0);
  const RenderConfig cfg{14, 28, 50};
  auto count_markings = [&](double t) {
    int n = 0;
    const View v = render_views(w, ego, cfg, t)[1];
    for (int p = 0; p < cfg.patches(); ++p) n += semantic_of(v, p) == kMarking;
    return n;
  };
  CHECK(w.light->red_at(1.0));
  CHECK_FALSE(w.light->red_at(7.0));
  CHECK(count_markings(1.0) > count_markings(7.0));
}

TEST_CASE("teacher features") {
  const auto& lift = teacher_lift();
  SUBCASE("lift has orthonormal columns") {
    for (int a = 0; a < kTeacherRaw; ++a)
      for (int b = 0; b < kTeacherRaw; ++b) {
        double s = 0;
        for (int r = 0; r < kTeacherDim; ++r) s += lift[static_cast<std::size_t>(r * kTeacherRaw + a)] * lift[static_cast<std::size_t>(r * kTeacherRaw + b)];
        CHECK(std::fabs(s - (a == b ? 1.0 : 0.0)) < 1e-12);
      }
  }
  const WorldSpec w = generate_world(3, Difficulty::H);
  const Vec2 c = w.centerline.point_at(40);
  const EgoState ego = ego_at(c.x, c.y, w.centerline.heading_at(40));
  const RenderConfig cfg{14, 28, 50};
  SUBCASE("deterministic and norm preserving") {
    for (int m = 0; m < kNumViews; ++m) {
      const auto f1 = teacher_features(w, ego, m, cfg);
      const auto f2 = teacher_features(w, ego, m, cfg);
      CHECK(f1 == f2);
      REQUIRE(f1.size() == static_cast<std::size_t>(cfg.patches() * kTeacherDim));
      const auto hits = cast_view(w, ego, m, cfg);
      for (int p = 0; p < cfg.patches(); ++p) {
        const auto raw = teacher_raw(ego, hits[static_cast<std::size_t>(p)]);
        double nr = 0, nf = 0;
        for (double x : raw) nr += x * x;
        for (int r = 0; r < kTeacherDim; ++r) nf += f1[static_cast<std::size_t>(p * kTeacherDim + r)] * f1[static_cast<std::size_t>(p * kTeacherDim + r)];
        CHECK(std::fabs(std::sqrt(nr) - std::sqrt(nf)) < 1e-9);
      }
    }
  }
  SUBCASE("moving one obstacle only changes rows whose rays meet it") {
    WorldSpec base = straight_world(200, 150, {Box{20, 6, 1, 1}, Box{25, -5, 1.5, 1}});
    const EgoState e0 = ego_at(5, 0, 0);
    WorldSpec moved = base;
    moved.obstacles[0].cx += 2.0;
    const WorldSpec only_before = straight_world(200, 150, {base.obstacles[0]});
    const WorldSpec only_after = straight_world(200, 150, {moved.obstacles[0]});
    int changed = 0;
    for (int m = 0; m < kNumViews; ++m) {
      const auto fa = teacher_features(base, e0, m, cfg);
      const auto fb = teacher_features(moved, e0, m, cfg);
      const auto ha = cast_view(only_before, e0, m, cfg);
      const auto hb = cast_view(only_after, e0, m, cfg);
      for (int p = 0; p < cfg.patches(); ++p) {
        const bool touches = ha[static_cast<std::size_t>(p)].semantic == kObstacle || hb[static_cast<std::size_t>(p)].semantic == kObstacle;
        bool same = true;
        for (int r = 0; r < kTeacherDim; ++r)
          same = same && fa[static_cast<std::size_t>(p * kTeacherDim + r)] == fb[static_cast<std::size_t>(p * kTeacherDim + r)];
        if (!touches) CHECK(same);
        changed += !same;
      }
    }
    CHECK(changed > 0);
  }
}

TEST_CASE("expert policy") {
  SUBCASE("constant velocity on an empty straight road") {
    WorldSpec w = straight_world();
    w.speed_limit = 5;
    const Trajectory t = expert_policy(w, ego_at(10, 0, 0, 5));
    REQUIRE(t.poses.size() == kTrajPoses);
    CHECK(t.dt == kTrajDt);
    for (int k = 0; k < kTrajPoses; ++k) {
      CHECK(std::fabs(t.poses[static_cast<std::size_t>(k)].x - 5.0 * (k + 1) * 0.5) < 1e-9);
      CHECK(std::fabs(t.poses[static_cast<std::size_t>(k)].y) < 1e-12);
      CHECK(std::fabs(t.poses[static_cast<std::size_t>(k)].theta) < 1e-12);
    }
    CHECK_NOTHROW(t.validate(kTrajPoses));
  }
  SUBCASE("blocking obstacle 8 m ahead brings the plan to rest") {
    const WorldSpec w = straight_world(200, 150, {Box{19, 0, 1, 1}});  // near face 8 m ahead of x = 10
    const Trajectory t = expert_policy(w, ego_at(10, 0, 0, 5));
    const auto& last = t.poses.back();
    const auto& prev = t.poses[t.poses.size() - 2];
    CHECK(std::hypot(last.x - prev.x, last.y - prev.y) / t.dt < 1e-9);
    CHECK(10 + last.x + kEgoHalfLength < 18.0);
  }
  SUBCASE("off the drivable area") {
    CHECK_THROWS_AS(expert_policy(straight_world(), ego_at(10, 2.5, 0, 5)), DomainError);
  }
  SUBCASE("stops for a red light and waits for green") {
    WorldSpec w = straight_world();
    w.light = TrafficLight{60, 20, 0, 10};  // red for t in [0, 10)
    ExpertPolicy expert;
    RolloutConfig rc;
    rc.max_time = 30;
    const Rollout r = run_closed_loop(w, ego_at(0, 0, 0, 6), expert, rc);
    for (const auto& rec : r.records) {
      const double front = rec.ego.x + kEgoHalfLength;
      if (rec.t < 10) CHECK(front < 60);
    }
    CHECK(r.records.back().ego.x > 60);
  }
}

TEST_CASE("step_sim") {
  SUBCASE("zero trajectory decelerates to rest") {
    const WorldSpec w = straight_world();
    EgoState e = ego_at(10, 0, 0, 6);
    StationaryPolicy stop;
    double prev_v = e.v[0];
    for (int i = 0; i < 100; ++i) {
      e = step_sim(w, e, stop.plan(w, e, 0).trajectory, 0.1);
      CHECK(e.v[0] <= prev_v + 1e-12);
      prev_v = e.v[0];
    }
    CHECK(e.v[0] == 0.0);
  }
  SUBCASE("tracking the expert on a straight road") {
    const WorldSpec w = straight_world();
    EgoState e = ego_at(0, 0, 0, 6);
    Trajectory plan;
    for (int i = 0; i < 50; ++i) {
      if (i % 5 == 0) plan = expert_policy(w, e, i * 0.1);
      e = step_sim(w, e, plan, 0.1);
      CHECK(std::fabs(e.y) < 0.1);
    }
    CHECK(e.x > 20);
  }
  SUBCASE("halving dt and doubling steps converges to the same pose") {
    const WorldSpec w = generate_world(4, Difficulty::H);
    EgoState e0 = start_state(w);
    e0.y += 0.3;
    const Trajectory plan = expert_policy(w, e0);
    EgoState a = e0, b = e0;
    for (int i = 0; i < 50; ++i) a = step_sim(w, a, plan, 0.1);
    for (int i = 0; i < 100; ++i) b = step_sim(w, b, plan, 0.05);
    CHECK(std::hypot(a.x - b.x, a.y - b.y) < 0.05);
  }
  SUBCASE("bounds") {
    const WorldSpec w = generate_world(9, Difficulty::X);
    ExpertPolicy expert;
    const Rollout r = run_closed_loop(w, expert);
    for (const auto& rec : r.records) {
      CHECK(std::hypot(rec.ego.v[0], rec.ego.v[1]) <= kMaxSpeed);
      CHECK(std::hypot(rec.ego.a[0], rec.ego.a[1]) <= kMaxAccel + 1e-9);
    }
  }
}

TEST_CASE("expert closed loop on easy worlds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const WorldSpec w = generate_world(seed, Difficulty::E);
    ExpertPolicy expert;
    const Rollout r = run_closed_loop(w, expert);
    CHECK(r.termination == Termination::kRouteComplete);
    for (const auto& rec : r.records) {
      CHECK_FALSE(collides(w, rec.ego));
      CHECK(w.centerline.project({rec.ego.x, rec.ego.y}).distance <= w.lane_half_width);
    }
    const Rollout again = run_closed_loop(w, expert);
    std::ostringstream s1, s2;
    write_rollout(s1, r);
    write_rollout(s2, again);
    CHECK(s1.str() == s2.str());
  }
}

TEST_CASE("rollout log round trip and parse errors") {
  const WorldSpec w = generate_world(2, Difficulty::M);
  ExpertPolicy expert;
  const Rollout r = run_closed_loop(w, expert);
  std::ostringstream out;
  write_rollout(out, r);
  std::istringstream in(out.str());
  const Rollout back = read_rollout(in);
  REQUIRE(back.records.size() == r.records.size());
  CHECK(back.termination == r.termination);
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    CHECK(back.records[i].ego.x == r.records[i].ego.x);
    CHECK(back.records[i].candidates_hash == r.records[i].candidates_hash);
    CHECK(back.records[i].plan.poses.size() == r.records[i].plan.poses.size());
  }

  std::string text = out.str();
  const auto second = text.find('\n') + 1;
  text.insert(second, "{not json\n");
  std::istringstream bad(text);
  try {
    read_rollout(bad);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  std::istringstream missing("{\"t\": 0}\n");
  CHECK_THROWS_AS(read_rollout(missing), ParseError);
}

TEST_CASE("corpus generation is idempotent and resumable") {
  const fs::path root = fs::temp_directory_path() / "lwam_test_corpus";
  fs::remove_all(root);
  GenDataOptions opts;
  opts.seed = 100;
  opts.count = 4;
  opts.render = {7, 14, 50};
  const auto first = generate_corpus(root, opts);
  CHECK(first.generated == 4);
  CHECK(list_scenarios(root).size() == 4);
  const auto before = snapshot(root);

  const auto rerun = generate_corpus(root, opts);
  CHECK(rerun.generated == 0);
  CHECK(rerun.skipped == 4);
  CHECK(snapshot(root) == before);

  fs::remove(root / scenario_dirname(2) / "meta");
  const auto resumed = generate_corpus(root, opts);
  CHECK(resumed.generated == 1);
  CHECK(snapshot(root) == before);

  const Scenario sc = read_scenario(root / scenario_dirname(1));
  CHECK(sc.seed == 101);
  CHECK(sc.difficulty == Difficulty::M);
  for (const auto& f : sc.frames) {
    for (int m = 0; m < kNumViews; ++m) {
      const auto cached = nc::load_tensor(teacher_path(root / scenario_dirname(1), sc.seed, f.rel, m));
      const auto fresh = teacher_features(sc.world, f.ego, m, sc.render, f.time);
      REQUIRE(cached.numel() == fresh.size());
      CHECK(std::equal(fresh.begin(), fresh.end(), cached.data().begin()));
      const auto raster = nc::load_tensor(raster_path(root / scenario_dirname(1), f.rel, m));
      CHECK(raster.shape() == nc::Shape{98, kRasterChannels});
    }
  }
  const auto& anchor = sc.frame(0);
  const Trajectory expert = expert_policy(sc.world, anchor.ego, sc.anchor_time);
  for (int k = 0; k < kTrajPoses; ++k) CHECK(expert.poses[static_cast<std::size_t>(k)].x == sc.expert.poses[static_cast<std::size_t>(k)].x);

  opts.seed = 7;
  CHECK_THROWS_AS(generate_corpus(root, opts), DataError);
  fs::remove_all(root);
  CHECK_THROWS_AS(list_scenarios(root), DataError);
}

TEST_CASE("difficulty mix parsing") {
  CHECK(parse_difficulty_mix("E,M").size() == 2);
  const auto w = parse_difficulty_mix("E:2, X:1");
  REQUIRE(w.size() == 3);
  CHECK(w[0] == Difficulty::E);
  CHECK(w[2] == Difficulty::X);
  CHECK_THROWS_AS(parse_difficulty_mix("Q"), ConfigError);
  CHECK_THROWS_AS(parse_difficulty_mix(""), ConfigError);
}
