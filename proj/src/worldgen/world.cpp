#include "lwam/worldgen/world.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "json.hpp"
#include "lwam/errors.hpp"

namespace lwam::world {

namespace {

struct TierParams {
  double kappa_max;
  double route_length;
  double speed_limit;
  int min_obstacles, max_obstacles;
  double light_prob;
};

TierParams tier(Difficulty d) {
  switch (d) {
    case Difficulty::E: return {0.01, 90, 8, 0, 4, 0.0};
    case Difficulty::M: return {0.03, 110, 10, 4, 8, 0.3};
    case Difficulty::H: return {0.05, 130, 11, 8, 12, 0.6};
    case Difficulty::X: return {0.06, 150, 12, 12, 16, 1.0};
  }
  throw DomainError("unknown difficulty");
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::vector<Vec2> make_centerline(std::mt19937_64& rng, const TierParams& p) {
  const double total = p.route_length + kRoadExtension;
  const double heading_bound = std::numbers::pi / 3;
  std::vector<Vec2> pts{{0, 0}};
  double h = 0;
  auto advance = [&](double kappa, int steps) {
    for (int i = 0; i < steps && pts.size() <= static_cast<std::size_t>(total); ++i) {
      const double mid = h + 0.5 * kappa;
      pts.push_back(pts.back() + Vec2{std::cos(mid), std::sin(mid)});
      h += kappa;
    }
  };
  advance(0.0, 20);
  bool arc = true;
  while (pts.size() <= static_cast<std::size_t>(total)) {
    if (arc) {
      double kappa = uniform(rng, 0.4, 1.0) * p.kappa_max;
      double sign = uniform(rng, 0, 1) < 0.5 ? -1.0 : 1.0;
      if (h > heading_bound / 2) sign = -1;
      if (h < -heading_bound / 2) sign = 1;
      int steps = static_cast<int>(uniform(rng, 15, 40));
      // Cap the turn so the road never folds back on itself.
      const double room = sign > 0 ? heading_bound - h : heading_bound + h;
      steps = std::min(steps, static_cast<int>(room / kappa));
      advance(sign * kappa, std::max(steps, 0));
    } else {
      advance(0.0, static_cast<int>(uniform(rng, 15, 35)));
    }
    arc = !arc;
  }
  return pts;
}

}  // namespace

Difficulty parse_difficulty(std::string_view s) {
  if (s == "E") return Difficulty::E;
  if (s == "M") return Difficulty::M;
  if (s == "H") return Difficulty::H;
  if (s == "X") return Difficulty::X;
  throw ConfigError("unknown difficulty '" + std::string(s) + "' (expected E, M, H or X)");
}

const char* to_string(Difficulty d) {
  switch (d) {
    case Difficulty::E: return "E";
    case Difficulty::M: return "M";
    case Difficulty::H: return "H";
    case Difficulty::X: return "X";
  }
  return "?";
}

const char* command_name(int c) {
  static const char* names[] = {"LEFT", "STRAIGHT", "RIGHT", "UNKNOWN"};
  if (c < 0 || c >= kNumCommands) throw DomainError("command index out of range");
  return names[c];
}

bool TrafficLight::red_at(double t) const {
  double phase = std::fmod(t - red_start, cycle);
  if (phase < 0) phase += cycle;
  return phase < red_duration;
}

void WorldSpec::validate() const {
  if (!(lane_half_width > kEgoHalfWidth)) throw DomainError("lane half-width must exceed ego half-width");
  if (!(route_length > 0) || route_length > centerline.length()) throw DomainError("route length outside road");
  if (!centerline.is_simple()) throw DomainError("centerline self-intersects");
  const OrientedBox start{{centerline.points()[0].x, centerline.points()[0].y, centerline.heading_at(0)},
                          kEgoHalfLength, kEgoHalfWidth};
  for (const auto& b : obstacles)
    if (intersects(start, b)) throw DomainError("obstacle covers the route start");
}

void Trajectory::validate(std::size_t expected_count) const {
  if (poses.size() != expected_count)
    throw ShapeError("trajectory has " + std::to_string(poses.size()) + " poses, expected " +
                     std::to_string(expected_count));
  if (!(dt > 0)) throw DomainError("trajectory dt must be positive");
  for (std::size_t i = 1; i < poses.size(); ++i)
    if (std::fabs(poses[i].theta - poses[i - 1].theta) >= std::numbers::pi)
      throw DomainError("trajectory heading jumps by more than pi");
}

WorldSpec generate_world(std::uint64_t seed, Difficulty difficulty) {
  const TierParams p = tier(difficulty);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(difficulty) + 1u};
  std::mt19937_64 rng(seq);

  WorldSpec w;
  w.seed = seed;
  w.difficulty = difficulty;
  w.route_length = p.route_length;
  w.speed_limit = p.speed_limit;
  w.centerline = Polyline(make_centerline(rng, p));

  const int count = std::uniform_int_distribution<int>(p.min_obstacles, p.max_obstacles)(rng);
  const double road_end = w.centerline.length();
  for (int placed = 0, attempts = 0; placed < count && attempts < 1000; ++attempts) {
    Box b;
    b.hx = uniform(rng, 0.5, 2.0);
    b.hy = uniform(rng, 0.5, 2.0);
    const double s = uniform(rng, 10, road_end - 5);
    const double side = uniform(rng, 0, 1) < 0.5 ? -1.0 : 1.0;
    const double extent = std::hypot(b.hx, b.hy);
    double offset, clearance;
    switch (difficulty) {
      case Difficulty::E: offset = 10 + extent + uniform(rng, 0, 15); clearance = 10; break;
      case Difficulty::M: offset = w.lane_half_width + extent + uniform(rng, 1.0, 6.0); clearance = w.lane_half_width + 0.3; break;
      case Difficulty::H: offset = w.lane_half_width + extent + uniform(rng, 0.5, 4.0); clearance = w.lane_half_width + 0.3; break;
      default: offset = w.lane_half_width + extent + uniform(rng, 0.3, 3.0); clearance = w.lane_half_width + 0.3; break;
    }
    const Vec2 c = w.centerline.point_at(s);
    const double h = w.centerline.heading_at(s);
    b.cx = c.x - side * offset * std::sin(h);
    b.cy = c.y + side * offset * std::cos(h);
    if (w.centerline.distance_to(b) < clearance) continue;
    w.obstacles.push_back(b);
    ++placed;
  }
  if (difficulty == Difficulty::X && uniform(rng, 0, 1) < 0.5) {
    const double s = uniform(rng, 50, p.route_length - 20);
    const Vec2 c = w.centerline.point_at(s);
    const double half = uniform(rng, 0.8, 1.5);
    const double lat = uniform(rng, -0.5, 0.5);
    const double h = w.centerline.heading_at(s);
    w.obstacles.push_back({c.x - lat * std::sin(h), c.y + lat * std::cos(h), half, half});
  }
  if (p.light_prob > 0 && uniform(rng, 0, 1) < p.light_prob) {
    TrafficLight l;
    l.s = uniform(rng, 40, p.route_length - 20);
    const double green = uniform(rng, 8, 14);
    l.red_duration = uniform(rng, 4, 8);
    l.cycle = green + l.red_duration;
    l.red_start = uniform(rng, 0, l.cycle);
    w.light = l;
  }
  w.validate();
  return w;
}

int command_at(const WorldSpec& w, double s) {
  constexpr double kLookahead = 10.0;
  constexpr double kThreshold = 15.0 * std::numbers::pi / 180.0;
  if (w.route_length - s < kLookahead) return kUnknown;
  const double dh = wrap_angle(w.centerline.heading_at(s + kLookahead) - w.centerline.heading_at(s));
  if (dh > kThreshold) return kLeft;
  if (dh < -kThreshold) return kRight;
  return kStraight;
}

EgoState start_state(const WorldSpec& w) {
  EgoState e;
  const Vec2 p = w.centerline.point_at(0);
  e.x = p.x;
  e.y = p.y;
  e.theta = w.centerline.heading_at(0);
  e.v = {0, 0};
  e.command = command_at(w, 0);
  return e;
}

std::string world_to_json(const WorldSpec& w) {
  nlohmann::json j;
  j["seed"] = w.seed;
  j["difficulty"] = to_string(w.difficulty);
  j["lane_half_width"] = w.lane_half_width;
  j["route_length"] = w.route_length;
  j["speed_limit"] = w.speed_limit;
  auto& cl = j["centerline"] = nlohmann::json::array();
  for (const auto& p : w.centerline.points()) cl.push_back({p.x, p.y});
  auto& obs = j["obstacles"] = nlohmann::json::array();
  for (const auto& b : w.obstacles) obs.push_back({b.cx, b.cy, b.hx, b.hy});
  if (w.light) {
    j["traffic_light"] = {{"s", w.light->s},
                          {"cycle", w.light->cycle},
                          {"red_start", w.light->red_start},
                          {"red_duration", w.light->red_duration}};
  } else {
    j["traffic_light"] = nullptr;
  }
  return j.dump(1);
}

WorldSpec world_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    WorldSpec w;
    w.seed = j.at("seed").get<std::uint64_t>();
    w.difficulty = parse_difficulty(j.at("difficulty").get<std::string>());
    w.lane_half_width = j.at("lane_half_width").get<double>();
    w.route_length = j.at("route_length").get<double>();
    w.speed_limit = j.at("speed_limit").get<double>();
    std::vector<Vec2> pts;
    for (const auto& p : j.at("centerline")) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    w.centerline = Polyline(std::move(pts));
    for (const auto& b : j.at("obstacles"))
      w.obstacles.push_back({b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()});
    const auto& l = j.at("traffic_light");
    if (!l.is_null()) {
      w.light = TrafficLight{l.at("s").get<double>(), l.at("cycle").get<double>(), l.at("red_start").get<double>(),
                             l.at("red_duration").get<double>()};
    }
    return w;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed world spec: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("malformed world spec: ") + e.what());
  }
}

}  // namespace lwam::world
