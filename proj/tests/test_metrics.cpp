#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>
#include <sstream>

#include "json.hpp"
#include "lwam/errors.hpp"
#include "lwam/metrics/metrics.hpp"
#include "world_fixtures.hpp"

using namespace lwam;
using metrics::SubScores;

namespace {

double hand_epdms(const SubScores& s) {
  const double gate = s.nc * s.dac * s.ddc * s.tlc;
  const double weighted = 5.0 * s.ep + 5.0 * s.ttc + 2.0 * s.lk + 2.0 * s.hc + 2.0 * s.ec;
  return gate * weighted / 16.0;
}

double hand_hd(const SubScores& s) { return s.nc * s.dac * (5.0 * s.ttc + 2.0 * s.com) / 7.0; }

SubScores random_scores(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  std::bernoulli_distribution b(0.8);
  SubScores s;
  s.nc = b(rng);
  s.dac = b(rng);
  s.ddc = b(rng);
  s.tlc = b(rng);
  s.ep = u(rng);
  s.ttc = u(rng);
  s.lk = u(rng);
  s.hc = u(rng);
  s.ec = u(rng);
  s.com = u(rng);
  return s;
}

// Drives straight ahead at a fixed speed and ignores everything.
class BlindPolicy : public world::Policy {
 public:
  explicit BlindPolicy(double speed) : speed_(speed) {}
  std::string name() const override { return "blind"; }
  world::PlanResult plan(const world::WorldSpec&, const world::EgoState& ego, double) override {
    world::PlanResult r;
    r.trajectory.dt = world::kTrajDt;
    r.trajectory.origin = ego.pose();
    for (int i = 1; i <= world::kTrajPoses; ++i) r.trajectory.poses.push_back({speed_ * world::kTrajDt * i, 0, 0});
    return r;
  }

 private:
  double speed_;
};

}  // namespace

TEST_CASE("epdms examples") {
  SubScores s;
  CHECK(metrics::epdms(s) == doctest::Approx(1.0).epsilon(1e-15));
  s.nc = 0;
  CHECK(metrics::epdms(s) == 0.0);
  SubScores t;
  t.ep = 0.8;
  t.ec = 0.5;
  CHECK(metrics::epdms(t) == doctest::Approx(0.875).epsilon(1e-14));
}

TEST_CASE("hd_frame and hd_score examples") {
  SubScores s;
  CHECK(metrics::hd_frame(s) == doctest::Approx(1.0).epsilon(1e-15));
  s.dac = 0;
  CHECK(metrics::hd_frame(s) == 0.0);
  SubScores t;
  t.ttc = 0.5;
  CHECK(metrics::hd_frame(t) == doctest::Approx(4.5 / 7.0).epsilon(1e-14));
  CHECK(metrics::hd_score({1, 1, 1}, 1.0) == 1.0);
  CHECK(metrics::hd_score({1, 0.3}, 0.0) == 0.0);
  CHECK(metrics::hd_score({1, 0.5}, 0.5) == doctest::Approx(0.375).epsilon(1e-15));
  CHECK_THROWS_AS(metrics::hd_score({}, 1.0), DomainError);
  CHECK_THROWS_AS(metrics::hd_score({1.0}, 1.5), DomainError);
}

TEST_CASE("out-of-range sub-scores are rejected") {
  for (int field = 0; field < 10; ++field) {
    for (double bad : {-0.1, 1.01, std::nan("")}) {
      SubScores s;
      double* f[10] = {&s.nc, &s.dac, &s.ddc, &s.tlc, &s.ep, &s.ttc, &s.lk, &s.hc, &s.ec, &s.com};
      *f[field] = bad;
      CHECK_THROWS_AS(metrics::epdms(s), DomainError);
      CHECK_THROWS_AS(metrics::hd_frame(s), DomainError);
    }
  }
}

TEST_CASE("formulas match hand evaluation on random sub-scores") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    const SubScores s = random_scores(rng);
    CHECK(std::fabs(metrics::epdms(s) - hand_epdms(s)) <= 1e-12);
    CHECK(std::fabs(metrics::hd_frame(s) - hand_hd(s)) <= 1e-12);
  }
}

TEST_CASE("gate property") {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 500; ++i) {
    SubScores s = random_scores(rng);
    double* gates[4] = {&s.nc, &s.dac, &s.ddc, &s.tlc};
    *gates[i % 4] = 0;
    CHECK(metrics::epdms(s) == 0.0);
    SubScores h = random_scores(rng);
    (i % 2 ? h.nc : h.dac) = 0;
    CHECK(metrics::hd_frame(h) == 0.0);
  }
}

TEST_CASE("worsening an averaged sub-score never increases the totals") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 1000; ++i) {
    const SubScores s = random_scores(rng);
    SubScores worse = s;
    double* avg[6] = {&worse.ep, &worse.ttc, &worse.lk, &worse.hc, &worse.ec, &worse.com};
    double* f = avg[i % 6];
    *f *= u(rng);
    CHECK(metrics::epdms(worse) <= metrics::epdms(s));
    CHECK(metrics::hd_frame(worse) <= metrics::hd_frame(s));
    const std::vector<double> frames{u(rng), u(rng), u(rng)};
    const double rc = u(rng);
    CHECK(metrics::hd_score(frames, rc * u(rng)) <= metrics::hd_score(frames, rc));
  }
}

TEST_CASE("expert rollouts on easy worlds pass the binary checks") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const auto w = world::generate_world(seed, world::Difficulty::E);
    world::ExpertPolicy expert;
    const auto r = world::run_closed_loop(w, expert);
    const auto rep = metrics::evaluate_rollout(w, r);
    CHECK(rep.scores.nc == 1);
    CHECK(rep.scores.dac == 1);
    CHECK(rep.scores.ddc == 1);
    CHECK(rep.scores.tlc == 1);
    CHECK(rep.scores.lk == 1);
    CHECK(rep.scores.ep == doctest::Approx(1.0));
    CHECK(rep.route_completion >= 0.95);
    CHECK(rep.epdms == doctest::Approx(hand_epdms(rep.scores)).epsilon(1e-12));
    CHECK(rep.hd_frames.size() == r.records.size());
  }
}

TEST_CASE("stationary policy makes no progress and does not collide") {
  const auto w = world::generate_world(3, world::Difficulty::E);
  world::StationaryPolicy still;
  world::RolloutConfig cfg;
  cfg.max_time = 10;
  const auto r = world::run_closed_loop(w, still, cfg);
  const auto rep = metrics::evaluate_rollout(w, r);
  CHECK(rep.scores.nc == 1);
  CHECK(rep.scores.ep < 0.1);
  CHECK(rep.route_completion < 0.1);
}

TEST_CASE("driving into an obstacle zeroes NC and EPDMS") {
  const auto w = testing::straight_world(200, 150, {{30, 0, 1, 1}});
  BlindPolicy blind(6);
  const auto start = testing::ego_at(0, 0, 0, 6);
  const auto r = world::run_closed_loop(w, start, blind);
  CHECK(r.termination == world::Termination::kCollision);
  const auto rep = metrics::evaluate_rollout(w, r);
  CHECK(rep.scores.nc == 0);
  CHECK(rep.epdms == 0.0);
  CHECK(rep.scores.ttc < 1.0);
  CHECK(rep.hd_frames.back() == 0.0);
}

TEST_CASE("red-light crossing fails TLC") {
  auto w = testing::straight_world(200, 150);
  w.light = world::TrafficLight{40, 10, 0, 10};
  BlindPolicy blind(8);
  const auto r = world::run_closed_loop(w, testing::ego_at(0, 0, 0, 8), blind);
  const auto rep = metrics::evaluate_rollout(w, r);
  CHECK(rep.scores.tlc == 0);
  CHECK(rep.epdms == 0.0);
  CHECK(rep.scores.nc == 1);

  world::ExpertPolicy expert;
  const auto re = world::run_closed_loop(w, testing::ego_at(0, 0, 0, 8), expert);
  CHECK(metrics::evaluate_rollout(w, re).scores.tlc == 1);
}

TEST_CASE("log parsing and report emission") {
  const auto w = world::generate_world(5, world::Difficulty::E);
  world::ExpertPolicy expert;
  const auto r = world::run_closed_loop(w, expert);
  std::stringstream ss;
  world::write_rollout(ss, r);
  const auto a = metrics::evaluate_rollout(w, r);
  const auto b = metrics::evaluate_rollout_log(w, ss);
  CHECK(a.epdms == b.epdms);
  CHECK(a.hd_score == b.hd_score);

  std::istringstream bad("{\"t\": 0}\nnot json\n");
  try {
    metrics::evaluate_rollout_log(w, bad);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() >= 1);
  }

  const auto j = nlohmann::json::parse(metrics::report_json(a));
  CHECK(j.at("EPDMS").get<double>() == a.epdms);
  CHECK(j.at("termination").get<std::string>() == "route_complete");
  CHECK(metrics::table1_header() == "NC,DAC,DDC,TLC,EP,TTC,LK,HC,EC,EPDMS");
  metrics::MetricReport half = a;
  half.scores.ep = 0.5;
  half.epdms = metrics::epdms(half.scores);
  const std::string row = metrics::table1_row({a, half});
  CHECK(row.find("75.0000") != std::string::npos);
  CHECK(row.rfind("100.0000,100.0000,100.0000,100.0000", 0) == 0);
  CHECK_THROWS_AS(metrics::table1_row({}), DomainError);
}

TEST_CASE("EC counts disagreeing replans") {
  // Alternates between two plans that differ by a 2 m lateral offset.
  class Flipper : public world::Policy {
   public:
    std::string name() const override { return "flipper"; }
    world::PlanResult plan(const world::WorldSpec&, const world::EgoState& ego, double) override {
      world::PlanResult r;
      r.trajectory.dt = world::kTrajDt;
      r.trajectory.origin = ego.pose();
      const double off = (calls_++ % 2) ? -1.0 : 1.0;
      for (int i = 1; i <= world::kTrajPoses; ++i) r.trajectory.poses.push_back({2.0 * i, off, 0});
      return r;
    }

   private:
    int calls_ = 0;
  };
  const auto w = testing::straight_world(200, 150);
  Flipper flip;
  world::RolloutConfig cfg;
  cfg.max_time = 5;
  const auto r = world::run_closed_loop(w, testing::ego_at(0, 0, 0, 4), flip, cfg);
  const auto rep = metrics::evaluate_rollout(w, r);
  CHECK(rep.scores.ec < 0.5);

  BlindPolicy steady(4);
  const auto r2 = world::run_closed_loop(w, testing::ego_at(0, 0, 0, 4), steady, cfg);
  CHECK(metrics::evaluate_rollout(w, r2).scores.ec == 1.0);
}
