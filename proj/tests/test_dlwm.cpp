#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "lwam/dlwm/dlwm.hpp"
#include "lwam/errors.hpp"
#include "lwam/numcore/ops.hpp"

using namespace lwam;
using nc::Tensor;

namespace {

dlwm::WorldModelConfig tiny_config() {
  dlwm::WorldModelConfig c;
  c.d_l = 16;
  c.layers = 2;
  c.heads = 2;
  c.ffn = 24;
  c.views = 2;
  c.queries = 2;
  c.offsets = {0, 4, 8};
  return c;
}

double frame_of(std::size_t k, std::size_t B) { return static_cast<double>(k / B); }

// Rotates one (a, b) pair by angle.
std::pair<double, double> rot(double a, double b, double ang) {
  return {std::cos(ang) * a - std::sin(ang) * b, std::sin(ang) * a + std::cos(ang) * b};
}

// Per-head logits q_i . k_j of rotated vectors.
double rope_logit(const Tensor& q, const Tensor& k, const dlwm::Coord& cq, const dlwm::Coord& ck,
                  const dlwm::RopeConfig& cfg) {
  const Tensor rq = dlwm::apply_rope(q, {cq}, cfg);
  const Tensor rk = dlwm::apply_rope(k, {ck}, cfg);
  double s = 0;
  for (std::size_t i = 0; i < rq.numel(); ++i) s += rq[i] * rk[i];
  return s;
}

}  // namespace

TEST_CASE("ego vector layout") {
  const auto v = dlwm::ego_vector(2, {5.0, 0.0}, {1.0, -2.5});
  CHECK(v[0] == 0);
  CHECK(v[2] == 1);
  CHECK(v[4] == 0.5);
  CHECK(v[6] == 0.2);
  CHECK(v[7] == -0.5);
  CHECK_THROWS_AS(dlwm::ego_vector(4, {0, 0}, {0, 0}), DomainError);
}

TEST_CASE("aggregate layout, frame swap and standalone ego slot") {
  nc::ParamStore store(1);
  const std::size_t T = 3, M = 2, N = 2, D = 4;
  const auto enc = dlwm::EgoEncoder::make(store, D);
  nc::Rng rng(2);
  const Tensor scene = Tensor::randn({T, M, N, D}, rng);
  const Tensor ego = Tensor::randn({T, 8}, rng);
  const Tensor w = dlwm::aggregate(scene, ego, enc);
  REQUIRE(w.shape() == nc::Shape{T, M * N + 1, D});
  const std::size_t B = M * N + 1;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < M * N * D; ++i) CHECK(w[t * B * D + i] == scene[t * M * N * D + i]);
    const Tensor row = enc(Tensor::from({1, 8}, {ego.data().begin() + t * 8, ego.data().begin() + t * 8 + 8}));
    for (std::size_t d = 0; d < D; ++d) CHECK(std::fabs(w[(t * B + B - 1) * D + d] - row[d]) <= 1e-12);
  }
  const Tensor scene_sw = nc::concat({nc::slice(scene, 0, 1, 2), nc::slice(scene, 0, 0, 1), nc::slice(scene, 0, 2, 3)}, 0);
  const Tensor ego_sw = nc::concat({nc::slice(ego, 0, 1, 2), nc::slice(ego, 0, 0, 1), nc::slice(ego, 0, 2, 3)}, 0);
  const Tensor ws = dlwm::aggregate(scene_sw, ego_sw, enc);
  for (std::size_t i = 0; i < B * D; ++i) {
    CHECK(ws[i] == w[B * D + i]);
    CHECK(ws[B * D + i] == w[i]);
  }
  CHECK_THROWS_AS(dlwm::aggregate(scene, Tensor::zeros({T, 7}), enc), ShapeError);
}

TEST_CASE("teacher-forcing mask matches the frame predicate") {
  const auto one = dlwm::build_tf_mask(1, 4);
  for (auto b : one.bits) CHECK(b == 1);
  const auto m = dlwm::build_tf_mask(2, 3);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) CHECK(m(i, j) == (i < 3 ? j < 3 : true));
  for (std::size_t T = 1; T <= 4; ++T)
    for (std::size_t B = 1; B <= 6; ++B) {
      const auto mk = dlwm::build_tf_mask(T, B);
      REQUIRE(mk.rows == T * B);
      for (std::size_t i = 0; i < T * B; ++i)
        for (std::size_t j = 0; j < T * B; ++j) CHECK(mk(i, j) == (frame_of(j, B) <= frame_of(i, B)));
    }
}

TEST_CASE("masked attention with the block mask equals per-row recomputation") {
  nc::Rng rng(3);
  const std::size_t T = 3, B = 2, L = T * B, d = 4;
  const Tensor q = Tensor::randn({1, L, d}, rng), k = Tensor::randn({1, L, d}, rng), v = Tensor::randn({1, L, d}, rng);
  const auto mask = dlwm::build_tf_mask(T, B);
  const Tensor out = nc::masked_attention(q, k, v, &mask);
  for (std::size_t i = 0; i < L; ++i) {
    std::vector<double> logits;
    std::vector<std::size_t> keys;
    for (std::size_t j = 0; j < L; ++j)
      if (frame_of(j, B) <= frame_of(i, B)) {
        double s = 0;
        for (std::size_t c = 0; c < d; ++c) s += q[i * d + c] * k[j * d + c];
        logits.push_back(s / std::sqrt(static_cast<double>(d)));
        keys.push_back(j);
      }
    double mx = *std::max_element(logits.begin(), logits.end()), z = 0;
    for (auto& l : logits) z += (l = std::exp(l - mx));
    for (std::size_t c = 0; c < d; ++c) {
      double acc = 0;
      for (std::size_t r = 0; r < keys.size(); ++r) acc += logits[r] / z * v[keys[r] * d + c];
      CHECK(std::fabs(out[i * d + c] - acc) <= 1e-10);
    }
  }
}

TEST_CASE("rope split sizes and validation") {
  const auto c8 = dlwm::RopeConfig::for_head_dim(8);
  CHECK(c8.d_t == 2);
  CHECK(c8.d_m == 2);
  CHECK(c8.d_n == 4);
  const auto c32 = dlwm::RopeConfig::for_head_dim(32);
  CHECK(c32.d_t == 12);
  CHECK(c32.d_m == 4);
  CHECK(c32.d_n == 16);
  dlwm::RopeConfig odd;
  odd.d_t = 3;
  CHECK_THROWS_AS(odd.validate(), ConfigError);
  CHECK_THROWS_AS(dlwm::RopeConfig::for_head_dim(4), ConfigError);
}

TEST_CASE("rope identity at zero and closed-form rotation") {
  nc::Rng rng(4);
  const auto cfg = dlwm::RopeConfig::for_head_dim(8);
  const Tensor x = Tensor::randn({2, 3, 8}, rng);
  const Tensor y = dlwm::apply_rope(x, std::vector<dlwm::Coord>(3), cfg);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);

  // First pair of the time block: base 50, exponent 0, so t = 1 rotates by 1 rad.
  const Tensor p = Tensor::from({1, 1, 8}, {0.3, -0.7, 0, 0, 0, 0, 0, 0});
  const Tensor r = dlwm::apply_rope(p, {{1, 0, 0}}, cfg);
  const auto [a, b] = rot(0.3, -0.7, 1.0);
  CHECK(std::fabs(r[0] - a) <= 1e-15);
  CHECK(std::fabs(r[1] - b) <= 1e-15);

  // Second pair of the token block: base 100, i = 1, d = 4, angle n * 100^(-1/2).
  const Tensor p2 = Tensor::from({1, 1, 8}, {0, 0, 0, 0, 0, 0, 1.0, 2.0});
  const Tensor r2 = dlwm::apply_rope(p2, {{0, 0, 3}}, cfg);
  const auto [c, d] = rot(1.0, 2.0, 3 * std::pow(100.0, -0.5));
  CHECK(std::fabs(r2[6] - c) <= 1e-14);
  CHECK(std::fabs(r2[7] - d) <= 1e-14);
  CHECK_THROWS_AS(dlwm::apply_rope(x, std::vector<dlwm::Coord>(2), cfg), ShapeError);
}

TEST_CASE("rope logits depend only on per-axis coordinate differences") {
  nc::Rng rng(5);
  std::uniform_int_distribution<int> pos(-20, 20);
  const auto cfg = dlwm::RopeConfig::for_head_dim(16);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor q = Tensor::randn({1, 1, 16}, rng), k = Tensor::randn({1, 1, 16}, rng);
    dlwm::Coord cq{pos(rng), pos(rng), pos(rng)}, ck{pos(rng), pos(rng), pos(rng)};
    const double base = rope_logit(q, k, cq, ck, cfg);
    const int delta = pos(rng);
    dlwm::Coord sq = cq, sk = ck;
    if (trial % 3 == 0) sq.t += delta, sk.t += delta;
    if (trial % 3 == 1) sq.m += delta, sk.m += delta;
    if (trial % 3 == 2) sq.n += delta, sk.n += delta;
    CHECK(std::fabs(rope_logit(q, k, sq, sk, cfg) - base) <= 1e-9);
  }
}

TEST_CASE("rope gradient matches finite differences") {
  nc::Rng rng(6);
  const auto cfg = dlwm::RopeConfig::for_head_dim(8);
  Tensor x = Tensor::randn({2, 3, 8}, rng, 1.0, true);
  const Tensor w = Tensor::randn({2, 3, 8}, rng);
  const std::vector<dlwm::Coord> coords{{0, 1, 2}, {3, 0, 5}, {1, 3, 0}};
  const auto r = testing::grad_check([&] { return nc::sum(nc::mul(dlwm::apply_rope(x, coords, cfg), w)); }, {x});
  CHECK(r.worst_rel_error < 1e-4);
}

TEST_CASE("world model output shape and errors") {
  nc::ParamStore store(7);
  const auto cfg = tiny_config();
  dlwm::WorldModel wm(store, cfg);
  nc::Rng rng(8);
  const Tensor world = Tensor::randn({3, cfg.block(), cfg.d_l}, rng);
  const auto ctx = dlwm::make_context(world, cfg);
  const Tensor out = wm.predict_future(ctx, {0, 4, 8});
  CHECK(out.shape() == nc::Shape{3, cfg.block(), cfg.d_l});
  CHECK_THROWS_AS(wm.predict_future(ctx, {}), DomainError);
  CHECK_THROWS_AS(wm.predict_future(ctx, {0, 4, 6}), ConfigError);
  CHECK_THROWS_AS(dlwm::make_context(Tensor::zeros({3, cfg.block() + 1, cfg.d_l}), cfg), ShapeError);
}

TEST_CASE("predictions ignore later context frames") {
  nc::ParamStore store(9);
  const auto cfg = tiny_config();
  dlwm::WorldModel wm(store, cfg);
  nc::Rng rng(10);
  const std::size_t F = 3, B = cfg.block(), D = cfg.d_l;
  const Tensor world = Tensor::randn({F, B, D}, rng);
  const Tensor base = wm.predict_future(dlwm::make_context(world, cfg), {0, 4, 8});
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t f = static_cast<std::size_t>(trial) % F;  // target index, sees context 0..f
    std::vector<double> noisy(world.data().begin(), world.data().end());
    std::normal_distribution<double> n(0, 3);
    for (std::size_t i = (f + 1) * B * D; i < noisy.size(); ++i) noisy[i] = n(rng);
    const Tensor out = wm.predict_future(dlwm::make_context(Tensor::from({F, B, D}, noisy), cfg), {0, 4, 8});
    double worst = 0;
    for (std::size_t i = 0; i < (f + 1) * B * D; ++i) worst = std::max(worst, std::fabs(out[i] - base[i]));
    CHECK(worst <= 1e-9);
  }
}

TEST_CASE("parallel decode equals sequential decode with truncated context") {
  nc::ParamStore store(11);
  const auto cfg = tiny_config();
  dlwm::WorldModel wm(store, cfg);
  nc::Rng rng(12);
  const std::size_t F = 3, B = cfg.block(), D = cfg.d_l;
  const Tensor world = Tensor::randn({F, B, D}, rng);
  const std::vector<int> offsets{0, 4, 8};
  const Tensor par = wm.predict_future(dlwm::make_context(world, cfg), offsets);
  for (std::size_t f = 0; f < F; ++f) {
    const Tensor ctx = nc::slice(world, 0, 0, f + 1);
    const Tensor seq = wm.predict_future(dlwm::make_context(ctx, cfg),
                                         std::vector<int>(offsets.begin(), offsets.begin() + static_cast<long>(f) + 1));
    for (std::size_t i = 0; i < B * D; ++i) CHECK(std::fabs(seq[f * B * D + i] - par[f * B * D + i]) <= 1e-9);
  }
}

TEST_CASE("wm_loss oracle") {
  nc::Rng rng(13);
  const Tensor a = Tensor::randn({2, 3, 4}, rng);
  CHECK(dlwm::wm_loss(a, a.detach()).item() == 0.0);
  CHECK(dlwm::wm_loss(a, nc::add_scalar(a, 1.0)).item() == doctest::Approx(1.0).epsilon(1e-14));
  const Tensor b = Tensor::randn({2, 3, 4}, rng);
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  CHECK(std::fabs(dlwm::wm_loss(a, b).item() - s / 24.0) <= 1e-12);
  CHECK_THROWS_AS(dlwm::wm_loss(a, Tensor::zeros({2, 3, 5})), ShapeError);
  CHECK_THROWS_AS(dlwm::wm_loss(a, Tensor::zeros({2, 3, 4}, true)), ContractError);
}

TEST_CASE("ego heads shapes, softmax rows and gradient flow to the context") {
  nc::ParamStore store(14);
  const auto cfg = tiny_config();
  dlwm::WorldModel wm(store, cfg);
  const auto heads = dlwm::EgoHeads::make(store, cfg.d_l);
  nc::Rng rng(15);
  Tensor world = Tensor::randn({2, cfg.block(), cfg.d_l}, rng, 1.0, true);
  const Tensor fut = wm.predict_future(dlwm::make_context(world, cfg), {0, 4});
  const auto p = heads(fut);
  CHECK(p.cmd_probs.shape() == nc::Shape{2, 4});
  CHECK(p.velocity.shape() == nc::Shape{2, 2});
  CHECK(p.accel.shape() == nc::Shape{2, 2});
  for (std::size_t r = 0; r < 2; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 4; ++c) s += p.cmd_probs[r * 4 + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  }
  dlwm::EgoTargets tgt{{1, 2}, {0.5, 0, 0.4, 0}, {0.1, 0, 0, 0.2}};
  nc::backward(dlwm::ego_loss(p, tgt));
  REQUIRE(world.has_grad());
  double norm = 0;
  for (std::size_t i = 0; i < cfg.views * cfg.queries * cfg.d_l; ++i) norm += std::fabs(world.grad()[i]);
  CHECK(norm > 0);
  CHECK_THROWS_AS(dlwm::ego_loss(p, dlwm::EgoTargets{{1}, {0, 0}, {0, 0}}), ShapeError);
}

TEST_CASE("world model gradients match finite differences") {
  nc::ParamStore store(16);
  auto cfg = tiny_config();
  cfg.layers = 1;
  dlwm::WorldModel wm(store, cfg);
  const auto heads = dlwm::EgoHeads::make(store, cfg.d_l);
  nc::Rng rng(17);
  Tensor world = Tensor::randn({2, cfg.block(), cfg.d_l}, rng, 1.0, true);
  const Tensor target = Tensor::randn({2, cfg.block(), cfg.d_l}, rng);
  const dlwm::EgoTargets tgt{{0, 3}, {0.5, 0, 0.4, 0}, {0.1, 0, 0, 0.2}};
  std::vector<Tensor> leaves{world};
  std::vector<std::string> names{"world"};
  for (const auto& n : store.names()) leaves.push_back(store.at(n)), names.push_back(n);
  const auto r = testing::grad_check(
      [&] {
        const Tensor fut = wm.predict_future(dlwm::make_context(world, cfg), {0, 4});
        return nc::add(dlwm::wm_loss(fut, target), dlwm::ego_loss(heads(fut), tgt));
      },
      leaves, names);
  INFO("worst: " << r.worst_name << " " << r.worst_rel_error);
  CHECK(r.worst_rel_error < 1e-4);
}

TEST_CASE("EMA geometric decay and edge momenta") {
  for (double mu : {0.0, 0.5, 0.99, 1.0}) {
    nc::ParamStore online(18);
    online.param("scwe.a", {3, 2}, nc::Init::kNormal, 1.0);
    online.param("scwe.b", {4}, nc::Init::kNormal, 1.0);
    nc::ParamStore shadow = online.clone(false);
    for (const auto& n : shadow.names())
      for (auto& v : shadow.at(n).node()->data) v += 1.0;
    const auto dist = [&] {
      double s = 0;
      for (const auto& n : shadow.names())
        for (std::size_t i = 0; i < shadow.at(n).numel(); ++i) {
          const double d = shadow.at(n)[i] - online.at(n)[i];
          s += d * d;
        }
      return std::sqrt(s);
    };
    const double d0 = dist();
    for (int k = 1; k <= 10; ++k) {
      dlwm::ema_update(online, shadow, mu);
      CHECK(std::fabs(dist() - d0 * std::pow(mu, k)) <= 1e-9);
    }
    CHECK_FALSE(shadow.at("scwe.a").requires_grad());
  }
  nc::ParamStore a(1), b(1);
  a.param("x", {2}, nc::Init::kZeros);
  b.param("y", {2}, nc::Init::kZeros);
  CHECK_THROWS_AS(dlwm::ema_update(a, b, 0.5), ConfigError);
  nc::ParamStore c(1);
  c.param("x", {3}, nc::Init::kZeros);
  nc::ParamStore cs = a.clone(false);
  CHECK_THROWS_AS(dlwm::ema_update(c, cs, 0.5), ConfigError);
}
