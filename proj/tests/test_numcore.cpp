#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "gradcheck.hpp"
#include "lwam/errors.hpp"
#include "lwam/numcore/io.hpp"
#include "lwam/numcore/nn.hpp"
#include "lwam/numcore/ops.hpp"

using namespace lwam;
using nc::Tensor;

namespace {

Tensor rand_leaf(nc::Shape s, nc::Rng& rng) { return Tensor::uniform(std::move(s), rng, -2.0, 2.0, true); }

// Plain triple loop, independent of the kernel path.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t I,
                                 std::size_t K, std::size_t J) {
  std::vector<double> c(I * J, 0.0);
  for (std::size_t i = 0; i < I; ++i)
    for (std::size_t j = 0; j < J; ++j)
      for (std::size_t k = 0; k < K; ++k) c[i * J + j] += a[i * K + k] * b[k * J + j];
  return c;
}

}  // namespace

TEST_CASE("matmul identity, annihilator and triple-loop oracle") {
  nc::Rng rng(1);
  Tensor a = Tensor::randn({3, 3}, rng);
  Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor ia = nc::matmul(eye, a);
  for (std::size_t i = 0; i < 9; ++i) CHECK(ia[i] == a[i]);
  Tensor z = nc::matmul(a, Tensor::zeros({3, 3}));
  for (double v : z.data()) CHECK(v == 0.0);

  Tensor x = Tensor::randn({4, 5}, rng), y = Tensor::randn({5, 3}, rng);
  auto ref = naive_matmul({x.data().begin(), x.data().end()}, {y.data().begin(), y.data().end()}, 4, 5, 3);
  Tensor xy = nc::matmul(x, y);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::fabs(xy[i] - ref[i]) < 1e-12);

  CHECK_THROWS_AS(nc::matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), ShapeError);
}

TEST_CASE("matmul broadcasts leading batch dims") {
  nc::Rng rng(2);
  Tensor a = Tensor::randn({2, 3, 4}, rng), b = Tensor::randn({1, 4, 2}, rng);
  Tensor c = nc::matmul(a, b);
  CHECK(c.shape() == nc::Shape{2, 3, 2});
  for (std::size_t bi = 0; bi < 2; ++bi) {
    std::vector<double> ab(a.data().begin() + bi * 12, a.data().begin() + (bi + 1) * 12);
    auto ref = naive_matmul(ab, {b.data().begin(), b.data().end()}, 3, 4, 2);
    for (std::size_t i = 0; i < 6; ++i) CHECK(std::fabs(c[bi * 6 + i] - ref[i]) < 1e-12);
  }
}

TEST_CASE("layer_norm forward properties") {
  Tensor c = Tensor::full({5}, 3.25);
  Tensor y = nc::layer_norm(c, Tensor::full({5}, 1.0), Tensor::zeros({5}));
  for (double v : y.data()) CHECK(v == 0.0);

  nc::Rng rng(3);
  Tensor x = Tensor::randn({4, 16}, rng, 3.0);
  Tensor n = nc::layer_norm(x, Tensor(), Tensor());
  for (std::size_t r = 0; r < 4; ++r) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 16; ++i) m += n[r * 16 + i];
    m /= 16;
    for (std::size_t i = 0; i < 16; ++i) v += (n[r * 16 + i] - m) * (n[r * 16 + i] - m);
    v /= 16;
    CHECK(std::fabs(m) < 1e-12);
    CHECK(std::fabs(v - 1.0) < 1e-5);
  }
  CHECK_THROWS_AS(nc::layer_norm(Tensor::zeros({2, 0}), Tensor(), Tensor()), ShapeError);
}

TEST_CASE("softmax uniform, shift invariance, direct formula") {
  Tensor u = nc::softmax(Tensor::zeros({4}));
  for (double v : u.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  Tensor x = Tensor::from({3}, {1, 2, 3});
  Tensor s = nc::softmax(x);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) CHECK(std::fabs(s[i] - std::exp(i + 1.0) / z) < 1e-12);
  Tensor shifted = nc::softmax(nc::add_scalar(x, 17.5));
  for (int i = 0; i < 3; ++i) CHECK(std::fabs(shifted[i] - s[i]) < 1e-12);
}

TEST_CASE("masked attention special cases and subset oracle") {
  nc::Rng rng(4);
  {
    Tensor q = Tensor::randn({1, 1, 4}, rng), k = Tensor::randn({1, 1, 4}, rng), v = Tensor::randn({1, 1, 4}, rng);
    nc::BoolMatrix all(1, 1, true);
    Tensor o = nc::masked_attention(q, k, v, &all);
    for (int i = 0; i < 4; ++i) CHECK(std::fabs(o[i] - v[i]) < 1e-15);
  }
  {
    Tensor q = Tensor::randn({1, 3, 2}, rng), k = Tensor::randn({1, 3, 2}, rng), v = Tensor::randn({1, 3, 2}, rng);
    nc::BoolMatrix diag(3, 3, false);
    for (int i = 0; i < 3; ++i) diag.set(i, i, true);
    Tensor o = nc::masked_attention(q, k, v, &diag);
    for (int i = 0; i < 6; ++i) CHECK(std::fabs(o[i] - v[i]) < 1e-15);
  }
  const std::size_t H = 2, Lq = 3, Lk = 5, d = 4;
  Tensor q = Tensor::randn({H, Lq, d}, rng), k = Tensor::randn({H, Lk, d}, rng), v = Tensor::randn({H, Lk, d}, rng);
  nc::BoolMatrix mask(Lq, Lk, false);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < Lq; ++i) {
    mask.set(i, i, true);
    for (std::size_t j = 0; j < Lk; ++j)
      if (coin(rng)) mask.set(i, j, true);
  }
  Tensor o = nc::masked_attention(q, k, v, &mask);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t i = 0; i < Lq; ++i) {
      std::vector<std::size_t> allowed;
      for (std::size_t j = 0; j < Lk; ++j)
        if (mask(i, j)) allowed.push_back(j);
      std::vector<double> w;
      double mx = -1e300;
      for (auto j : allowed) {
        double s = 0;
        for (std::size_t t = 0; t < d; ++t) s += q[(h * Lq + i) * d + t] * k[(h * Lk + j) * d + t];
        s /= std::sqrt(double(d));
        w.push_back(s);
        mx = std::max(mx, s);
      }
      double z = 0;
      for (auto& x : w) z += (x = std::exp(x - mx));
      for (std::size_t t = 0; t < d; ++t) {
        double ref = 0;
        for (std::size_t a = 0; a < allowed.size(); ++a) ref += w[a] / z * v[(h * Lk + allowed[a]) * d + t];
        CHECK(std::fabs(o[(h * Lq + i) * d + t] - ref) < 1e-10);
      }
    }

  nc::BoolMatrix all(Lq, Lk, true);
  Tensor masked = nc::masked_attention(q, k, v, &all);
  Tensor unmasked = nc::masked_attention(q, k, v, nullptr);
  for (std::size_t i = 0; i < masked.numel(); ++i) CHECK(masked[i] == unmasked[i]);

  nc::BoolMatrix bad(Lq, Lk, true);
  for (std::size_t j = 0; j < Lk; ++j) bad.set(1, j, false);
  CHECK_THROWS_AS(nc::masked_attention(q, k, v, &bad), ContractError);
}

TEST_CASE("backward closed forms") {
  nc::Rng rng(5);
  Tensor x = rand_leaf({3, 4}, rng);
  nc::backward(nc::sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  Tensor s = Tensor::scalar(3.0, true);
  nc::backward(nc::mul(s, s));
  CHECK(s.grad()[0] == 6.0);

  CHECK_THROWS_AS(nc::backward(nc::square(rand_leaf({2}, rng))), ShapeError);
}

TEST_CASE("backward visits shared nodes once and refuses a consumed graph") {
  Tensor x = Tensor::scalar(2.0, true);
  Tensor y = nc::square(x);           // shared by both branches
  Tensor loss = nc::add(nc::scale(y, 3.0), y);  // 4 x^2
  auto report = nc::backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(16.0));
  CHECK(report.nodes_visited == 4);  // x, y, scale, add
  CHECK_THROWS_AS(nc::backward(loss), ContractError);
}

TEST_CASE("finite-difference check of every differentiable op") {
  nc::Rng rng(6);
  auto expect_ok = [](const lwam::testing::GradCheckResult& r, const char* what) {
    INFO(what << " worst " << r.worst_name << " rel " << r.worst_rel_error);
    CHECK(r.worst_rel_error < 1e-4);
  };
  Tensor a = rand_leaf({3, 4}, rng), b = rand_leaf({3, 4}, rng), bias = rand_leaf({4}, rng);
  Tensor w = rand_leaf({4, 2}, rng);
  Tensor a3 = rand_leaf({2, 3, 4}, rng), b3 = rand_leaf({2, 4, 3}, rng);
  Tensor weights = rand_leaf({2, 2}, rng);

  auto weighted = [&](const Tensor& t) {
    // Random projection so every output element matters.
    nc::Rng wr(99);
    Tensor coeff = Tensor::uniform(t.shape(), wr, -1.0, 1.0);
    return nc::sum(nc::mul(t, coeff));
  };

  expect_ok(lwam::testing::grad_check([&] { return weighted(nc::add(a, bias)); }, {a, bias}), "add");
  expect_ok(lwam::testing::grad_check([&] { return weighted(nc::sub(a, b)); }, {a, b}), "sub");
  expect_ok(lwam::testing::grad_check([&] { return weighted(nc::mul(a, b)); }, {a, b}), "mul");
  expect_ok(lwam::testing::grad_check([&] { return weighted(nc::matmul(a, w)); }, {a, w}), "matmul");
  expect_ok(lwam::testing::grad_check([&] { return weighted(nc::matmul(a3, b3)); }, {a3, b3}), "bmm");
  expect_ok(lwam::testing::grad_check([&] { return weighted(nc::matmul(a3, w)); }, {a3, w}), "bmm-bcast");
  expect_ok(lwam::testing::grad_check([&] { return weighted(nc::transpose(a)); }, {a}), "transpose");
  expect_ok(lwam::testing::grad_check([&] { return weighted(nc::layer_norm(a, bias, nc::scale(bias, 0.5))); }, {a, bias}), "layer_norm");
  expect_ok(lwam::testing::grad_check([&] { return weighted(nc::softmax(a)); }, {a}), "softmax");
  expect_ok(lwam::testing::grad_check([&] { return weighted(nc::log_softmax(a)); }, {a}), "log_softmax");
  expect_ok(lwam::testing::grad_check([&] { return weighted(nc::gelu(a)); }, {a}), "gelu");
  expect_ok(lwam::testing::grad_check([&] { return weighted(nc::concat({a, b}, 1)); }, {a, b}), "concat");
  expect_ok(lwam::testing::grad_check([&] { return weighted(nc::slice(a3, 1, 1, 3)); }, {a3}), "slice");
  expect_ok(lwam::testing::grad_check([&] { return weighted(nc::reshape(a, {6, 2})); }, {a}), "reshape");
  expect_ok(lwam::testing::grad_check([&] { return weighted(nc::merge_heads(nc::split_heads(a, 2))); }, {a}), "heads");
  expect_ok(lwam::testing::grad_check([&] { return nc::mean_reduce(nc::square(a)); }, {a}), "mean");
  expect_ok(lwam::testing::grad_check([&] { return nc::mse_loss(a, b); }, {a, b}), "mse");
  expect_ok(lwam::testing::grad_check([&] { return nc::l1_loss(a, b); }, {a, b}), "l1");
  std::vector<int> targets{0, 3, 1};
  expect_ok(lwam::testing::grad_check([&] { return nc::cross_entropy_loss(a, targets); }, {a}), "cross_entropy");
  expect_ok(lwam::testing::grad_check([&] { return weighted(nc::cosine_similarity(a, b)); }, {a, b}), "cosine");
  std::vector<int> idx{1, 0, 1};
  expect_ok(lwam::testing::grad_check([&] { return weighted(nc::embedding_lookup(weights, idx)); }, {weights}), "embedding");
  Tensor w1 = rand_leaf({4, 5}, rng), b1 = rand_leaf({5}, rng), w2 = rand_leaf({5, 2}, rng), b2 = rand_leaf({2}, rng);
  expect_ok(lwam::testing::grad_check([&] { return weighted(nc::mlp_forward(a, w1, b1, w2, b2)); }, {a, w1, b1, w2, b2}), "mlp");

  Tensor q = rand_leaf({2, 3, 4}, rng), k = rand_leaf({2, 5, 4}, rng), v = rand_leaf({2, 5, 4}, rng);
  nc::BoolMatrix mask(3, 5, true);
  mask.set(0, 4, false);
  mask.set(2, 0, false);
  expect_ok(lwam::testing::grad_check([&] { return weighted(nc::masked_attention(q, k, v, &mask)); }, {q, k, v}), "attention");
}

TEST_CASE("forward evaluation is deterministic") {
  auto run = [] {
    nc::ParamStore store(42);
    auto layer = nc::EncoderLayer::make(store, "enc", 8, 2, 16);
    nc::Rng rng(7);
    Tensor x = Tensor::randn({5, 8}, rng);
    return layer(x);
  };
  Tensor a = run(), b = run();
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("non-finite forward values are rejected") {
  Tensor x = Tensor::from({2}, {1e308, 1e308});
  CHECK_THROWS_AS(nc::scale(x, 10.0), NumericalError);
}

TEST_CASE("tensor serialization layout") {
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6.5});
  std::ostringstream os;
  nc::write_tensor(os, t);
  const std::string bytes = os.str();
  REQUIRE(bytes.size() == 4 + 4 + 2 * 4 + 6 * 8);
  CHECK(bytes.substr(0, 4) == "LWT1");
  CHECK(static_cast<unsigned char>(bytes[4]) == 2);
  CHECK(static_cast<unsigned char>(bytes[8]) == 2);
  CHECK(static_cast<unsigned char>(bytes[12]) == 3);
  std::istringstream is(bytes);
  Tensor back = nc::read_tensor(is);
  CHECK(back.shape() == t.shape());
  for (std::size_t i = 0; i < 6; ++i) CHECK(back[i] == t[i]);

  std::istringstream bad("LWX1");
  CHECK_THROWS_AS(nc::read_tensor(bad), DataError);
}

TEST_CASE("param store binds existing parameters and checkpoints") {
  nc::ParamStore store(3);
  auto l1 = nc::Linear::make(store, "lin", 3, 2);
  auto l2 = nc::Linear::make(store, "lin", 3, 2);
  CHECK(l1.weight.id() == l2.weight.id());
  CHECK_THROWS_AS(nc::Linear::make(store, "lin", 4, 2), ConfigError);

  auto dir = std::filesystem::temp_directory_path() / "lwam_test_params";
  std::filesystem::remove_all(dir);
  store.save(dir);
  auto loaded = nc::ParamStore::load(dir, true);
  CHECK(loaded.names() == store.names());
  for (const auto& n : store.names()) {
    auto a = store.at(n).data(), b = loaded.at(n).data();
    CHECK(std::equal(a.begin(), a.end(), b.begin()));
  }
  std::filesystem::remove_all(dir);
}
