#include "lwam/numcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "lwam/errors.hpp"
#include "lwam/numcore/kernels.hpp"

namespace lwam::nc {

namespace {

using Saved = std::shared_ptr<std::vector<double>>;

Saved save(std::vector<double> v) { return std::make_shared<std::vector<double>>(std::move(v)); }

std::size_t norm_axis(int axis, std::size_t rank) {
  int r = static_cast<int>(rank);
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

// Accumulate into an input's grad only if that input participates.
std::span<double> grad_of(Node& out, std::size_t i) {
  auto& in = out.inputs[i];
  if (!in->requires_grad) return {};
  return in->grad_buffer();
}

enum class BinOp { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  Shape out_shape;
  if (is_suffix(sb, sa)) {
    out_shape = sa;
  } else if (is_suffix(sa, sb)) {
    out_shape = sb;
  } else {
    throw ShapeError(std::string(name) + ": incompatible shapes " + to_string(sa) + " and " + to_string(sb));
  }
  const std::size_t n = numel(out_shape);
  const std::size_t na = a.numel(), nb = b.numel();
  auto da = a.data();
  auto db = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = da[na == n ? i : i % na];
    double y = db[nb == n ? i : i % nb];
    switch (op) {
      case BinOp::kAdd: out[i] = x + y; break;
      case BinOp::kSub: out[i] = x - y; break;
      case BinOp::kMul: out[i] = x * y; break;
    }
  }
  return make_op(name, out_shape, std::move(out), {a, b}, [op, na, nb](Node& o) {
    const std::size_t n = o.data.size();
    auto ga = grad_of(o, 0);
    auto gb = grad_of(o, 1);
    const auto& xa = o.inputs[0]->data;
    const auto& xb = o.inputs[1]->data;
    for (std::size_t i = 0; i < n; ++i) {
      const double g = o.grad[i];
      const std::size_t ia = na == n ? i : i % na;
      const std::size_t ib = nb == n ? i : i % nb;
      switch (op) {
        case BinOp::kAdd:
          if (!ga.empty()) ga[ia] += g;
          if (!gb.empty()) gb[ib] += g;
          break;
        case BinOp::kSub:
          if (!ga.empty()) ga[ia] += g;
          if (!gb.empty()) gb[ib] -= g;
          break;
        case BinOp::kMul:
          if (!ga.empty()) ga[ia] += g * xb[ib];
          if (!gb.empty()) gb[ib] += g * xa[ia];
          break;
      }
    }
  });
}

template <typename F, typename D>
Tensor unary(const Tensor& a, const char* name, F f, D dfdx) {
  auto da = a.data();
  std::vector<double> out(da.size());
  for (std::size_t i = 0; i < da.size(); ++i) out[i] = f(da[i]);
  return make_op(name, a.shape(), std::move(out), {a}, [dfdx](Node& o) {
    auto g = grad_of(o, 0);
    const auto& x = o.inputs[0]->data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * dfdx(x[i], o.data[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kMul, "mul"); }

Tensor scale(const Tensor& a, double s) {
  return unary(a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor abs(const Tensor& a) {
  return unary(
      a, "abs", [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& a) {
  return unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return unary(
      a, "gelu", [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) throw ShapeError("matmul needs rank >= 2 operands, got " + to_string(sa) + " x " + to_string(sb));
  const std::size_t I = sa[sa.size() - 2], K = sa.back(), J = sb.back();
  if (sb[sb.size() - 2] != K) throw ShapeError("matmul inner dimension mismatch: " + to_string(sa) + " x " + to_string(sb));

  Shape ba(sa.begin(), sa.end() - 2), bb(sb.begin(), sb.end() - 2);
  const std::size_t rank = std::max(ba.size(), bb.size());
  Shape bo(rank);
  for (std::size_t r = 0; r < rank; ++r) {
    std::size_t da = r + ba.size() >= rank ? ba[r + ba.size() - rank] : 1;
    std::size_t db = r + bb.size() >= rank ? bb[r + bb.size() - rank] : 1;
    if (da != db && da != 1 && db != 1) throw ShapeError("matmul batch dims not broadcastable: " + to_string(sa) + " x " + to_string(sb));
    bo[r] = std::max(da, db);
  }
  const std::size_t nbatch = numel(bo);
  // Per output batch, the matrix offsets into a and b.
  auto offsets = std::make_shared<std::vector<std::pair<std::size_t, std::size_t>>>(nbatch);
  for (std::size_t bi = 0; bi < nbatch; ++bi) {
    std::size_t rem = bi, oa = 0, ob = 0, stride_a = 1, stride_b = 1;
    for (std::size_t r = rank; r-- > 0;) {
      std::size_t idx = rem % bo[r];
      rem /= bo[r];
      std::size_t da = r + ba.size() >= rank ? ba[r + ba.size() - rank] : 1;
      std::size_t db = r + bb.size() >= rank ? bb[r + bb.size() - rank] : 1;
      if (da != 1) oa += idx * stride_a;
      if (db != 1) ob += idx * stride_b;
      stride_a *= da;
      stride_b *= db;
    }
    (*offsets)[bi] = {oa * I * K, ob * K * J};
  }

  Shape out_shape = bo;
  out_shape.push_back(I);
  out_shape.push_back(J);
  std::vector<double> out(nbatch * I * J, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  const bool flat = bb.empty();  // 2D right operand: one tall gemm
  if (flat) {
    kern::gemm_nn(a.numel() / K, K, J, pa, pb, out.data());
  } else {
    for (std::size_t bi = 0; bi < nbatch; ++bi) {
      auto [oa, ob] = (*offsets)[bi];
      kern::gemm_nn(I, K, J, pa + oa, pb + ob, out.data() + bi * I * J);
    }
  }
  return make_op("matmul", out_shape, std::move(out), {a, b}, [offsets, I, K, J, flat](Node& o) {
    auto ga = grad_of(o, 0);
    auto gb = grad_of(o, 1);
    const double* pa = o.inputs[0]->data.data();
    const double* pb = o.inputs[1]->data.data();
    const double* go = o.grad.data();
    if (flat) {
      const std::size_t M = o.inputs[0]->data.size() / K;
      if (!ga.empty()) kern::gemm_nt(M, K, J, go, pb, ga.data());
      if (!gb.empty()) kern::gemm_tn(M, K, J, pa, go, gb.data());
      return;
    }
    for (std::size_t bi = 0; bi < offsets->size(); ++bi) {
      auto [oa, ob] = (*offsets)[bi];
      const double* g = go + bi * I * J;
      if (!ga.empty()) kern::gemm_nt(I, K, J, g, pb + ob, ga.data() + oa);
      if (!gb.empty()) kern::gemm_tn(I, K, J, pa + oa, g, gb.data() + ob);
    }
  });
}

Tensor transpose(const Tensor& a) {
  const Shape& s = a.shape();
  if (s.size() < 2) throw ShapeError("transpose needs rank >= 2");
  const std::size_t R = s[s.size() - 2], C = s.back(), nb = a.numel() / (R * C);
  Shape os = s;
  std::swap(os[os.size() - 1], os[os.size() - 2]);
  auto d = a.data();
  std::vector<double> out(d.size());
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) out[b * R * C + c * R + r] = d[b * R * C + r * C + c];
  return make_op("transpose", os, std::move(out), {a}, [R, C, nb](Node& o) {
    auto g = grad_of(o, 0);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) g[b * R * C + r * C + c] += o.grad[b * R * C + c * R + r];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) throw ShapeError("reshape " + to_string(a.shape()) + " -> " + to_string(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_op("reshape", std::move(shape), std::move(out), {a}, [](Node& o) {
    auto g = grad_of(o, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& s0 = parts[0].shape();
  const std::size_t ax = norm_axis(axis, s0.size());
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s0[i];
  for (std::size_t i = ax + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != ax && s[i] != s0[i]) throw ShapeError("concat shape mismatch: " + to_string(s) + " vs " + to_string(s0));
    widths.push_back(s[ax] * inner);
    total += s[ax];
  }
  Shape os = s0;
  os[ax] = total;
  const std::size_t row = total * inner;
  std::vector<double> out(outer * row);
  std::size_t col = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto d = parts[p].data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(o * widths[p]), widths[p], out.begin() + static_cast<std::ptrdiff_t>(o * row + col));
    col += widths[p];
  }
  return make_op("concat", os, std::move(out), parts, [widths, outer, row](Node& o) {
    std::size_t col = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      auto g = grad_of(o, p);
      if (!g.empty()) {
        for (std::size_t r = 0; r < outer; ++r)
          for (std::size_t i = 0; i < widths[p]; ++i) g[r * widths[p] + i] += o.grad[r * row + col + i];
      }
      col += widths[p];
    }
  });
}

Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  const std::size_t ax = norm_axis(axis, s.size());
  if (begin >= end || end > s[ax]) throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " + to_string(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t src_row = s[ax] * inner, w = (end - begin) * inner, off = begin * inner;
  Shape os = s;
  os[ax] = end - begin;
  auto d = a.data();
  std::vector<double> out(outer * w);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(o * src_row + off), w, out.begin() + static_cast<std::ptrdiff_t>(o * w));
  return make_op("slice", os, std::move(out), {a}, [outer, src_row, w, off](Node& o) {
    auto g = grad_of(o, 0);
    for (std::size_t r = 0; r < outer; ++r)
      for (std::size_t i = 0; i < w; ++i) g[r * src_row + off + i] += o.grad[r * w + i];
  });
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
  const Shape& s = x.shape();
  if (s.size() != 2 || heads == 0 || s[1] % heads != 0) throw ShapeError("split_heads: bad shape " + to_string(s));
  const std::size_t L = s[0], d = s[1] / heads;
  auto src = x.data();
  std::vector<double> out(src.size());
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t h = 0; h < heads; ++h)
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(l * s[1] + h * d), d, out.begin() + static_cast<std::ptrdiff_t>((h * L + l) * d));
  return make_op("split_heads", {heads, L, d}, std::move(out), {x}, [L, d, heads](Node& o) {
    auto g = grad_of(o, 0);
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < d; ++i) g[l * heads * d + h * d + i] += o.grad[(h * L + l) * d + i];
  });
}

Tensor merge_heads(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw ShapeError("merge_heads: bad shape " + to_string(s));
  const std::size_t H = s[0], L = s[1], d = s[2];
  auto src = x.data();
  std::vector<double> out(src.size());
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t l = 0; l < L; ++l)
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((h * L + l) * d), d, out.begin() + static_cast<std::ptrdiff_t>(l * H * d + h * d));
  return make_op("merge_heads", {L, H * d}, std::move(out), {x}, [H, L, d](Node& o) {
    auto g = grad_of(o, 0);
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t i = 0; i < d; ++i) g[(h * L + l) * d + i] += o.grad[l * H * d + h * d + i];
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const Shape& s = x.shape();
  if (s.empty() || s.back() == 0) throw ShapeError("layer_norm over empty last axis");
  if (eps <= 0) throw DomainError("layer_norm eps must be positive");
  const std::size_t d = s.back(), rows = x.numel() / d;
  const bool affine = gamma.defined();
  if (affine && (gamma.numel() != d || !beta.defined() || beta.numel() != d))
    throw ShapeError("layer_norm affine parameters must have length " + std::to_string(d));
  auto src = x.data();
  std::vector<double> xhat(src.size()), rstd(rows), out(src.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = src.data() + r * d;
    double mu = 0;
    for (std::size_t i = 0; i < d; ++i) mu += p[i];
    mu /= static_cast<double>(d);
    double var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (p[i] - mu) * (p[i] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      xhat[r * d + i] = (p[i] - mu) * rstd[r];
      out[r * d + i] = affine ? xhat[r * d + i] * gamma[i] + beta[i] : xhat[r * d + i];
    }
  }
  std::vector<Tensor> inputs{x};
  if (affine) {
    inputs.push_back(gamma);
    inputs.push_back(beta);
  }
  auto sx = save(std::move(xhat));
  auto sr = save(std::move(rstd));
  return make_op("layer_norm", s, std::move(out), inputs, [sx, sr, d, rows, affine](Node& o) {
    const auto& xh = *sx;
    auto gx = grad_of(o, 0);
    std::span<double> gg, gb;
    const double* gam = nullptr;
    if (affine) {
      gg = grad_of(o, 1);
      gb = grad_of(o, 2);
      gam = o.inputs[1]->data.data();
    }
    std::vector<double> dxh(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = o.grad.data() + r * d;
      const double* xr = xh.data() + r * d;
      double m1 = 0, m2 = 0;
      for (std::size_t i = 0; i < d; ++i) {
        dxh[i] = affine ? g[i] * gam[i] : g[i];
        m1 += dxh[i];
        m2 += dxh[i] * xr[i];
        if (!gg.empty()) gg[i] += g[i] * xr[i];
        if (!gb.empty()) gb[i] += g[i];
      }
      if (gx.empty()) continue;
      m1 /= static_cast<double>(d);
      m2 /= static_cast<double>(d);
      for (std::size_t i = 0; i < d; ++i) gx[r * d + i] += (*sr)[r] * (dxh[i] - m1 - xr[i] * m2);
    }
  });
}

Tensor softmax(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("softmax of a scalar");
  const std::size_t d = s.back(), rows = x.numel() / d;
  auto src = x.data();
  std::vector<double> out(src.size());
  for (std::size_t r = 0; r < rows; ++r) kern::softmax_row(src.data() + r * d, out.data() + r * d, d);
  return make_op("softmax", s, std::move(out), {x}, [d, rows](Node& o) {
    auto g = grad_of(o, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = o.data.data() + r * d;
      const double* gy = o.grad.data() + r * d;
      double dot = 0;
      for (std::size_t i = 0; i < d; ++i) dot += gy[i] * y[i];
      for (std::size_t i = 0; i < d; ++i) g[r * d + i] += y[i] * (gy[i] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("log_softmax of a scalar");
  const std::size_t d = s.back(), rows = x.numel() / d;
  auto src = x.data();
  std::vector<double> out(src.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = src.data() + r * d;
    double mx = *std::max_element(p, p + d);
    double z = 0;
    for (std::size_t i = 0; i < d; ++i) z += std::exp(p[i] - mx);
    double lse = mx + std::log(z);
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] = p[i] - lse;
  }
  return make_op("log_softmax", s, std::move(out), {x}, [d, rows](Node& o) {
    auto g = grad_of(o, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = o.data.data() + r * d;
      const double* gy = o.grad.data() + r * d;
      double total = 0;
      for (std::size_t i = 0; i < d; ++i) total += gy[i];
      for (std::size_t i = 0; i < d; ++i) g[r * d + i] += gy[i] - std::exp(y[i]) * total;
    }
  });
}

Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, const BoolMatrix* mask,
                        std::vector<double>* probs_out) {
  const Shape& sq = q.shape();
  const Shape& sk = k.shape();
  if (sq.size() != 3 || sk.size() != 3 || v.shape() != sk || sq[0] != sk[0] || sq[2] != sk[2])
    throw ShapeError("masked_attention shapes q" + to_string(sq) + " k" + to_string(sk) + " v" + to_string(v.shape()));
  const std::size_t H = sq[0], Lq = sq[1], Lk = sk[1], d = sq[2];
  if (mask) {
    if (mask->rows != Lq || mask->cols != Lk)
      throw ShapeError("attention mask is " + std::to_string(mask->rows) + "x" + std::to_string(mask->cols) +
                       ", expected " + std::to_string(Lq) + "x" + std::to_string(Lk));
    for (std::size_t i = 0; i < Lq; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < Lk && !any; ++j) any = (*mask)(i, j);
      if (!any) throw ContractError("attention mask row " + std::to_string(i) + " has no visible key");
    }
  }
  const double sc = 1.0 / std::sqrt(static_cast<double>(d));
  auto probs = std::make_shared<std::vector<double>>(H * Lq * Lk);
  std::vector<double> out(H * Lq * d, 0.0);
  const double* pq = q.data().data();
  const double* pk = k.data().data();
  const double* pv = v.data().data();
  std::vector<double> logits(Lk);
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t i = 0; i < Lq; ++i) {
      const double* qi = pq + (h * Lq + i) * d;
      for (std::size_t j = 0; j < Lk; ++j) {
        double acc = kern::dot(qi, pk + (h * Lk + j) * d, d) * sc;
        if (mask && !(*mask)(i, j)) acc += kMaskedLogit;
        logits[j] = acc;
      }
      kern::softmax_row(logits.data(), probs->data() + (h * Lq + i) * Lk, Lk);
    }
    kern::gemm_nn(Lq, Lk, d, probs->data() + h * Lq * Lk, pv + h * Lk * d, out.data() + h * Lq * d);
  }
  if (probs_out) *probs_out = *probs;
  return make_op("masked_attention", sq, std::move(out), {q, k, v}, [probs, H, Lq, Lk, d, sc](Node& o) {
    auto gq = grad_of(o, 0);
    auto gk = grad_of(o, 1);
    auto gv = grad_of(o, 2);
    const double* pq = o.inputs[0]->data.data();
    const double* pk = o.inputs[1]->data.data();
    const double* pv = o.inputs[2]->data.data();
    std::vector<double> dp(Lq * Lk);
    for (std::size_t h = 0; h < H; ++h) {
      const double* P = probs->data() + h * Lq * Lk;
      const double* go = o.grad.data() + h * Lq * d;
      if (!gv.empty()) kern::gemm_tn(Lq, Lk, d, P, go, gv.data() + h * Lk * d);
      if (gq.empty() && gk.empty()) continue;
      std::fill(dp.begin(), dp.end(), 0.0);
      kern::gemm_nt(Lq, Lk, d, go, pv + h * Lk * d, dp.data());
      for (std::size_t i = 0; i < Lq; ++i) {
        double* row = dp.data() + i * Lk;
        const double* pr = P + i * Lk;
        double dot = 0;
        for (std::size_t j = 0; j < Lk; ++j) dot += row[j] * pr[j];
        for (std::size_t j = 0; j < Lk; ++j) row[j] = pr[j] * (row[j] - dot) * sc;
      }
      if (!gq.empty()) kern::gemm_nn(Lq, Lk, d, dp.data(), pk + h * Lk * d, gq.data() + h * Lq * d);
      if (!gk.empty()) kern::gemm_tn(Lq, Lk, d, dp.data(), pq + h * Lq * d, gk.data() + h * Lk * d);
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0;
  for (double x : a.data()) s += x;
  return make_op("sum", {}, {s}, {a}, [](Node& o) {
    auto g = grad_of(o, 0);
    for (auto& x : g) x += o.grad[0];
  });
}

Tensor mean_reduce(const Tensor& a) {
  const double n = static_cast<double>(a.numel());
  double s = 0;
  for (double x : a.data()) s += x;
  return make_op("mean", {}, {s / n}, {a}, [n](Node& o) {
    auto g = grad_of(o, 0);
    for (auto& x : g) x += o.grad[0] / n;
  });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) throw ShapeError("mse_loss shape mismatch " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
  return mean_reduce(square(sub(pred, target)));
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) throw ShapeError("l1_loss shape mismatch " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
  return mean_reduce(abs(sub(pred, target)));
}

Tensor cross_entropy_loss(const Tensor& logits, std::span<const int> targets) {
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[0] != targets.size()) throw ShapeError("cross_entropy_loss expects [n, C] logits with n targets");
  const std::size_t C = s[1];
  for (int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= C) throw DomainError("cross_entropy_loss target out of range");
  Tensor lp = log_softmax(logits);
  auto d = lp.data();
  const double n = static_cast<double>(targets.size());
  double loss = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) loss -= d[i * C + static_cast<std::size_t>(targets[i])];
  std::vector<int> tg(targets.begin(), targets.end());
  return make_op("cross_entropy", {}, {loss / n}, {lp}, [tg, C, n](Node& o) {
    auto g = grad_of(o, 0);
    for (std::size_t i = 0; i < tg.size(); ++i) g[i * C + static_cast<std::size_t>(tg[i])] -= o.grad[0] / n;
  });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() == 0) throw ShapeError("cosine_similarity shape mismatch");
  const std::size_t d = a.shape().back(), rows = a.numel() / d;
  Shape os(a.shape().begin(), a.shape().end() - 1);
  auto pa = a.data();
  auto pb = b.data();
  std::vector<double> out(rows), na(rows), nb(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = pa.data() + r * d;
    const double* y = pb.data() + r * d;
    na[r] = std::sqrt(kern::dot(x, x, d));
    nb[r] = std::sqrt(kern::dot(y, y, d));
    out[r] = kern::dot(x, y, d) / std::max(na[r] * nb[r], 1e-12);
  }
  auto sna = save(std::move(na));
  auto snb = save(std::move(nb));
  return make_op("cosine_similarity", os, std::move(out), {a, b}, [sna, snb, d, rows](Node& o) {
    auto ga = grad_of(o, 0);
    auto gb = grad_of(o, 1);
    const double* pa = o.inputs[0]->data.data();
    const double* pb = o.inputs[1]->data.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double g = o.grad[r], c = o.data[r];
      const double nA = (*sna)[r], nB = (*snb)[r];
      const double denom = std::max(nA * nB, 1e-12);
      for (std::size_t i = 0; i < d; ++i) {
        const double x = pa[r * d + i], y = pb[r * d + i];
        if (!ga.empty() && nA > 0) ga[r * d + i] += g * (y / denom - c * x / (nA * nA));
        if (!gb.empty() && nB > 0) gb[r * d + i] += g * (x / denom - c * y / (nB * nB));
      }
    }
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> indices) {
  const Shape& s = table.shape();
  if (s.size() != 2) throw ShapeError("embedding table must be [V, d]");
  const std::size_t V = s[0], d = s[1];
  std::vector<int> idx(indices.begin(), indices.end());
  std::vector<double> out(idx.size() * d);
  auto src = table.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= V) throw DomainError("embedding index out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(idx[i]) * d), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return make_op("embedding", {idx.size(), d}, std::move(out), {table}, [idx, d](Node& o) {
    auto g = grad_of(o, 0);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) g[static_cast<std::size_t>(idx[i]) * d + j] += o.grad[i * d + j];
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

Tensor mlp_forward(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2, const Tensor& b2) {
  return linear(gelu(linear(x, w1, b1)), w2, b2);
}

}  // namespace lwam::nc
