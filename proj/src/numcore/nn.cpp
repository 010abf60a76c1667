#include "lwam/numcore/nn.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "lwam/errors.hpp"
#include "lwam/numcore/io.hpp"

namespace lwam::nc {

Tensor ParamStore::param(const std::string& name, Shape shape, Init init, double stddev, bool decay) {
  if (auto it = entries_.find(name); it != entries_.end()) {
    if (it->second.tensor.shape() != shape)
      throw ConfigError("parameter " + name + " has shape " + to_string(it->second.tensor.shape()) + ", requested " + to_string(shape));
    return it->second.tensor;
  }
  Tensor t;
  switch (init) {
    case Init::kZeros: t = Tensor::zeros(shape, true); break;
    case Init::kOnes: t = Tensor::full(shape, 1.0, true); break;
    case Init::kNormal: t = Tensor::randn(shape, rng_, stddev, true); break;
    case Init::kFanIn: {
      const double fan_in = shape.empty() ? 1.0 : static_cast<double>(shape[0]);
      t = Tensor::randn(shape, rng_, 1.0 / std::sqrt(fan_in), true);
      break;
    }
  }
  entries_.emplace(name, Entry{t, decay});
  order_.push_back(name);
  return t;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter " + name);
  return it->second.tensor;
}

bool ParamStore::decays(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter " + name);
  return it->second.decay;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, e] : entries_) n += e.tensor.numel();
  return n;
}

ParamStore ParamStore::clone(bool requires_grad) const {
  ParamStore out;
  out.rng_ = rng_;
  out.order_ = order_;
  for (const auto& [name, e] : entries_) out.entries_.emplace(name, Entry{e.tensor.clone(requires_grad), e.decay});
  return out;
}

ParamStore ParamStore::select(std::string_view prefix) const { return select(std::vector<std::string_view>{prefix}); }

ParamStore ParamStore::select(const std::vector<std::string_view>& prefixes) const {
  ParamStore out;
  for (const auto& name : order_) {
    for (const auto prefix : prefixes) {
      if (name.compare(0, prefix.size(), prefix) == 0) {
        out.entries_.emplace(name, entries_.at(name));
        out.order_.push_back(name);
        break;
      }
    }
  }
  return out;
}

void ParamStore::zero_grad() {
  for (auto& [_, e] : entries_) e.tensor.zero_grad();
}

void ParamStore::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ostringstream index;
  for (const auto& name : order_) {
    const auto& e = entries_.at(name);
    index << name << ' ' << (e.decay ? 1 : 0) << '\n';
    save_tensor(dir / (name + ".lwt"), e.tensor);
  }
  write_file_atomic(dir / "index.txt", index.str());
}

ParamStore ParamStore::load(const std::filesystem::path& dir, bool requires_grad) {
  std::istringstream index(read_file(dir / "index.txt"));
  ParamStore out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(index, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name;
    int decay = 1;
    if (!(ls >> name >> decay)) throw ParseError("bad parameter index entry in " + dir.string(), lineno);
    Tensor t = load_tensor(dir / (name + ".lwt"));
    t.set_requires_grad(requires_grad);
    out.entries_.emplace(name, Entry{t, decay != 0});
    out.order_.push_back(name);
  }
  return out;
}

Linear Linear::make(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, bool with_bias) {
  Linear l;
  l.weight = store.param(name + ".weight", {in, out}, Init::kFanIn);
  if (with_bias) l.bias = store.param(name + ".bias", {out}, Init::kZeros);
  return l;
}

LayerNorm LayerNorm::make(ParamStore& store, const std::string& name, std::size_t dim) {
  return {store.param(name + ".ln_gamma", {dim}, Init::kOnes, 0.0, false),
          store.param(name + ".ln_beta", {dim}, Init::kZeros, 0.0, false)};
}

Mlp Mlp::make(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out) {
  return {Linear::make(store, name + ".fc1", in, hidden), Linear::make(store, name + ".fc2", hidden, out)};
}

MultiHeadAttention MultiHeadAttention::make(ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads) {
  if (heads == 0 || dim % heads != 0) throw ConfigError(name + ": width " + std::to_string(dim) + " not divisible by " + std::to_string(heads) + " heads");
  MultiHeadAttention m;
  m.wq = Linear::make(store, name + ".wq", dim, dim);
  m.wk = Linear::make(store, name + ".wk", dim, dim);
  m.wv = Linear::make(store, name + ".wv", dim, dim);
  m.wo = Linear::make(store, name + ".wo", dim, dim);
  m.heads = heads;
  return m;
}

Tensor MultiHeadAttention::operator()(const Tensor& xq, const Tensor& xkv, const AttentionOptions& opt) const {
  Tensor q = split_heads(wq(xq), heads);
  Tensor k = split_heads(wk(xkv), heads);
  Tensor v = split_heads(wv(xkv), heads);
  if (opt.q_pos) q = opt.q_pos(q);
  if (opt.k_pos) k = opt.k_pos(k);
  return wo(merge_heads(masked_attention(q, k, v, opt.mask, opt.probs)));
}

EncoderLayer EncoderLayer::make(ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads, std::size_t ffn_dim) {
  return {LayerNorm::make(store, name + ".norm1", dim), LayerNorm::make(store, name + ".norm2", dim),
          MultiHeadAttention::make(store, name + ".attn", dim, heads), Mlp::make(store, name + ".ffn", dim, ffn_dim, dim)};
}

Tensor EncoderLayer::operator()(const Tensor& x, const AttentionOptions& opt) const {
  Tensor h = ln1(x);
  Tensor y = add(x, attn(h, h, opt));
  return add(y, ffn(ln2(y)));
}

DecoderLayer DecoderLayer::make(ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads, std::size_t ffn_dim) {
  return {LayerNorm::make(store, name + ".norm_self", dim),
          LayerNorm::make(store, name + ".norm_cross", dim),
          LayerNorm::make(store, name + ".norm_mem", dim),
          LayerNorm::make(store, name + ".norm_ffn", dim),
          MultiHeadAttention::make(store, name + ".self_attn", dim, heads),
          MultiHeadAttention::make(store, name + ".cross_attn", dim, heads),
          Mlp::make(store, name + ".ffn", dim, ffn_dim, dim)};
}

Tensor DecoderLayer::operator()(const Tensor& x, const Tensor& memory, const AttentionOptions& self_opt,
                                const AttentionOptions& cross_opt) const {
  Tensor h = ln_self(x);
  Tensor y = add(x, self_attn(h, h, self_opt));
  y = add(y, cross_attn(ln_cross(y), ln_mem(memory), cross_opt));
  return add(y, ffn(ln_ffn(y)));
}

}  // namespace lwam::nc
