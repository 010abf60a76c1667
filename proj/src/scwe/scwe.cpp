#include "lwam/scwe/scwe.hpp"

#include <cmath>

#include "lwam/errors.hpp"

namespace lwam::scwe {

void EncoderConfig::validate() const {
  if (queries == 0) throw ConfigError("encoder needs at least one scene query");
  if (heads == 0 || d_e % heads != 0) throw ConfigError("encoder width must be divisible by the head count");
  if (d_l == 0 || d_l > d_e) throw ConfigError("latent width must lie in [1, D_e]");
  if (layers == 0 || ffn == 0 || patches == 0 || c_in == 0 || d_g == 0) throw ConfigError("encoder sizes must be positive");
}

Encoder::Encoder(nc::ParamStore& store, const EncoderConfig& cfg, const std::string& prefix) : cfg_(cfg) {
  cfg_.validate();
  embed_ = nc::Linear::make(store, prefix + ".embed", cfg.c_in, cfg.d_e);
  pos_ = store.param(prefix + ".pos", {cfg.patches, cfg.d_e}, nc::Init::kNormal, 0.02, false);
  queries_ = store.param(prefix + ".queries", {cfg.queries, cfg.d_e}, nc::Init::kNormal, 0.02, false);
  for (std::size_t i = 0; i < cfg.layers; ++i)
    layers_.push_back(nc::EncoderLayer::make(store, prefix + ".layer" + std::to_string(i), cfg.d_e, cfg.heads, cfg.ffn));
  ln_out_ = nc::LayerNorm::make(store, prefix + ".norm_out", cfg.d_e);
  out_ = nc::Linear::make(store, prefix + ".out", cfg.d_e, cfg.d_l);
}

EncodeOutput Encoder::encode_view(const Tensor& patches, std::vector<double>* attention) const {
  if (patches.rank() != 2 || patches.dim(0) != cfg_.patches || patches.dim(1) != cfg_.c_in)
    throw ShapeError("encode_view expects [" + std::to_string(cfg_.patches) + ", " + std::to_string(cfg_.c_in) +
                     "], got " + nc::to_string(patches.shape()));
  Tensor x = nc::concat({queries_, nc::add(embed_(patches), pos_)}, 0);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    nc::AttentionOptions opt;
    if (i + 1 == layers_.size()) opt.probs = attention;
    x = layers_[i](x, opt);
  }
  Tensor z = out_(ln_out_(x));
  const std::size_t n = cfg_.queries;
  return {nc::slice(z, 0, 0, n), nc::slice(z, 0, n, n + cfg_.patches)};
}

EncodeOutput Encoder::encode(const Tensor& inputs) const {
  if (inputs.rank() != 4 || inputs.dim(2) != cfg_.patches || inputs.dim(3) != cfg_.c_in)
    throw ShapeError("encode expects [T, M, S, C_in], got " + nc::to_string(inputs.shape()));
  const std::size_t T = inputs.dim(0), M = inputs.dim(1);
  std::vector<Tensor> scene, image;
  for (std::size_t t = 0; t < T; ++t) {
    const Tensor frame = nc::slice(inputs, 0, t, t + 1);
    for (std::size_t m = 0; m < M; ++m) {
      const Tensor view = nc::reshape(nc::slice(frame, 1, m, m + 1), {cfg_.patches, cfg_.c_in});
      auto out = encode_view(view);
      scene.push_back(out.scene);
      image.push_back(out.image);
    }
  }
  return {nc::reshape(nc::concat(scene, 0), {T, M, cfg_.queries, cfg_.d_l}),
          nc::reshape(nc::concat(image, 0), {T, M, cfg_.patches, cfg_.d_l})};
}

nc::Linear make_projector(nc::ParamStore& store, const EncoderConfig& cfg, const std::string& name) {
  return nc::Linear::make(store, name, cfg.d_l, cfg.d_g);
}

Tensor align_loss(const Tensor& image_tokens, const Tensor& teacher, const nc::Linear& phi) {
  if (teacher.requires_grad()) throw ContractError("teacher features must be frozen");
  const std::size_t d_l = image_tokens.dim(-1), d_g = teacher.dim(-1);
  if (image_tokens.numel() / d_l != teacher.numel() / d_g)
    throw ShapeError("align_loss token counts differ: " + nc::to_string(image_tokens.shape()) + " vs " +
                     nc::to_string(teacher.shape()));
  const std::size_t tokens = image_tokens.numel() / d_l;
  const Tensor a = nc::layer_norm(phi(nc::reshape(image_tokens, {tokens, d_l})), Tensor(), Tensor());
  const Tensor b = nc::layer_norm(nc::reshape(teacher, {tokens, d_g}), Tensor(), Tensor());
  return nc::add_scalar(nc::scale(nc::mean_reduce(nc::cosine_similarity(a, b)), -1.0), 1.0);
}

Tensor concat_map(std::size_t d_g, std::size_t d_l, std::uint64_t seed) {
  nc::Rng rng(seed);
  return Tensor::randn({d_g, d_l}, rng, 1.0 / std::sqrt(static_cast<double>(d_g)));
}

Tensor concat_geometry(const Tensor& context, const Tensor& teacher, const Tensor& map) {
  if (teacher.requires_grad() || map.requires_grad()) throw ContractError("concatenated geometry must be frozen");
  return nc::concat({context, nc::matmul(teacher, map)}, 0);
}

}  // namespace lwam::scwe
