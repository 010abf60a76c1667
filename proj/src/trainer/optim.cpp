#include "lwam/trainer/optim.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "lwam/errors.hpp"
#include "lwam/numcore/io.hpp"

namespace lwam::train {

using nc::Tensor;

double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (total_steps == 0 || step > total_steps) throw DomainError("lr_at: step outside [0, total_steps]");
  const auto warmup = static_cast<std::size_t>(std::ceil(cfg.warmup_frac * static_cast<double>(total_steps)));
  if (step < warmup) return cfg.lr_peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (total_steps == warmup) return cfg.lr_peak;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return cfg.lr_floor + 0.5 * (cfg.lr_peak - cfg.lr_floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(const nc::ParamStore& params, const AdamWConfig& cfg) : cfg_(cfg) {
  for (const auto& name : params.names()) {
    m_[name].assign(params.at(name).numel(), 0.0);
    v_[name].assign(params.at(name).numel(), 0.0);
  }
}

double AdamW::step(nc::ParamStore& params, double lr) {
  double sq = 0;
  for (const auto& name : params.names()) {
    const Tensor& p = params.at(name);
    if (!m_.count(name)) throw ConfigError("optimizer has no state for parameter " + name);
    if (p.has_grad())
      for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
  const double clip = (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& name : params.names()) {
    Tensor p = params.at(name);
    auto data = p.mutable_data();
    auto& m = m_[name];
    auto& v = v_[name];
    const bool has = p.has_grad();
    const double wd = params.decays(name) ? cfg_.weight_decay : 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = has ? p.grad()[i] * clip : 0.0;
      data[i] -= lr * wd * data[i];
      m[i] = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * g * g;
      data[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
    }
  }
  params.zero_grad();
  return norm;
}

void AdamW::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ostringstream index;
  index << t_ << '\n';
  for (const auto& [name, m] : m_) {
    index << name << '\n';
    const auto& v = v_.at(name);
    nc::save_tensor(dir / (name + ".m.lwt"), Tensor::from({m.size()}, m));
    nc::save_tensor(dir / (name + ".v.lwt"), Tensor::from({v.size()}, v));
  }
  nc::write_file_atomic(dir / "index.txt", index.str());
}

void AdamW::load(const std::filesystem::path& dir) {
  std::istringstream index(nc::read_file(dir / "index.txt"));
  std::size_t t = 0;
  if (!(index >> t)) throw ParseError("optimizer index has no step count", 1);
  std::string name;
  std::size_t count = 0;
  while (index >> name) {
    auto it = m_.find(name);
    if (it == m_.end()) throw DataError("optimizer state names unknown parameter " + name);
    const Tensor m = nc::load_tensor(dir / (name + ".m.lwt"));
    const Tensor v = nc::load_tensor(dir / (name + ".v.lwt"));
    if (m.numel() != it->second.size() || v.numel() != it->second.size())
      throw DataError("optimizer state size mismatch for " + name);
    it->second.assign(m.data().begin(), m.data().end());
    v_[name].assign(v.data().begin(), v.data().end());
    ++count;
  }
  if (count != m_.size()) throw DataError("optimizer state is missing parameters");
  t_ = t;
}

}  // namespace lwam::train
