#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lwam/numcore/nn.hpp"
#include "lwam/trainer/config.hpp"

namespace lwam::train {

// Linear warmup over ceil(warmup_frac * total) steps, then cosine annealing to lr_floor.
double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
  double clip_norm = 0;  // 0 disables clipping
};

// Decoupled weight decay: p <- p - lr*wd*p, then the bias-corrected Adam step.
class AdamW {
 public:
  AdamW(const nc::ParamStore& params, const AdamWConfig& cfg);

  // Consumes the accumulated gradients of `params` and returns the pre-clip global grad norm.
  double step(nc::ParamStore& params, double lr);

  std::size_t steps_taken() const { return t_; }
  void save(const std::filesystem::path& dir) const;
  void load(const std::filesystem::path& dir);

 private:
  AdamWConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

}  // namespace lwam::train
