#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lwam::train {

enum class Geometry { kDistill, kConcat, kOff };
Geometry parse_geometry(const std::string& s);
const char* to_string(Geometry g);

struct Toggles {
  bool compression = true;
  Geometry geometry = Geometry::kDistill;
  bool world_model = true;
  bool ego_status = true;
};

// The three prediction stride rows: 0->8, -3->0->4->8 and the dense -3..8 pattern.
const std::vector<std::vector<int>>& stride_patterns();

struct TrainConfig {
  // [train]
  double alpha = 0.1;
  double beta = 0.2;
  double gamma = 0.1;
  double lr_peak = 2e-4;
  double weight_decay = 0.05;
  double warmup_frac = 0.10;
  double lr_floor = 1e-6;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;
  double ema_momentum = 0.99;
  std::size_t epochs = 10;
  std::size_t steps = 0;  // 0: epochs * batches per epoch
  std::size_t batch_size = 2;
  std::uint64_t seed = 0;
  std::vector<int> stride{-3, 0, 4, 8};

  // [toggles]
  Toggles toggles;

  // [data]
  std::string corpus;
  std::size_t max_scenes = 0;  // 0: all
  std::string eval_corpus;
  std::size_t eval_scenes = 0;

  // [model]
  std::size_t queries = 16;
  std::size_t d_e = 64;
  std::size_t d_l = 32;
  std::size_t enc_layers = 2;
  std::size_t enc_heads = 4;
  std::size_t wm_layers = 2;
  std::size_t wm_heads = 4;
  std::size_t dec_layers = 2;
  std::size_t dec_heads = 4;
  std::array<double, 3> pose_scale{10.0, 10.0, 1.0};

  // [eval]
  double replan_interval = 0.5;
  double max_time = 0;  // 0: route-dependent budget

  // Throws ConfigError.
  void validate() const;
};

// Sectioned key=value text. Unknown sections or keys are errors.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);
std::string to_ini(const TrainConfig& cfg);

}  // namespace lwam::train
