#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lwam/dlwm/dlwm.hpp"
#include "lwam/scwe/scwe.hpp"
#include "lwam/trainer/config.hpp"
#include "lwam/trajdec/trajdec.hpp"
#include "lwam/worldgen/corpus.hpp"

namespace lwam::train {

using nc::Tensor;

struct Sample {
  std::string id;
  world::Scenario scenario;
  std::vector<Tensor> rasters;  // per stored frame, [M, S, C]
  std::vector<Tensor> teacher;  // per stored frame, [M, S, D_g]

  std::size_t index_of(int rel) const;
  const world::EgoState& ego(int rel) const { return scenario.frame(rel).ego; }
  int command() const { return ego(0).command; }
};

class Dataset {
 public:
  // Throws DataError naming gen-data when the corpus or a teacher cache is missing.
  static Dataset load(const std::filesystem::path& root, std::size_t max_scenes = 0);

  std::size_t size() const { return samples_.size(); }
  const Sample& operator[](std::size_t i) const { return samples_.at(i); }
  std::size_t patches() const;
  const world::RenderConfig& render() const;

 private:
  std::vector<Sample> samples_;
};

// Ego encoder input of a state: one-hot command, scaled velocity and acceleration.
Tensor ego_input(const world::EgoState& e);

// Tokens handed to the trajectory decoder, with their rotary coordinates.
struct Memory {
  Tensor tokens;
  std::vector<dlwm::Coord> coords;
};

class Model {
 public:
  // Creates or binds every module the toggles need. Inference mode skips the world model,
  // the ego heads and the alignment projector.
  Model(nc::ParamStore& store, const TrainConfig& cfg, std::size_t patches, bool inference = false);

  // rasters [M, S, C] -> scene [M, N, D_l], image [M, S, D_l]
  scwe::EncodeOutput encode_frame(const Tensor& rasters) const;
  // Current frame block: compressed scene tokens (or all patch tokens without compression),
  // the ego slot, and the mapped teacher features under the concatenation variant.
  Memory memory(const scwe::EncodeOutput& frame, const world::EgoState& ego, const Tensor* teacher) const;
  // Candidates [K, n_p, 3] from the current frame only.
  Tensor plan(const Tensor& rasters, const world::EgoState& ego, const Tensor* teacher) const;

  const TrainConfig& config() const { return cfg_; }
  const scwe::EncoderConfig& encoder_config() const { return enc_cfg_; }
  const scwe::Encoder& encoder() const { return *encoder_; }
  const dlwm::EgoEncoder& ego_encoder() const { return ego_enc_; }
  const trajdec::TrajectoryDecoder& decoder() const { return *decoder_; }
  const dlwm::WorldModel* world_model() const { return wm_ ? &*wm_ : nullptr; }
  const dlwm::EgoHeads* ego_heads() const { return heads_ ? &*heads_ : nullptr; }
  const nc::Linear* projector() const { return proj_ ? &*proj_ : nullptr; }
  const Tensor& concat_map() const { return concat_map_; }
  dlwm::WorldModelConfig world_model_config() const;

 private:
  TrainConfig cfg_;
  scwe::EncoderConfig enc_cfg_;
  std::optional<scwe::Encoder> encoder_;
  dlwm::EgoEncoder ego_enc_;
  std::optional<trajdec::TrajectoryDecoder> decoder_;
  std::optional<dlwm::WorldModel> wm_;
  std::optional<dlwm::EgoHeads> heads_;
  std::optional<nc::Linear> proj_;
  Tensor concat_map_;
};

// EMA shadow of the scene encoder and the ego encoder. Supplies the world-model targets.
class TargetNetwork {
 public:
  // Binds a shadow store holding the tracked parameters.
  TargetNetwork(nc::ParamStore shadow, const scwe::EncoderConfig& enc, std::size_t d_l);

  // Prefixes of the online parameters mirrored by the shadow.
  static std::vector<std::string_view> tracked();
  // Gradient-free copy of the tracked online parameters.
  static nc::ParamStore snapshot(const nc::ParamStore& online);

  void update(const nc::ParamStore& online, double momentum);
  const nc::ParamStore& store() const { return store_; }
  const scwe::Encoder& encoder() const { return encoder_; }
  const dlwm::EgoEncoder& ego() const { return ego_; }

 private:
  nc::ParamStore store_;
  std::size_t restored_;
  scwe::Encoder encoder_;
  dlwm::EgoEncoder ego_;
};

struct LossTerms {
  Tensor total;
  Tensor traj, align, wm, ego;  // undefined when toggled off
};

struct LossValues {
  double total = 0, traj = 0, align = 0, wm = 0, ego = 0;
};
LossValues values(const LossTerms& t);

// L_traj + alpha*L_align + beta*L_wm + gamma*L_ego over the defined terms.
Tensor weighted_total(const LossTerms& t, const TrainConfig& cfg);

// `target` is required when the world model is on.
// A non-finite term raises NumericalError naming the term.
LossTerms total_loss(const Model& model, const Sample& s, const TargetNetwork* target);

}  // namespace lwam::train
