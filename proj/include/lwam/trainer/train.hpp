#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lwam/metrics/metrics.hpp"
#include "lwam/trainer/model.hpp"
#include "lwam/trainer/optim.hpp"
#include "lwam/worldgen/closed_loop.hpp"

namespace lwam::train {

struct StepRecord {
  std::size_t step = 0;  // 1-based optimizer update
  std::size_t epoch = 0;
  double lr = 0;
  double grad_norm = 0;
  LossValues loss;
};

std::string to_json(const StepRecord& r);
// Throws ParseError with the 1-based line number of the first malformed record.
std::vector<StepRecord> read_log(std::istream& in);

struct TrainOptions {
  std::filesystem::path out;   // empty: keep everything in memory
  bool resume = false;         // continue from out/checkpoint
  std::size_t stop_after = 0;  // stop (with a checkpoint) after this many updates; 0 runs to the end
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  std::vector<StepRecord> log;  // records produced by this call
  std::size_t steps = 0;        // updates completed overall
  std::size_t total_steps = 0;
  nc::ParamStore params;
};

std::size_t batches_per_epoch(const TrainConfig& cfg, std::size_t dataset_size);
std::size_t total_steps(const TrainConfig& cfg, std::size_t dataset_size);
// Sample order of one epoch, seeded by (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

// Writes out/train_log.jsonl, out/checkpoint/ after every epoch and at the end, and the final
// weights plus config under out/model and out/config.ini.
TrainResult train(const TrainConfig& cfg, const Dataset& data, const TrainOptions& opt = {});

// Binds an inference model to trained weights. Throws DataError if any parameter is missing.
Model bind_model(nc::ParamStore& store, const TrainConfig& cfg, std::size_t patches);

// A trained run directory (config.ini plus model/ or checkpoint/online).
struct Trained {
  TrainConfig cfg;
  nc::ParamStore params;
};
Trained load_trained(const std::filesystem::path& dir);

// Mean L_traj over a dataset without building graphs.
double mean_traj_loss(const Model& model, const Dataset& data);

struct OpenLoopResult {
  double ade = 0;
  double fde = 0;
  std::vector<double> per_scene;
};
// Planner maps a sample to an ego-local trajectory at the anchor frame.
OpenLoopResult open_loop(const Dataset& data, const std::function<world::Trajectory(const Sample&)>& planner);
OpenLoopResult open_loop(const Model& model, const Dataset& data);

// Fraction of predicted future frames whose ego-head command matches the ground truth.
double command_accuracy(const Model& model, const Dataset& data);

// Renders the views, encodes the current frame and follows the candidate of the active command.
class ModelPolicy : public world::Policy {
 public:
  ModelPolicy(const Model& model, const world::RenderConfig& render) : model_(model), render_(render) {}
  std::string name() const override { return "model"; }
  world::PlanResult plan(const world::WorldSpec& w, const world::EgoState& ego, double time) override;

 private:
  const Model& model_;
  world::RenderConfig render_;
};

// Raster tensor [M, S, C] and teacher tensor [M, S, D_g] of a live state.
Tensor render_rasters(const world::WorldSpec& w, const world::EgoState& ego, const world::RenderConfig& render,
                      double time);
Tensor render_teacher(const world::WorldSpec& w, const world::EgoState& ego, const world::RenderConfig& render,
                      double time);

struct ClosedLoopResult {
  std::vector<metrics::MetricReport> reports;
  double route_completion = 0;
  double hd_score = 0;
};
ClosedLoopResult closed_loop(world::Policy& policy, const Dataset& data, const TrainConfig& cfg,
                             const std::function<void(const std::string&, const world::Rollout&)>& on_rollout = {});

// Scene-query attention of the last encoder layer for one view: head-averaged [N, S].
struct AttentionMap {
  std::size_t queries = 0, patches = 0, grid_h = 0, grid_w = 0;
  std::vector<double> weights;
};
AttentionMap attention_probe(const Model& model, const Sample& s, int view);

struct AblationRow {
  std::string name;
  TrainConfig cfg;
};
// "table3": the seven component rows; "table5": the three stride rows. Throws ConfigError otherwise.
std::vector<AblationRow> ablation_rows(const std::string& matrix, const TrainConfig& base);

struct AblationResult {
  std::string name;
  double ade = 0;
  std::vector<metrics::MetricReport> reports;
};
AblationResult run_ablation_row(const AblationRow& row, const Dataset& train_data, const Dataset& eval_data);
std::string ablation_header();
std::string ablation_csv_row(const AblationResult& r);

}  // namespace lwam::train
