#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cei/blocks.hpp"
#include "cei/dataset.hpp"
#include "cei/metrics.hpp"
#include "cei/random.hpp"

namespace cei {

struct TrainConfig {
  double lr0 = 2e-4;
  double beta1 = 0.1;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double decay_factor = 0.5;
  std::size_t decay_period = 100;
  std::size_t epochs = 200;
  std::size_t batch = 4;
  std::size_t patch = 64;
  /// 0 means ceil(training images / batch).
  std::size_t steps_per_epoch = 0;
  bool augment = true;
  std::uint64_t seed = 1;
  /// Network width used when a strategy starts from random weights.
  std::size_t channels = 16;
  LossConfig loss;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Parses a JSON object; every key is optional and unknown keys are rejected.
TrainConfig parse_train_config(const std::string& json_text);
TrainConfig load_train_config(const std::string& path);
std::string train_config_to_json(const TrainConfig& cfg);

/// lr0 * decay_factor ^ floor(epoch / decay_period).
double lr_schedule(const TrainConfig& cfg, std::size_t epoch);

struct AdamOptions {
  double beta1 = 0.1;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moments kept in double, one pair per parameter entry.
struct AdamState {
  std::vector<Tensor64> m;
  std::vector<Tensor64> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ParamSet& params);
};

/// One bias-corrected Adam update. Throws ShapeError if shapes disagree.
void adam_step(AdamState& state, ParamSet& params, const std::vector<Tensor>& grads, double lr,
               const AdamOptions& opts = {});

struct FlipDraw {
  bool horizontal = false;
  bool vertical = false;
};

FlipDraw draw_flips(Rng& rng);
/// Flips every plane of batch item `n` in place.
void apply_flips(Tensor& t, std::size_t n, FlipDraw flips);
/// Independent flips per batch item, identical for input and label.
void augment(PatchBatch& batch, Rng& rng);

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
};

/// "epoch,mean_loss,lr" followed by one line per epoch.
std::string format_trace(const std::vector<EpochRecord>& trace);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::string stage, std::size_t epoch, std::size_t batch_index);
  [[nodiscard]] const std::string& stage() const noexcept { return stage_; }
  [[nodiscard]] std::size_t epoch() const noexcept { return epoch_; }
  [[nodiscard]] std::size_t batch_index() const noexcept { return batch_index_; }

 private:
  std::string stage_;
  std::size_t epoch_;
  std::size_t batch_index_;
};

using ProgressFn = std::function<void(const std::string& stage, const EpochRecord&)>;

struct TrainResult {
  ParamSet params;
  std::vector<EpochRecord> trace;
};

/// Minimizes the smoothing loss over random patches, starting from `model`'s
/// parameters. `stream` separates the random streams of different stages.
TrainResult train_operator(const DsanModel& model, const std::vector<ImagePair>& train, const TrainConfig& cfg,
                           const std::string& stage = "train", std::uint64_t stream = 0,
                           const ProgressFn& progress = {});

struct StrategyStage {
  /// Emitted model name, e.g. "A0".
  std::string model;
  /// Key into the dataset map, e.g. "A".
  std::string dataset;
  bool from_previous = false;
  /// 0 means TrainConfig::epochs.
  std::size_t epochs = 0;
};

struct StrategyPlan {
  std::string name;
  std::vector<StrategyStage> stages;
  /// Names of the two models handed to blending, (first, second).
  std::pair<std::string, std::string> blend_pair;

  /// Throws std::invalid_argument if the first stage is not random or a later one is.
  void validate() const;
};

/// Presets: "a2b2a", "b2a", "b2a2b", "single". Dataset keys are "A" and "B"; the
/// single-label preset uses "effect" and "identity".
StrategyPlan strategy_preset(const std::string& name);

struct StrategyResult {
  std::vector<std::pair<std::string, ParamSet>> models;
  std::map<std::string, std::vector<EpochRecord>> traces;

  [[nodiscard]] const ParamSet& model(const std::string& name) const;
};

/// Runs the stages in order. Each later stage starts from the previous stage's
/// final parameters. Missing datasets raise DatasetError; divergence raises
/// TrainingDiverged with the stage name.
StrategyResult run_strategy(const StrategyPlan& plan, const std::map<std::string, std::vector<ImagePair>>& datasets,
                            const TrainConfig& cfg, const ProgressFn& progress = {});

}  // namespace cei
