#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "unite/data.hpp"
#include "unite/losses.hpp"
#include "unite/model.hpp"

namespace unite {

struct OptimConfig {
  double lr0 = 1e-4;
  double decay_factor = 0.5;
  std::size_t decay_every_steps = 1000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t epochs = 25;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const OptimConfig&) const = default;
};

/// lr0 * decay_factor^floor(step / decay_every_steps).
double lr_at(std::size_t step, const OptimConfig& config);

/// AdamW moment buffers, one pair per model parameter in layout order.
struct OptimizerState {
  std::size_t step = 0;  ///< completed optimizer steps
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static OptimizerState zeros(const UniteModel& model);
};

/// One AdamW update at lr_at(state.step):
/// m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2;
/// p <- p - lr (m_hat / (sqrt(v_hat) + eps) + weight_decay p).
/// `grads` follow the parameter order. Non-finite gradients raise NumericError
/// naming the parameter.
UniteModel optimizer_step(const UniteModel& model, OptimizerState& state, const std::vector<std::vector<double>>& grads,
                          const OptimConfig& config);

/// Everything a run reads from its config file.
struct RunConfig {
  ModelConfig model;
  OptimConfig optim;
  ADConfig ad;
  std::size_t stride = 2;  ///< frame sampling stride

  /// Validates every section; throws ValidationError naming the field.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

/// `key = value` lines, '#' comments. Keys are section-qualified
/// (model.depth, optim.lr0, ad.delta_within, data.stride). Omitted keys keep
/// their defaults; unknown keys are rejected.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Every field, one per line, in a form parse_run_config reads back exactly.
std::string format_run_config(const RunConfig& config);

struct TrainState {
  UniteModel model;
  OptimizerState optimizer;
  CenterState centers;
  std::size_t epochs_done = 0;
};

struct StepMetrics {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_ce = 0.0;
  double loss_within = 0.0;
  double loss_between = 0.0;
  double train_acc = 0.0;
};

inline constexpr const char* kMetricsHeader = "step,epoch,lr,loss_total,loss_ce,loss_within,loss_between,train_acc";
std::string format_metrics_row(const StepMetrics& m);

/// Loads train-split videos and cuts them into segments.
std::vector<VideoSegment> load_segments(const Manifest& manifest, Split split, const ModelConfig& model,
                                        std::size_t stride);

/// Fresh state: initialized model (seeded from optim.seed), zero moments and
/// zero centers.
TrainState initial_state(const RunConfig& config);

/// One optimization step on `batch` (indices into `segments`): forward,
/// unite_loss, backward, AdamW, then the center update.
StepMetrics train_step(TrainState& state, const std::vector<VideoSegment>& segments,
                       const std::vector<std::size_t>& batch, const RunConfig& config, std::size_t epoch);

struct TrainOptions {
  std::filesystem::path out_dir;               ///< empty: nothing written
  std::optional<std::filesystem::path> resume;  ///< checkpoint to continue from
  std::size_t max_epochs_this_run = 0;         ///< 0: run to config.optim.epochs
  std::function<void(const StepMetrics&)> on_step;
};

struct TrainResult {
  TrainState state;
  std::vector<StepMetrics> metrics;  ///< steps executed by this call
};

/// Epoch driver. Reshuffles per epoch, logs every step, writes
/// checkpoints/epoch_NNNN.ckpt and checkpoints/last.ckpt after each epoch and
/// appends the epoch's rows to metrics.csv. Deterministic given the config.
TrainResult train(const std::vector<VideoSegment>& segments, const RunConfig& config, const TrainOptions& options = {});

// Checkpoints -----------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
/// Restores the full training state. Throws ParseError on malformed files.
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace unite
