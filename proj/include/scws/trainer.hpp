#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "scws/data.hpp"
#include "scws/losses.hpp"
#include "scws/metrics.hpp"
#include "scws/network.hpp"

namespace scws {

/// Raised when a loss or gradient turns non-finite.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int epochs = 40;
  int batch_size = 8;
  double lr_max = 0.01;
  double lr_min = 1e-5;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  int train_size = 64;
  double rho = 0.5;  // down-scale factor of the SSC forward
  bool enable_lsc = true;
  bool enable_ssc = true;
  bool enable_aggm = true;
  int eval_every = 1;  // epochs between evaluations; 0 disables
  LscConfig lsc;
  ObjectiveConfig objective;
  NetworkConfig network;  // input_size and enable_aggm follow train_size and enable_aggm

  void validate() const;
  /// Network config with input_size and enable_aggm taken from this config.
  NetworkConfig resolved_network() const;
  /// Side of the SSC input: rho * train_size rounded to a multiple of 16.
  std::size_t small_size() const;
};

/// JSON mirror of TrainConfig. Unknown keys are rejected.
TrainConfig config_from_json(const std::string& json_text);
std::string config_to_json(const TrainConfig& cfg, int indent = 2);
/// Applies "dotted.key=value" overrides; values parse as JSON, falling back to a string.
TrainConfig apply_overrides(const TrainConfig& cfg, const std::vector<std::string>& overrides);

/// Triangle from lr_min at 0 to lr_max at floor(total/2) and back to lr_min at total.
double lr_at(long iter, long total_iters, const TrainConfig& cfg);

/// g = grad + decay * value (normalization parameters exempt); buf = momentum * buf + g; value -= lr * buf.
void sgd_step(std::vector<Parameter>& params, double lr, double momentum, double weight_decay);

struct Batch {
  Tensor images;  // [N,3,S,S]
  std::vector<ScribbleMask> scribbles;
  std::vector<std::string> ids;
};

Batch make_batch(const std::vector<Sample>& samples);

/// Batch means of the objective terms.
struct LossBreakdown {
  double ce = 0.0, lsc = 0.0, ssc = 0.0, aux = 0.0, total = 0.0;
};

/// Forward (dual-scale when SSC is on), objective, backward. Parameter
/// gradients are accumulated; nothing is updated.
LossBreakdown compute_gradients(Network& net, const Batch& batch, const TrainConfig& cfg);
/// Objective value only, with the same forward as compute_gradients.
LossBreakdown evaluate_objective(Network& net, const Batch& batch, const TrainConfig& cfg);

struct TrainState {
  long iteration = 0;
  int epoch = 0;  // next epoch to run
  double best_f_beta = -1.0;
  int best_epoch = -1;
};

struct StepResult {
  LossBreakdown losses;
  double lr = 0.0;
};

/// compute_gradients, then sgd_step at lr_at(state.iteration, total_iters).
StepResult train_step(Network& net, const Batch& batch, TrainState& state, long total_iters, const TrainConfig& cfg);

/// Training state file: magic "SCWSSTATE1", config JSON, counters, the
/// network checkpoint, then every momentum buffer.
void save_train_state(const std::filesystem::path& path, const Network& net, const TrainState& state,
                      const TrainConfig& cfg);
/// Restores into `net`, which must have been built from the same config.
TrainState load_train_state(const std::filesystem::path& path, Network& net, const TrainConfig& cfg);

struct TrainOptions {
  std::filesystem::path out_dir;
  std::optional<DatasetManifest> eval_set;  // defaults to the training set when it has masks
  bool resume = false;
  std::function<void(const std::string&)> progress;  // human-readable lines
};

struct TrainSummary {
  TrainState state;
  std::optional<EvalResult> last_eval;
  std::filesystem::path checkpoint;
};

long iterations_per_epoch(std::size_t samples, int batch_size);
/// Permutation of 0..n-1, a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);
/// The augmented sample for (epoch, index), independent of batching and workers.
Sample training_sample(const Sample& s, const TrainConfig& cfg, int epoch, std::size_t index);

/// Writes model.ckpt, state.bin, train_log.jsonl and config.json under out_dir.
TrainSummary train(const DatasetManifest& manifest, const TrainConfig& cfg, const TrainOptions& options);

/// Eval-mode forward at the network's input size, resized back to the image size.
SaliencyMap infer(Network& net, const Tensor& image);
std::vector<SaliencyMap> infer_batch(Network& net, const std::vector<const Tensor*>& images);
EvalResult evaluate_samples(Network& net, const std::vector<Sample>& samples);

/// Mean |S_small - resize(S_full, small)| over the samples in eval mode.
double scale_consistency(Network& net, const std::vector<Sample>& samples, std::size_t full_size,
                         std::size_t small_size);

std::vector<Sample> load_all(const DatasetManifest& manifest);

}  // namespace scws
