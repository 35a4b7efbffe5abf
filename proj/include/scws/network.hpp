#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "scws/autograd.hpp"
#include "scws/ops.hpp"
#include "scws/random.hpp"

namespace scws {

struct NetworkConfig {
  std::array<int, 4> stage_channels{16, 32, 64, 128};
  int input_size = 64;
  int global_channels = 128;
  int decoder_channels = 32;
  bool enable_aggm = true;  // false: fixed equal weights in every fusion

  void validate() const;
};

/// A trainable tensor: the value and gradient live in an autograd leaf, the
/// momentum buffer is owned by the optimizer.
struct Parameter {
  std::string name;
  ag::Var var;
  Tensor momentum;
  bool decay = true;  // normalization gamma/beta are exempt from weight decay

  Tensor& value() { return var.node()->value; }
  const Tensor& value() const { return var.node()->value; }
  const Tensor& grad() const { return var.node()->grad; }
  void zero_grad() { var.node()->grad = Tensor(); }
};

struct NamedStats {
  std::string name;
  ops::BatchNormStats stats;
};

struct ForwardOptions {
  ops::Mode mode = ops::Mode::Train;
  bool update_stats = true;  // only meaningful in Train mode
};

/// Per-sample fusion weights of one AGGM, each [N,1,1,1].
struct AggmWeights {
  ag::Var high, global, low;
};

struct AggmResult {
  ag::Var fused;    // normalized weighted sum, before refinement
  ag::Var refined;  // conv3x3-BN-ReLU of `fused`
  AggmWeights weights;
};

struct NetworkOutputs {
  ag::Var final_map;                          // [N,1,H,W], post-sigmoid
  std::array<ag::Var, 3> intermediates;       // nearest-to-output stage first
  ag::Var final_logits;                       // at input resolution
  std::array<ag::Var, 3> intermediate_logits;  // at input resolution
  std::array<AggmWeights, 3> aggm;             // deepest stage first
};

inline constexpr double kAggmEps = 1e-8;

/// Normalized weighted fusion (w_h f_h + w_g f_g + w_l f_l) / max(w_h + w_g + w_l, eps).
ag::Var aggm_combine(const ag::Var& f_h, const ag::Var& f_g, const ag::Var& f_l, const AggmWeights& w);

class Network {
 public:
  Network(const NetworkConfig& cfg, std::uint64_t seed);
  // Parameters are shared autograd leaves; a shallow copy would alias them.
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  const NetworkConfig& config() const { return cfg_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::deque<NamedStats>& norm_stats() { return stats_; }
  const std::deque<NamedStats>& norm_stats() const { return stats_; }
  std::size_t parameter_count() const;
  void zero_grad();

  /// Four feature maps at strides 2, 4, 8, 16. `image` is [N,3,H,W] in [0,1].
  std::array<ag::Var, 4> encode(const Tensor& image, const ForwardOptions& opt);
  /// GAP of the deepest features, then 1x1 conv + ReLU: [N,global_channels,1,1].
  ag::Var global_context(const ag::Var& deepest);
  /// Decoder stage `stage` (0 = deepest). f_h is already at f_l's size; f_l and
  /// f_g are the raw skip features and global context before projection.
  /// `forced` replaces the learned weights (tests and ablations).
  AggmResult aggm_fuse(std::size_t stage, const ag::Var& f_h, const ag::Var& f_l, const ag::Var& f_g,
                       const ForwardOptions& opt, const std::optional<std::array<double, 3>>& forced = std::nullopt);
  NetworkOutputs forward(const Tensor& image, const ForwardOptions& opt);

 private:
  struct ConvBn {
    std::size_t weight, gamma, beta, stats;
  };
  struct ConvBias {
    std::size_t weight, bias;
  };
  struct DecoderStage {
    ConvBn lateral;
    ConvBias global_proj;
    ConvBias gate_h, gate_g, gate_l;
    ConvBn refine;
    ConvBias head;
  };

  std::size_t add_param(const std::string& name, Tensor value, bool decay);
  ConvBn make_conv_bn(const std::string& name, int cin, int cout, int k, Rng& rng);
  ConvBias make_conv_bias(const std::string& name, int cin, int cout, int k, Rng& rng);
  ag::Var apply(const ConvBn& m, const ag::Var& x, int stride, const ForwardOptions& opt);
  ag::Var apply(const ConvBias& m, const ag::Var& x);
  ag::Var gate(const ConvBias& m, const ag::Var& f);

  NetworkConfig cfg_;
  std::vector<Parameter> params_;
  std::deque<NamedStats> stats_;
  std::array<std::array<ConvBn, 2>, 4> encoder_{};
  ConvBias global_{};
  ConvBn top_{};
  std::array<DecoderStage, 3> decoder_{};
  ConvBias final_head_{};
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint: magic "SCWS1", network config, named shape-prefixed
/// little-endian f64 parameter arrays, then normalization running stats.
/// Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Network& net);
Network load_checkpoint(const std::filesystem::path& path);
/// Loads parameter values into an existing network, validating every name and shape.
void load_weights(const std::filesystem::path& path, Network& net);

/// Stream forms, used when a checkpoint is embedded in a larger file.
void write_checkpoint(std::ostream& os, const Network& net);
void read_checkpoint(std::istream& is, Network& net, const std::string& where);

}  // namespace scws
