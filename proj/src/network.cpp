#include "scws/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "binary_io.hpp"

namespace scws {

void NetworkConfig::validate() const {
  for (int c : stage_channels) {
    if (c < 1) throw std::invalid_argument("network.stage_channels entries must be >= 1");
  }
  if (global_channels < 1 || decoder_channels < 1) throw std::invalid_argument("network channels must be >= 1");
  if (input_size < 16 || input_size % 16 != 0) {
    throw std::invalid_argument("network.input_size must be a positive multiple of 16, got " +
                                std::to_string(input_size));
  }
}

ag::Var aggm_combine(const ag::Var& f_h, const ag::Var& f_g, const ag::Var& f_l, const AggmWeights& w) {
  return ag::weighted_fuse({f_h, f_g, f_l}, {w.high, w.global, w.low}, kAggmEps);
}

Network::Network(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const auto& ch = cfg_.stage_channels;
  const int d = cfg_.decoder_channels;
  int cin = 3;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string prefix = "enc" + std::to_string(s + 1);
    encoder_[s][0] = make_conv_bn(prefix + ".conv1", cin, ch[s], 3, rng);
    encoder_[s][1] = make_conv_bn(prefix + ".conv2", ch[s], ch[s], 3, rng);
    cin = ch[s];
  }
  global_ = make_conv_bias("global.conv", ch[3], cfg_.global_channels, 1, rng);
  top_ = make_conv_bn("dec.top", ch[3], d, 1, rng);
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string prefix = "dec" + std::to_string(i + 1);
    DecoderStage& st = decoder_[i];
    st.lateral = make_conv_bn(prefix + ".lateral", ch[2 - i], d, 1, rng);
    st.global_proj = make_conv_bias(prefix + ".global", cfg_.global_channels, d, 1, rng);
    st.gate_h = make_conv_bias(prefix + ".gate_h", d, 1, 3, rng);
    st.gate_g = make_conv_bias(prefix + ".gate_g", d, 1, 3, rng);
    st.gate_l = make_conv_bias(prefix + ".gate_l", d, 1, 3, rng);
    st.refine = make_conv_bn(prefix + ".refine", d, d, 3, rng);
    st.head = make_conv_bias(prefix + ".head", d, 1, 3, rng);
  }
  final_head_ = make_conv_bias("final.head", d, 1, 3, rng);
}

std::size_t Network::add_param(const std::string& name, Tensor value, bool decay) {
  Parameter p;
  p.name = name;
  p.momentum = Tensor(value.shape());
  p.var = ag::leaf(std::move(value));
  p.decay = decay;
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

namespace {

// He-normal: std = sqrt(2 / fan_in).
Tensor he_normal(int cout, int cin, int k, Rng& rng) {
  Tensor w({std::size_t(cout), std::size_t(cin), std::size_t(k), std::size_t(k)});
  const double stddev = std::sqrt(2.0 / (cin * k * k));
  for (double& v : w.data()) v = rng.normal(0.0, stddev);
  return w;
}

}  // namespace

Network::ConvBn Network::make_conv_bn(const std::string& name, int cin, int cout, int k, Rng& rng) {
  ConvBn m{};
  m.weight = add_param(name + ".weight", he_normal(cout, cin, k, rng), true);
  m.gamma = add_param(name + ".bn.gamma", Tensor({std::size_t(cout)}, 1.0), false);
  m.beta = add_param(name + ".bn.beta", Tensor({std::size_t(cout)}, 0.0), false);
  stats_.push_back({name + ".bn", ops::BatchNormStats::fresh(std::size_t(cout))});
  m.stats = stats_.size() - 1;
  return m;
}

Network::ConvBias Network::make_conv_bias(const std::string& name, int cin, int cout, int k, Rng& rng) {
  ConvBias m{};
  m.weight = add_param(name + ".weight", he_normal(cout, cin, k, rng), true);
  m.bias = add_param(name + ".bias", Tensor({std::size_t(cout)}, 0.0), true);
  return m;
}

namespace {
constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;
}  // namespace

ag::Var Network::apply(const ConvBn& m, const ag::Var& x, int stride, const ForwardOptions& opt) {
  const int k = static_cast<int>(params_[m.weight].value().dim(2));
  ag::Var y = ag::conv2d(x, params_[m.weight].var, stride, k / 2);
  y = ag::batch_norm(y, params_[m.gamma].var, params_[m.beta].var, stats_[m.stats].stats, opt.mode, kBnEps,
                     kBnMomentum, opt.update_stats);
  return ag::relu(y);
}

ag::Var Network::apply(const ConvBias& m, const ag::Var& x) {
  const int k = static_cast<int>(params_[m.weight].value().dim(2));
  return ag::conv2d(x, params_[m.weight].var, params_[m.bias].var, 1, k / 2);
}

ag::Var Network::gate(const ConvBias& m, const ag::Var& f) { return ag::softplus(ag::global_avg_pool(apply(m, f))); }

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value().numel();
  return n;
}

void Network::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::array<ag::Var, 4> Network::encode(const Tensor& image, const ForwardOptions& opt) {
  require_rank(image, 4, "encode input");
  if (image.dim(1) != 3) throw ShapeError("encode: expected 3 input channels (dim 1), got " + std::to_string(image.dim(1)));
  if (image.dim(2) % 16 != 0 || image.dim(3) % 16 != 0 || image.dim(2) == 0 || image.dim(3) == 0) {
    throw ShapeError("encode: input size " + std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(3)) +
                     " (dims 2,3) must be divisible by 16");
  }
  ag::Var x = ag::constant(image);
  std::array<ag::Var, 4> feats;
  for (std::size_t s = 0; s < 4; ++s) {
    x = apply(encoder_[s][0], x, 1, opt);
    x = apply(encoder_[s][1], x, 2, opt);
    feats[s] = x;
  }
  return feats;
}

ag::Var Network::global_context(const ag::Var& deepest) {
  return ag::relu(apply(global_, ag::global_avg_pool(deepest)));
}

AggmResult Network::aggm_fuse(std::size_t stage, const ag::Var& f_h, const ag::Var& f_l, const ag::Var& f_g,
                              const ForwardOptions& opt, const std::optional<std::array<double, 3>>& forced) {
  if (stage >= 3) throw std::out_of_range("aggm_fuse: stage must be 0..2");
  const DecoderStage& st = decoder_[stage];
  const std::size_t h = f_l.value().dim(2), w = f_l.value().dim(3);
  if (f_h.value().rank() != 4 || f_h.value().dim(2) != h || f_h.value().dim(3) != w) {
    throw ShapeError("aggm_fuse: f_h shape " + to_string(f_h.shape()) + " is not aligned with f_l " +
                     to_string(f_l.shape()));
  }
  const ag::Var low = apply(st.lateral, f_l, 1, opt);
  const ag::Var global = ag::resize_bilinear(ag::relu(apply(st.global_proj, f_g)), h, w);

  AggmResult r;
  const std::size_t n = f_l.value().dim(0);
  auto fixed = [n](double v) { return ag::constant(Tensor({n, 1, 1, 1}, v)); };
  if (forced) {
    r.weights = {fixed((*forced)[0]), fixed((*forced)[1]), fixed((*forced)[2])};
  } else if (!cfg_.enable_aggm) {
    r.weights = {fixed(1.0), fixed(1.0), fixed(1.0)};
  } else {
    r.weights = {gate(st.gate_h, f_h), gate(st.gate_g, global), gate(st.gate_l, low)};
  }
  r.fused = aggm_combine(f_h, global, low, r.weights);
  r.refined = apply(st.refine, r.fused, 1, opt);
  return r;
}

NetworkOutputs Network::forward(const Tensor& image, const ForwardOptions& opt) {
  const std::size_t in_h = image.dim(2), in_w = image.dim(3);
  const auto feats = encode(image, opt);
  const ag::Var g = global_context(feats[3]);
  ag::Var h = apply(top_, feats[3], 1, opt);

  NetworkOutputs out;
  std::array<ag::Var, 3> stage_logits;
  for (std::size_t i = 0; i < 3; ++i) {
    const ag::Var& skip = feats[2 - i];
    const ag::Var f_h = ag::resize_bilinear(h, skip.value().dim(2), skip.value().dim(3));
    AggmResult r = aggm_fuse(i, f_h, skip, g, opt);
    h = r.refined;
    out.aggm[i] = r.weights;
    stage_logits[i] = apply(decoder_[i].head, h);
  }
  out.final_logits = apply(final_head_, ag::resize_bilinear(h, in_h, in_w));
  out.final_map = ag::sigmoid(out.final_logits);
  for (std::size_t q = 0; q < 3; ++q) {
    out.intermediate_logits[q] = ag::resize_bilinear(stage_logits[2 - q], in_h, in_w);
    out.intermediates[q] = ag::sigmoid(out.intermediate_logits[q]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[5] = {'S', 'C', 'W', 'S', '1'};

void write_config(std::ostream& os, const NetworkConfig& c) {
  for (int v : c.stage_channels) binio::put<std::int32_t>(os, v);
  binio::put<std::int32_t>(os, c.input_size);
  binio::put<std::int32_t>(os, c.global_channels);
  binio::put<std::int32_t>(os, c.decoder_channels);
  binio::put<std::uint8_t>(os, c.enable_aggm ? 1 : 0);
}

NetworkConfig read_config(std::istream& is) {
  NetworkConfig c;
  for (int& v : c.stage_channels) v = binio::get<std::int32_t>(is);
  c.input_size = binio::get<std::int32_t>(is);
  c.global_channels = binio::get<std::int32_t>(is);
  c.decoder_channels = binio::get<std::int32_t>(is);
  c.enable_aggm = binio::get<std::uint8_t>(is) != 0;
  return c;
}

void read_into(std::istream& is, Network& net, const std::string& where) {
  try {
    char magic[5];
    if (!is.read(magic, 5) || !std::equal(magic, magic + 5, kMagic)) {
      throw CheckpointError(where + ": not a checkpoint (bad magic)");
    }
    const NetworkConfig cfg = read_config(is);
    const auto& mine = net.config();
    if (cfg.stage_channels != mine.stage_channels || cfg.global_channels != mine.global_channels ||
        cfg.decoder_channels != mine.decoder_channels) {
      throw CheckpointError(where + ": network config does not match");
    }
    const auto n_params = binio::get<std::uint32_t>(is);
    if (n_params != net.parameters().size()) {
      throw CheckpointError(where + ": expected " + std::to_string(net.parameters().size()) + " parameters, found " +
                            std::to_string(n_params));
    }
    for (auto& p : net.parameters()) {
      const std::string name = binio::get_string(is);
      Tensor t = binio::get_tensor(is);
      if (name != p.name) throw CheckpointError(where + ": expected parameter " + p.name + ", found " + name);
      if (!t.same_shape(p.value())) {
        throw CheckpointError(where + ": parameter " + name + " has shape " + to_string(t.shape()) + ", expected " +
                              to_string(p.value().shape()));
      }
      p.value() = std::move(t);
    }
    const auto n_stats = binio::get<std::uint32_t>(is);
    if (n_stats != net.norm_stats().size()) throw CheckpointError(where + ": normalization stats count mismatch");
    for (auto& s : net.norm_stats()) {
      const std::string name = binio::get_string(is);
      Tensor mean = binio::get_tensor(is);
      Tensor var = binio::get_tensor(is);
      if (name != s.name) throw CheckpointError(where + ": expected stats " + s.name + ", found " + name);
      if (!mean.same_shape(s.stats.running_mean) || !var.same_shape(s.stats.running_var)) {
        throw CheckpointError(where + ": stats " + name + " shape mismatch");
      }
      s.stats.running_mean = std::move(mean);
      s.stats.running_var = std::move(var);
    }
  } catch (const binio::FormatError& e) {
    throw CheckpointError(where + ": " + e.what());
  }
}

}  // namespace

void write_checkpoint(std::ostream& os, const Network& net) {
  os.write(kMagic, 5);
  write_config(os, net.config());
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(net.parameters().size()));
  for (const auto& p : net.parameters()) {
    binio::put_string(os, p.name);
    binio::put_tensor(os, p.value());
  }
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(net.norm_stats().size()));
  for (const auto& s : net.norm_stats()) {
    binio::put_string(os, s.name);
    binio::put_tensor(os, s.stats.running_mean);
    binio::put_tensor(os, s.stats.running_var);
  }
}

void read_checkpoint(std::istream& is, Network& net, const std::string& where) { read_into(is, net, where); }

void save_checkpoint(const std::filesystem::path& path, const Network& net) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    write_checkpoint(os, net);
    if (!os) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[5];
  if (!is.read(magic, 5) || !std::equal(magic, magic + 5, kMagic)) {
    throw CheckpointError(path.string() + ": not a checkpoint (bad magic)");
  }
  NetworkConfig cfg;
  try {
    cfg = read_config(is);
    cfg.validate();
  } catch (const std::exception& e) {
    throw CheckpointError(path.string() + ": bad config: " + e.what());
  }
  Network net(cfg, 0);
  is.seekg(0);
  read_into(is, net, path.string());
  return net;
}

void load_weights(const std::filesystem::path& path, Network& net) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  read_into(is, net, path.string());
}

}  // namespace scws
