#include "scws/trainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

#include "binary_io.hpp"
#include "json.hpp"
#include "scws/random.hpp"

namespace scws {

namespace fs = std::filesystem;

double lr_at(long iter, long total_iters, const TrainConfig& cfg) {
  if (total_iters < 2 || iter < 0 || iter > total_iters) {
    throw std::out_of_range("lr_at: need 0 <= iter <= total_iters and total_iters >= 2, got iter=" +
                            std::to_string(iter) + " total=" + std::to_string(total_iters));
  }
  const long peak = total_iters / 2;
  // Convex blends so that both ends of each leg are reproduced exactly.
  if (iter <= peak) {
    const double f = double(iter) / double(peak);
    return cfg.lr_min * (1.0 - f) + cfg.lr_max * f;
  }
  const double f = double(iter - peak) / double(total_iters - peak);
  return cfg.lr_max * (1.0 - f) + cfg.lr_min * f;
}

void sgd_step(std::vector<Parameter>& params, double lr, double momentum, double weight_decay) {
  for (auto& p : params) {
    Tensor& value = p.value();
    const Tensor& grad = p.grad();
    if (!grad.empty() && !grad.same_shape(value)) {
      throw ShapeError("sgd_step: gradient of " + p.name + " has shape " + to_string(grad.shape()) + ", expected " +
                       to_string(value.shape()));
    }
    if (p.momentum.empty()) p.momentum = Tensor(value.shape());
    if (!p.momentum.same_shape(value)) throw ShapeError("sgd_step: momentum buffer of " + p.name + " has the wrong shape");
    const double decay = p.decay ? weight_decay : 0.0;
    for (std::size_t i = 0; i < value.numel(); ++i) {
      const double g = (grad.empty() ? 0.0 : grad[i]) + decay * value[i];
      p.momentum[i] = momentum * p.momentum[i] + g;
      value[i] -= lr * p.momentum[i];
    }
  }
}

Batch make_batch(const std::vector<Sample>& samples) {
  if (samples.empty()) throw std::invalid_argument("make_batch: empty batch");
  const std::size_t h = samples[0].height(), w = samples[0].width();
  Batch b;
  b.images = Tensor({samples.size(), 3, h, w});
  const std::size_t per = 3 * h * w;
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const Sample& s = samples[n];
    if (s.height() != h || s.width() != w) throw ShapeError("make_batch: sample " + s.id + " has a different size");
    std::copy(s.image.data().begin(), s.image.data().end(), b.images.data().begin() + long(n * per));
    b.scribbles.push_back(s.scribble);
    b.ids.push_back(s.id);
  }
  return b;
}

namespace {

std::string join_ids(const std::vector<std::string>& ids) {
  std::string s;
  for (const auto& id : ids) s += (s.empty() ? "" : ",") + id;
  return s;
}

Tensor image_of(const Tensor& images, std::size_t n) {
  const std::size_t h = images.dim(2), w = images.dim(3), per = 3 * h * w;
  Tensor t({3, h, w});
  std::copy(images.data().begin() + long(n * per), images.data().begin() + long((n + 1) * per), t.data().begin());
  return t;
}

void put_map(Tensor& dst, std::size_t n, const std::vector<double>& grad, double scale) {
  const std::size_t plane = dst.dim(2) * dst.dim(3);
  for (std::size_t i = 0; i < plane; ++i) dst[n * plane + i] = grad[i] * scale;
}

LossBreakdown run_objective(Network& net, const Batch& batch, const TrainConfig& cfg, bool backward) {
  const ForwardOptions full_opt{ops::Mode::Train, backward};
  const ForwardOptions small_opt{ops::Mode::Train, false};
  const NetworkOutputs full = net.forward(batch.images, full_opt);
  std::optional<NetworkOutputs> small;
  if (cfg.enable_ssc) {
    const std::size_t s = cfg.small_size();
    small = net.forward(ops::resize_bilinear(batch.images, s, s), small_opt);
  }

  const std::size_t n = batch.images.dim(0);
  const double inv_n = 1.0 / double(n);
  Tensor g_final(full.final_map.shape());
  std::array<Tensor, 3> g_inter;
  for (std::size_t q = 0; q < 3; ++q) g_inter[q] = Tensor(full.intermediates[q].shape());
  Tensor g_small = small ? Tensor(small->final_map.shape()) : Tensor();

  LossBreakdown out;
  for (std::size_t s = 0; s < n; ++s) {
    const SaliencyMap final_map = map_from_tensor(full.final_map.value(), s);
    const std::array<SaliencyMap, 3> inter{map_from_tensor(full.intermediates[0].value(), s),
                                           map_from_tensor(full.intermediates[1].value(), s),
                                           map_from_tensor(full.intermediates[2].value(), s)};
    std::optional<SaliencyMap> small_map;
    if (small) small_map = map_from_tensor(small->final_map.value(), s);
    const Tensor image = image_of(batch.images, s);
    ObjectiveInputs in;
    in.final_map = &final_map;
    in.intermediates = inter;
    in.small_map = small_map ? &*small_map : nullptr;
    in.image = &image;
    in.mask = &batch.scribbles[s];
    const ObjectiveResult r = total_objective(in, cfg.objective, cfg.lsc, cfg.enable_lsc);
    out.ce += r.terms.ce * inv_n;
    out.lsc += r.terms.lsc * inv_n;
    out.ssc += r.terms.ssc * inv_n;
    out.aux += r.terms.aux * inv_n;
    out.total += r.terms.total * inv_n;
    if (backward) {
      put_map(g_final, s, r.grad_final, inv_n);
      for (std::size_t q = 0; q < 3; ++q) put_map(g_inter[q], s, r.grad_intermediate[q], inv_n);
      if (small) put_map(g_small, s, r.grad_small, inv_n);
    }
  }
  if (!std::isfinite(out.total)) {
    throw NumericalError("non-finite loss (total=" + std::to_string(out.total) + ") on batch [" +
                         join_ids(batch.ids) + "]");
  }
  if (backward) {
    std::vector<std::pair<ag::Var, Tensor>> seeds;
    seeds.emplace_back(full.final_map, std::move(g_final));
    for (std::size_t q = 0; q < 3; ++q) seeds.emplace_back(full.intermediates[q], std::move(g_inter[q]));
    if (small) seeds.emplace_back(small->final_map, std::move(g_small));
    ag::backward(seeds);
  }
  return out;
}

}  // namespace

LossBreakdown compute_gradients(Network& net, const Batch& batch, const TrainConfig& cfg) {
  return run_objective(net, batch, cfg, true);
}

LossBreakdown evaluate_objective(Network& net, const Batch& batch, const TrainConfig& cfg) {
  return run_objective(net, batch, cfg, false);
}

StepResult train_step(Network& net, const Batch& batch, TrainState& state, long total_iters, const TrainConfig& cfg) {
  net.zero_grad();
  StepResult r;
  r.losses = compute_gradients(net, batch, cfg);
  for (const auto& p : net.parameters()) {
    if (!p.grad().empty() && !p.grad().all_finite()) {
      throw NumericalError("non-finite gradient for " + p.name + " on batch [" + join_ids(batch.ids) + "]");
    }
  }
  r.lr = lr_at(std::min(state.iteration, total_iters), total_iters, cfg);
  sgd_step(net.parameters(), r.lr, cfg.momentum, cfg.weight_decay);
  ++state.iteration;
  return r;
}

// ---------------------------------------------------------------------------
// Training state

namespace {
constexpr char kStateMagic[10] = {'S', 'C', 'W', 'S', 'S', 'T', 'A', 'T', 'E', '1'};
}

void save_train_state(const fs::path& path, const Network& net, const TrainState& state, const TrainConfig& cfg) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    os.write(kStateMagic, sizeof kStateMagic);
    binio::put_string(os, config_to_json(cfg, -1));
    binio::put<std::int64_t>(os, state.iteration);
    binio::put<std::int32_t>(os, state.epoch);
    binio::put<double>(os, state.best_f_beta);
    binio::put<std::int32_t>(os, state.best_epoch);
    write_checkpoint(os, net);
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(net.parameters().size()));
    for (const auto& p : net.parameters()) binio::put_tensor(os, p.momentum);
    if (!os) throw CheckpointError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

TrainState load_train_state(const fs::path& path, Network& net, const TrainConfig& cfg) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open training state " + path.string());
  const std::string where = path.string();
  try {
    char magic[sizeof kStateMagic];
    if (!is.read(magic, sizeof magic) || !std::equal(magic, magic + sizeof magic, kStateMagic)) {
      throw CheckpointError(where + ": not a training state file (bad magic)");
    }
    if (binio::get_string(is) != config_to_json(cfg, -1)) {
      throw CheckpointError(where + ": saved config differs from the requested config; cannot resume");
    }
    TrainState s;
    s.iteration = binio::get<std::int64_t>(is);
    s.epoch = binio::get<std::int32_t>(is);
    s.best_f_beta = binio::get<double>(is);
    s.best_epoch = binio::get<std::int32_t>(is);
    read_checkpoint(is, net, where);
    if (binio::get<std::uint32_t>(is) != net.parameters().size()) {
      throw CheckpointError(where + ": momentum buffer count mismatch");
    }
    for (auto& p : net.parameters()) {
      Tensor m = binio::get_tensor(is);
      if (!m.same_shape(p.value())) throw CheckpointError(where + ": momentum of " + p.name + " has the wrong shape");
      p.momentum = std::move(m);
    }
    return s;
  } catch (const binio::FormatError& e) {
    throw CheckpointError(where + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Loop

long iterations_per_epoch(std::size_t samples, int batch_size) {
  return static_cast<long>((samples + std::size_t(batch_size) - 1) / std::size_t(batch_size));
}

namespace {
// Stream tags keep the shuffle and augmentation draws independent.
constexpr std::uint64_t kShuffleStream = 1ULL << 40;
constexpr std::uint64_t kAugmentStream = 2ULL << 40;
}  // namespace

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::stream(seed, kShuffleStream + std::uint64_t(epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[std::size_t(rng.integer(0, long(i) - 1))]);
  return order;
}

Sample training_sample(const Sample& s, const TrainConfig& cfg, int epoch, std::size_t index) {
  const std::uint64_t aug_seed = Rng::stream(cfg.seed, kAugmentStream + std::uint64_t(epoch), index).bits();
  return augment(s, aug_seed, std::size_t(cfg.train_size));
}

std::vector<Sample> load_all(const DatasetManifest& manifest) {
  std::vector<Sample> out;
  out.reserve(manifest.size());
  for (std::size_t i = 0; i < manifest.size(); ++i) out.push_back(load_sample(manifest, i));
  return out;
}

namespace {

// Drops records written after the saved state, e.g. by an interrupted epoch.
void trim_log(const fs::path& path, const TrainState& state) {
  std::vector<std::string> kept;
  {
    std::ifstream is(path);
    std::string line;
    while (std::getline(is, line)) {
      const auto rec = nlohmann::json::parse(line, nullptr, false);
      if (rec.is_discarded()) break;
      if (rec.contains("iter") && rec["iter"].get<long>() >= state.iteration) break;
      if (rec.contains("epoch") && rec["epoch"].get<int>() > state.epoch) break;
      kept.push_back(line);
    }
  }
  std::ofstream os(path, std::ios::trunc);
  for (const auto& line : kept) os << line << '\n';
}

}  // namespace

TrainSummary train(const DatasetManifest& manifest, const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  const std::vector<Sample> samples = load_all(manifest);
  std::vector<Sample> eval_samples;
  if (options.eval_set) {
    eval_samples = load_all(*options.eval_set);
  } else if (manifest.has_masks()) {
    eval_samples = samples;
  }
  std::erase_if(eval_samples, [](const Sample& s) { return !s.mask; });

  fs::create_directories(options.out_dir);
  const fs::path ckpt = options.out_dir / "model.ckpt";
  const fs::path state_path = options.out_dir / "state.bin";
  const fs::path log_path = options.out_dir / "train_log.jsonl";
  {
    std::ofstream os(options.out_dir / "config.json", std::ios::trunc);
    os << config_to_json(cfg) << '\n';
  }

  Network net(cfg.resolved_network(), cfg.seed);
  TrainState state;
  const bool resuming = options.resume && fs::exists(state_path);
  if (resuming) {
    state = load_train_state(state_path, net, cfg);
    trim_log(log_path, state);
  }
  std::ofstream log(log_path, resuming ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("cannot open " + log_path.string());

  const long per_epoch = iterations_per_epoch(samples.size(), cfg.batch_size);
  const long total = std::max<long>(2, per_epoch * cfg.epochs);
  TrainSummary summary;
  for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(samples.size(), cfg.seed, epoch);
    LossBreakdown epoch_mean;
    for (long b = 0; b < per_epoch; ++b) {
      std::vector<Sample> members;
      const std::size_t lo = std::size_t(b) * std::size_t(cfg.batch_size);
      const std::size_t hi = std::min(samples.size(), lo + std::size_t(cfg.batch_size));
      for (std::size_t k = lo; k < hi; ++k) members.push_back(training_sample(samples[order[k]], cfg, epoch, order[k]));
      const long iter = state.iteration;
      const StepResult r = train_step(net, make_batch(members), state, total, cfg);
      nlohmann::ordered_json rec;
      rec["iter"] = iter;
      rec["lr"] = r.lr;
      rec["l_ce"] = r.losses.ce;
      rec["l_lsc"] = r.losses.lsc;
      rec["l_ssc"] = r.losses.ssc;
      rec["l_aux"] = r.losses.aux;
      rec["l_total"] = r.losses.total;
      log << rec.dump() << '\n';
      epoch_mean.total += r.losses.total / double(per_epoch);
    }
    log.flush();
    std::string line = "epoch " + std::to_string(epoch + 1) + "/" + std::to_string(cfg.epochs) +
                       " mean l_total " + std::to_string(epoch_mean.total);
    const bool last = epoch + 1 == cfg.epochs;
    if (!eval_samples.empty() && cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || last)) {
      const EvalResult ev = evaluate_samples(net, eval_samples);
      nlohmann::ordered_json rec;
      rec["epoch"] = epoch + 1;
      rec["f_beta"] = ev.dataset.f_beta;
      rec["e_xi"] = ev.dataset.e_xi;
      rec["mae"] = ev.dataset.mae;
      log << rec.dump() << '\n';
      log.flush();
      if (ev.dataset.f_beta > state.best_f_beta) {
        state.best_f_beta = ev.dataset.f_beta;
        state.best_epoch = epoch + 1;
      }
      summary.last_eval = ev;
      line += " f_beta " + std::to_string(ev.dataset.f_beta) + " mae " + std::to_string(ev.dataset.mae);
    }
    state.epoch = epoch + 1;
    save_checkpoint(ckpt, net);
    save_train_state(state_path, net, state, cfg);
    if (options.progress) options.progress(line);
  }
  summary.state = state;
  summary.checkpoint = ckpt;
  return summary;
}

// ---------------------------------------------------------------------------
// Inference

std::vector<SaliencyMap> infer_batch(Network& net, const std::vector<const Tensor*>& images) {
  const std::size_t side = std::size_t(net.config().input_size);
  Tensor batch({images.size(), 3, side, side});
  const std::size_t per = 3 * side * side;
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Tensor& img = *images[n];
    require_rank(img, 3, "infer image");
    const Tensor r = ops::resize_bilinear(img.reshaped({1, 3, img.dim(1), img.dim(2)}), side, side);
    std::copy(r.data().begin(), r.data().end(), batch.data().begin() + long(n * per));
  }
  const NetworkOutputs out = net.forward(batch, {ops::Mode::Eval, false});
  std::vector<SaliencyMap> maps;
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Tensor single = tensor_from_map(map_from_tensor(out.final_map.value(), n));
    const Tensor back = ops::resize_bilinear(single, images[n]->dim(1), images[n]->dim(2));
    maps.push_back(map_from_tensor(back, 0));
  }
  return maps;
}

SaliencyMap infer(Network& net, const Tensor& image) { return infer_batch(net, {&image}).front(); }

namespace {
constexpr std::size_t kInferChunk = 16;
}

EvalResult evaluate_samples(Network& net, const std::vector<Sample>& samples) {
  std::vector<ImageMetrics> per_image;
  for (std::size_t lo = 0; lo < samples.size(); lo += kInferChunk) {
    std::vector<const Tensor*> chunk;
    for (std::size_t i = lo; i < std::min(samples.size(), lo + kInferChunk); ++i) chunk.push_back(&samples[i].image);
    const auto maps = infer_batch(net, chunk);
    for (std::size_t k = 0; k < maps.size(); ++k) {
      const Sample& s = samples[lo + k];
      if (!s.mask) throw DataError("evaluate: sample " + s.id + " has no ground-truth mask");
      per_image.push_back({s.id, evaluate_image(maps[k], *s.mask)});
    }
  }
  return aggregate(std::move(per_image));
}

double scale_consistency(Network& net, const std::vector<Sample>& samples, std::size_t full_size,
                         std::size_t small_size) {
  double total = 0.0;
  std::size_t pixels = 0;
  const ForwardOptions eval{ops::Mode::Eval, false};
  for (const Sample& s : samples) {
    const Tensor full_img = ops::resize_bilinear(s.image.reshaped({1, 3, s.height(), s.width()}), full_size, full_size);
    const Tensor small_img = ops::resize_bilinear(full_img, small_size, small_size);
    const Tensor down = ops::resize_bilinear(net.forward(full_img, eval).final_map.value(), small_size, small_size);
    const Tensor small = net.forward(small_img, eval).final_map.value();
    for (std::size_t i = 0; i < small.numel(); ++i) total += std::abs(small[i] - down[i]);
    pixels += small.numel();
  }
  return pixels ? total / double(pixels) : 0.0;
}

}  // namespace scws
