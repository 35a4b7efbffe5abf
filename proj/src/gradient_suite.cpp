#include "scws/gradient_suite.hpp"

#include <algorithm>
#include <chrono>
#include <functional>

#include "scws/autograd.hpp"
#include "scws/data.hpp"
#include "scws/losses.hpp"
#include "scws/random.hpp"
#include "scws/trainer.hpp"

namespace scws {

bool GradSuiteResult::passed() const {
  return !entries.empty() && std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.report.passed; });
}

namespace {

constexpr double kStep = 1e-6;
constexpr double kOpTolerance = 1e-4;
constexpr double kNetworkTolerance = 1e-3;

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : seed_(seed), rng_(Rng::stream(seed, 0x5eed)) {}

  Tensor random(Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng_.uniform(lo, hi);
    return t;
  }

  SaliencyMap random_map(std::size_t h, std::size_t w) {
    SaliencyMap m(h, w);
    for (double& v : m.values) v = rng_.uniform(0.05, 0.95);
    return m;
  }

  ScribbleMask random_scribble(std::size_t h, std::size_t w) {
    ScribbleMask m(h, w);
    for (auto& l : m.labels) {
      const double u = rng_.uniform();
      l = u < 0.3 ? Label::Foreground : u < 0.6 ? Label::Background : Label::Unlabeled;
    }
    m.labels[0] = Label::Foreground;
    m.labels[1] = Label::Background;
    return m;
  }

  // Random linear functional of an op output, so every element contributes.
  ag::Var project(const ag::Var& out, std::uint64_t key) {
    Rng r = Rng::stream(seed_, 0xc0ef, key);
    Tensor coeff(out.shape());
    double total = 0.0;
    for (std::size_t i = 0; i < coeff.numel(); ++i) {
      coeff[i] = r.uniform(-1.0, 1.0);
      total += coeff[i] * out.value()[i];
    }
    return ag::scalar_function({out}, total, {coeff});
  }

  GradCheckOptions options(double tolerance, std::size_t coords) {
    GradCheckOptions o;
    o.step = kStep;
    o.tolerance = tolerance;
    o.max_coords_per_input = coords;
    o.seed = rng_.bits();
    return o;
  }

  void op(const std::string& name, const GradClosure& closure, const std::vector<Tensor>& inputs,
          std::size_t coords = 16) {
    const auto o = options(kOpTolerance, coords);
    add(name, "op", check_gradient(closure, inputs, o), kOpTolerance);
  }

  void map_loss(const std::string& name, const SaliencyMap& at, const std::function<double(const SaliencyMap&)>& value,
                const std::function<std::vector<double>(const SaliencyMap&)>& grad) {
    const std::size_t h = at.height, w = at.width;
    auto as_map = [h, w](const Tensor& t) { return SaliencyMap(h, w, std::vector<double>(t.data().begin(), t.data().end())); };
    const auto o = options(kOpTolerance, 0);
    add(name, "loss",
        check_gradient([&](const Tensor& t) { return value(as_map(t)); },
                       [&](const Tensor& t) { return Tensor({h, w}, grad(as_map(t))); }, Tensor({h, w}, at.values), o),
        kOpTolerance);
  }

  void add(const std::string& name, const std::string& group, const GradCheckReport& r, double tol) {
    entries.push_back({name, group, r, tol});
  }

  std::uint64_t seed_;
  Rng rng_;
  std::vector<GradSuiteEntry> entries;
};

void run_ops(Suite& s) {
  for (int stride : {1, 2}) {
    s.op("conv2d stride " + std::to_string(stride),
         [&s, stride](const std::vector<ag::Var>& in) {
           return s.project(ag::conv2d(in[0], in[1], in[2], stride, 1), 1 + std::uint64_t(stride));
         },
         {s.random({2, 2, 6, 6}), s.random({3, 2, 3, 3}), s.random({3})});
  }
  s.op("conv2d 1x1 no bias",
       [&s](const std::vector<ag::Var>& in) { return s.project(ag::conv2d(in[0], in[1], 1, 0), 4); },
       {s.random({2, 3, 4, 4}), s.random({2, 3, 1, 1})});
  for (auto mode : {ops::Mode::Train, ops::Mode::Eval}) {
    auto stats = std::make_shared<ops::BatchNormStats>(ops::BatchNormStats::fresh(3));
    for (std::size_t c = 0; c < 3; ++c) {
      stats->running_mean[c] = 0.1 * double(c);
      stats->running_var[c] = 0.5 + 0.2 * double(c);
    }
    s.op(mode == ops::Mode::Train ? "batch_norm train" : "batch_norm eval",
         [&s, stats, mode](const std::vector<ag::Var>& in) {
           return s.project(ag::batch_norm(in[0], in[1], in[2], *stats, mode, 1e-5, 0.1, false), 5);
         },
         {s.random({2, 3, 4, 4}), s.random({3}, 0.5, 1.5), s.random({3})});
  }
  s.op("sigmoid", [&s](const std::vector<ag::Var>& in) { return s.project(ag::sigmoid(in[0]), 6); },
       {s.random({2, 3, 4, 4}, -3, 3)});
  s.op("relu", [&s](const std::vector<ag::Var>& in) { return s.project(ag::relu(in[0]), 7); },
       {s.random({2, 3, 4, 4}, -3, 3)});
  s.op("softplus", [&s](const std::vector<ag::Var>& in) { return s.project(ag::softplus(in[0]), 8); },
       {s.random({2, 3, 4, 4}, -3, 3)});
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{9, 13}, {2, 3}}) {
    s.op("resize_bilinear to " + std::to_string(h) + "x" + std::to_string(w),
         [&s, h, w](const std::vector<ag::Var>& in) { return s.project(ag::resize_bilinear(in[0], h, w), 9); },
         {s.random({2, 2, 5, 6})});
  }
  s.op("global_avg_pool", [&s](const std::vector<ag::Var>& in) { return s.project(ag::global_avg_pool(in[0]), 10); },
       {s.random({2, 3, 4, 5})});
  s.op("add", [&s](const std::vector<ag::Var>& in) { return s.project(ag::add(in[0], in[1]), 11); },
       {s.random({2, 3, 3, 3}), s.random({2, 3, 3, 3})});
  std::vector<Tensor> fuse_in;
  for (int b = 0; b < 3; ++b) fuse_in.push_back(s.random({2, 3, 4, 4}));
  for (int b = 0; b < 3; ++b) fuse_in.push_back(s.random({2, 1, 1, 1}, 0.1, 2.0));
  s.op("weighted_fuse",
       [&s](const std::vector<ag::Var>& in) {
         return s.project(ag::weighted_fuse({in[0], in[1], in[2]}, {in[3], in[4], in[5]}, kAggmEps), 12);
       },
       fuse_in);
  s.op("sum", [](const std::vector<ag::Var>& in) { return ag::sum(in[0]); }, {s.random({2, 3, 2, 2})});
}

void run_losses(Suite& s) {
  const std::size_t h = 6, w = 7;
  const ScribbleMask mask = s.random_scribble(h, w);
  s.map_loss("partial_ce", s.random_map(h, w), [&](const SaliencyMap& m) { return partial_ce(m, mask).value; },
             [&](const SaliencyMap& m) { return partial_ce(m, mask).grad; });

  const Tensor image = s.random({3, h, w}, 0.0, 1.0);
  for (int k : {3, 5}) {
    LscConfig cfg;
    cfg.kernel_size = k;
    cfg.sigma_i = 0.5;
    const LscKernel kernel(image, cfg);
    s.map_loss("lsc_loss k=" + std::to_string(k), s.random_map(h, w),
               [&](const SaliencyMap& m) { return lsc_loss(m, kernel).value; },
               [&](const SaliencyMap& m) { return lsc_loss(m, kernel).grad; });
  }

  const SaliencyMap a = s.random_map(h, w), b = s.random_map(h, w);
  s.map_loss("ssc_loss w.r.t. small prediction", a, [&](const SaliencyMap& m) { return ssc_loss(m, b, 0.85).value; },
             [&](const SaliencyMap& m) { return ssc_loss(m, b, 0.85).grad_a; });
  s.map_loss("ssc_loss w.r.t. down-scaled prediction", b,
             [&](const SaliencyMap& m) { return ssc_loss(a, m, 0.85).value; },
             [&](const SaliencyMap& m) { return ssc_loss(a, m, 0.85).grad_b; });

  // Combined objective w.r.t. each of its five maps.
  std::array<SaliencyMap, 5> maps{s.random_map(h, w), s.random_map(h, w), s.random_map(h, w), s.random_map(h, w),
                                  s.random_map(h, w)};
  LscConfig lsc;
  lsc.sigma_i = 0.5;
  const ObjectiveConfig obj;
  auto evaluate = [&](const std::array<SaliencyMap, 5>& m) {
    ObjectiveInputs in;
    in.final_map = &m[0];
    in.intermediates = std::span<const SaliencyMap>(m.data() + 1, 3);
    in.small_map = &m[4];
    in.image = &image;
    in.mask = &mask;
    return total_objective(in, obj, lsc);
  };
  static const char* const names[5] = {"final", "intermediate 1", "intermediate 2", "intermediate 3", "small"};
  for (std::size_t which = 0; which < 5; ++which) {
    auto with = [&](const SaliencyMap& x) {
      auto m = maps;
      m[which] = x;
      return m;
    };
    s.map_loss(std::string("total_objective w.r.t. ") + names[which], maps[which],
               [&](const SaliencyMap& x) { return evaluate(with(x)).terms.total; },
               [&](const SaliencyMap& x) {
                 const auto r = evaluate(with(x));
                 return which == 0 ? r.grad_final : which == 4 ? r.grad_small : r.grad_intermediate[which - 1];
               });
  }
}

// Training objective against finite differences in `coords` distinct sampled
// parameter coordinates of the default architecture.
void run_network(Suite& s, int size, bool ssc, std::size_t coords) {
  TrainConfig cfg;
  cfg.train_size = size;
  cfg.enable_ssc = ssc;
  cfg.seed = s.seed_;
  Network net(cfg.resolved_network(), s.seed_ + 1);
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < 2; ++i) samples.push_back(synth_sample(std::size_t(size), s.seed_, i).sample);
  const Batch batch = make_batch(samples);

  std::vector<std::pair<std::size_t, std::size_t>> picked;
  auto& params = net.parameters();
  while (picked.size() < coords) {
    const auto p = std::size_t(s.rng_.integer(0, long(params.size()) - 1));
    const auto i = std::size_t(s.rng_.integer(0, long(params[p].value().numel()) - 1));
    if (std::find(picked.begin(), picked.end(), std::pair{p, i}) == picked.end()) picked.emplace_back(p, i);
  }
  auto set = [&](const Tensor& x) {
    for (std::size_t k = 0; k < picked.size(); ++k) params[picked[k].first].value()[picked[k].second] = x[k];
  };
  Tensor start({picked.size()});
  for (std::size_t k = 0; k < picked.size(); ++k) start[k] = params[picked[k].first].value()[picked[k].second];
  auto value = [&](const Tensor& x) {
    set(x);
    return evaluate_objective(net, batch, cfg).total;
  };
  auto gradient = [&](const Tensor& x) {
    set(x);
    net.zero_grad();
    compute_gradients(net, batch, cfg);
    Tensor g({picked.size()});
    for (std::size_t k = 0; k < picked.size(); ++k) {
      const Tensor& pg = params[picked[k].first].grad();
      g[k] = pg.empty() ? 0.0 : pg[picked[k].second];
    }
    return g;
  };
  const auto o = s.options(kNetworkTolerance, 0);
  const std::string name = "training objective " + std::to_string(size) + "x" + std::to_string(size) +
                           (ssc ? " dual-scale" : " single-scale") + ", " + std::to_string(coords) + " parameters";
  s.add(name, "network", check_gradient(value, gradient, start, o), kNetworkTolerance);
  set(start);
}

}  // namespace

GradSuiteResult run_gradient_suite(std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  Suite s(seed);
  run_ops(s);
  run_losses(s);
  run_network(s, 16, false, 32);
  run_network(s, 32, true, 32);
  GradSuiteResult r;
  r.entries = std::move(s.entries);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace scws
