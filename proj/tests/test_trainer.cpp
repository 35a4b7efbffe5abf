#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "scws/trainer.hpp"

using namespace scws;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("scws_trainer_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Reduced architecture that keeps the loop tests fast.
TrainConfig small_config(int size = 32) {
  TrainConfig c;
  c.train_size = size;
  c.batch_size = 4;
  c.network.stage_channels = {4, 6, 8, 8};
  c.network.global_channels = 8;
  c.network.decoder_channels = 6;
  return c;
}

Batch synth_batch(std::size_t n, std::size_t size, std::uint64_t seed) {
  std::vector<Sample> s;
  for (std::size_t i = 0; i < n; ++i) s.push_back(synth_sample(size, seed, i).sample);
  return make_batch(s);
}

Parameter scalar_param(double value) {
  Parameter p;
  p.name = "x";
  p.var = ag::leaf(Tensor({1}, value));
  return p;
}

void set_grad(Parameter& p, double g) { p.var.node()->grad = Tensor({1}, g); }

std::vector<nlohmann::json> read_log(const fs::path& p) {
  std::vector<nlohmann::json> out;
  std::ifstream is(p);
  std::string line;
  while (std::getline(is, line)) out.push_back(nlohmann::json::parse(line));
  return out;
}

}  // namespace

TEST_SUITE("lr_at") {
  TEST_CASE("endpoints and peak are exact") {
    const TrainConfig c;
    for (long total : {2L, 3L, 100L, 101L, 7500L}) {
      CHECK(lr_at(0, total, c) == 1e-5);
      CHECK(lr_at(total / 2, total, c) == 0.01);
      CHECK(lr_at(total, total, c) == 1e-5);
    }
  }

  TEST_CASE("quarter point") {
    CHECK(std::abs(lr_at(25, 100, TrainConfig{}) - 0.0050050) <= 1e-15);
    CHECK(std::abs(lr_at(75, 100, TrainConfig{}) - 0.0050050) <= 1e-15);
  }

  TEST_CASE("piecewise linear and monotone") {
    const TrainConfig c;
    for (long total : {100L, 101L, 999L}) {
      const long p = total / 2;
      for (long i = 0; i <= total; ++i) {
        const double expected = i <= p ? c.lr_min + (c.lr_max - c.lr_min) * double(i) / double(p)
                                       : c.lr_max - (c.lr_max - c.lr_min) * double(i - p) / double(total - p);
        CHECK(std::abs(lr_at(i, total, c) - expected) <= 1e-12);
        if (i < p) CHECK(lr_at(i, total, c) <= lr_at(i + 1, total, c));
        if (i >= p && i < total) CHECK(lr_at(i, total, c) >= lr_at(i + 1, total, c));
      }
    }
  }

  TEST_CASE("out-of-range arguments are rejected") {
    CHECK_THROWS_AS(lr_at(-1, 10, TrainConfig{}), std::out_of_range);
    CHECK_THROWS_AS(lr_at(11, 10, TrainConfig{}), std::out_of_range);
    CHECK_THROWS_AS(lr_at(0, 1, TrainConfig{}), std::out_of_range);
  }
}

TEST_SUITE("sgd_step") {
  TEST_CASE("vanilla descent") {
    std::vector<Parameter> ps{scalar_param(2.0)};
    set_grad(ps[0], 3.0);
    sgd_step(ps, 0.1, 0.0, 0.0);
    CHECK(ps[0].value()[0] == doctest::Approx(2.0 - 0.3).epsilon(1e-15));
  }

  TEST_CASE("two momentum steps move by -0.1 then -0.19") {
    std::vector<Parameter> ps{scalar_param(0.0)};
    set_grad(ps[0], 1.0);
    sgd_step(ps, 0.1, 0.9, 0.0);
    CHECK(ps[0].value()[0] == doctest::Approx(-0.1).epsilon(1e-15));
    sgd_step(ps, 0.1, 0.9, 0.0);
    CHECK(ps[0].value()[0] - (-0.1) == doctest::Approx(-0.19).epsilon(1e-14));
  }

  TEST_CASE("zero gradient coasts on the buffer") {
    std::vector<Parameter> ps{scalar_param(1.0)};
    ps[0].momentum = Tensor({1}, 0.5);
    set_grad(ps[0], 0.0);
    sgd_step(ps, 0.1, 0.9, 0.0);
    CHECK(ps[0].value()[0] == doctest::Approx(1.0 - 0.1 * 0.9 * 0.5).epsilon(1e-15));
  }

  TEST_CASE("weight decay applies only where enabled") {
    std::vector<Parameter> ps{scalar_param(2.0), scalar_param(2.0)};
    ps[1].decay = false;
    sgd_step(ps, 0.1, 0.0, 0.5);  // no gradient: treated as zero
    CHECK(ps[0].value()[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0).epsilon(1e-15));
    CHECK(ps[1].value()[0] == 2.0);
  }

  TEST_CASE("network normalization parameters are exempt") {
    Network net(small_config().resolved_network(), 1);
    for (const auto& p : net.parameters()) {
      const bool is_norm = p.name.find("bn.") != std::string::npos;
      CHECK_MESSAGE(p.decay == !is_norm, p.name);
    }
  }

  TEST_CASE("shape mismatch") {
    std::vector<Parameter> ps{scalar_param(1.0)};
    ps[0].var.node()->grad = Tensor({2});
    CHECK_THROWS_AS(sgd_step(ps, 0.1, 0.9, 0.0), ShapeError);
  }
}

TEST_SUITE("config") {
  TEST_CASE("defaults") {
    const TrainConfig c;
    CHECK(c.lr_max == 0.01);
    CHECK(c.lr_min == 1e-5);
    CHECK(c.momentum == 0.9);
    CHECK(c.weight_decay == 5e-4);
    CHECK(c.objective.beta == 0.3);
    CHECK(c.objective.alpha == 0.85);
    CHECK(c.small_size() == 32);
    CHECK_NOTHROW(c.validate());
  }

  TEST_CASE("JSON round trip is exact") {
    TrainConfig c = small_config();
    c.lr_max = 0.0123456789012345;
    c.seed = 18446744073709551615ULL;
    c.enable_lsc = false;
    c.objective.lambda = {0.1, 0.2, 0.3};
    const std::string text = config_to_json(c);
    CHECK(config_to_json(config_from_json(text)) == text);
    CHECK(config_from_json(text).lr_max == c.lr_max);
    CHECK(config_from_json(text).seed == c.seed);
  }

  TEST_CASE("partial documents fill defaults") {
    const TrainConfig c = config_from_json(R"({"epochs": 3, "lsc": {"kernel_size": 3}})");
    CHECK(c.epochs == 3);
    CHECK(c.lsc.kernel_size == 3);
    CHECK(c.lsc.sigma_p == 6.0);
  }

  TEST_CASE("unknown keys and bad types are rejected") {
    CHECK_THROWS_WITH_AS(config_from_json(R"({"epoch": 3})"), doctest::Contains("'epoch'"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(config_from_json(R"({"lsc": {"kernel": 3}})"), doctest::Contains("'lsc.kernel'"),
                         std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(R"({"epochs": "3"})"), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(R"({"epochs": 2.5})"), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(R"({"seed": -1})"), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(R"({"objective": {"lambda": [1, 2]}})"), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json("{not json"), std::invalid_argument);
  }

  TEST_CASE("invariants are enforced") {
    CHECK_THROWS_AS(config_from_json(R"({"lr_min": 0.1})"), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(R"({"rho": 1.0})"), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(R"({"batch_size": 0})"), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(R"({"lsc": {"kernel_size": 4}})"), std::invalid_argument);
    // 16 has no smaller multiple of 16 for the second scale.
    CHECK_THROWS_AS(config_from_json(R"({"train_size": 16})"), std::invalid_argument);
    CHECK_NOTHROW(config_from_json(R"({"train_size": 16, "enable_ssc": false})"));
  }

  TEST_CASE("small scale rounds to a multiple of 16") {
    TrainConfig c;
    c.train_size = 320;
    CHECK(c.small_size() == 160);
    c.rho = 0.3;
    CHECK(c.small_size() == 96);
    c.train_size = 64;
    c.rho = 0.5;
    CHECK(c.small_size() == 32);
  }

  TEST_CASE("dotted overrides") {
    const TrainConfig c =
        apply_overrides(TrainConfig{}, {"lsc.kernel_size=3", "objective.beta=0", "enable_ssc=false", "epochs=7",
                                        "objective.lambda=[1,1,1]"});
    CHECK(c.lsc.kernel_size == 3);
    CHECK(c.objective.beta == 0.0);
    CHECK_FALSE(c.enable_ssc);
    CHECK(c.epochs == 7);
    CHECK(c.objective.lambda[2] == 1.0);
    CHECK_THROWS_WITH_AS(apply_overrides(TrainConfig{}, {"lsc.kernal_size=3"}), doctest::Contains("lsc.kernal_size"),
                         std::invalid_argument);
    CHECK_THROWS_AS(apply_overrides(TrainConfig{}, {"lsc=3"}), std::invalid_argument);
    CHECK_THROWS_AS(apply_overrides(TrainConfig{}, {"epochs"}), std::invalid_argument);
    CHECK_THROWS_AS(apply_overrides(TrainConfig{}, {"epochs=abc"}), std::invalid_argument);
  }
}

TEST_SUITE("train_step") {
  TEST_CASE("disabling SSC gives an exact zero term") {
    TrainConfig c = small_config();
    c.enable_ssc = false;
    Network net(c.resolved_network(), 3);
    const Batch b = synth_batch(2, 32, 3);
    const LossBreakdown l = compute_gradients(net, b, c);
    CHECK(l.ssc == 0.0);
    CHECK(l.total > 0.0);
    // Only the full-scale forward touched the running statistics: a second
    // pass at another scale would leave a different trace than one pass.
    Network twin(c.resolved_network(), 3);
    twin.forward(b.images, {ops::Mode::Train, true});
    for (std::size_t i = 0; i < net.norm_stats().size(); ++i) {
      const auto& a = net.norm_stats()[i].stats;
      const auto& t = twin.norm_stats()[i].stats;
      for (std::size_t k = 0; k < a.running_mean.numel(); ++k) {
        CHECK(a.running_mean[k] == t.running_mean[k]);
        CHECK(a.running_var[k] == t.running_var[k]);
      }
    }
  }

  TEST_CASE("breakdown components add up to the total") {
    for (bool lsc : {true, false}) {
      TrainConfig c = small_config();
      c.enable_lsc = lsc;
      Network net(c.resolved_network(), 4);
      const LossBreakdown l = evaluate_objective(net, synth_batch(3, 32, 4), c);
      CHECK(std::abs(l.ce + l.ssc + c.objective.beta * l.lsc + l.aux - l.total) <= 1e-10);
      CHECK(l.ssc > 0.0);
      if (!lsc) CHECK(l.lsc == 0.0);
      if (lsc) CHECK(l.lsc > 0.0);
    }
  }

  TEST_CASE("beta = 0 still reports the raw LSC term") {
    TrainConfig c = apply_overrides(small_config(), {"objective.beta=0"});
    Network net(c.resolved_network(), 5);
    const LossBreakdown l = evaluate_objective(net, synth_batch(2, 32, 5), c);
    CHECK(l.lsc > 0.0);
    CHECK(std::abs(l.ce + l.ssc + l.aux - l.total) <= 1e-10);
  }

  TEST_CASE("a tiny step decreases the objective in at least 95 of 100 trials") {
    TrainConfig c = small_config();
    int decreased = 0;
    for (int trial = 0; trial < 100; ++trial) {
      Network net(c.resolved_network(), 1000 + std::uint64_t(trial));
      const Batch b = synth_batch(2, 32, 2000 + std::uint64_t(trial));
      net.zero_grad();
      const double before = compute_gradients(net, b, c).total;
      sgd_step(net.parameters(), 1e-4, c.momentum, c.weight_decay);
      if (evaluate_objective(net, b, c).total < before) ++decreased;
    }
    INFO("decreased in " << decreased << " of 100 trials");
    CHECK(decreased >= 95);
  }

  TEST_CASE("every parameter receives a gradient within 10 batches") {
    TrainConfig c = small_config();
    Network net(c.resolved_network(), 6);
    std::vector<bool> seen(net.parameters().size(), false);
    TrainState state;
    for (int b = 0; b < 10; ++b) {
      train_step(net, synth_batch(4, 32, 100 + std::uint64_t(b)), state, 10, c);
      for (std::size_t i = 0; i < seen.size(); ++i) {
        const Tensor& g = net.parameters()[i].grad();
        for (std::size_t k = 0; k < g.numel() && !seen[i]; ++k) seen[i] = g[k] != 0.0;
      }
    }
    for (std::size_t i = 0; i < seen.size(); ++i) CHECK_MESSAGE(seen[i], net.parameters()[i].name);
    CHECK(state.iteration == 10);
  }

  TEST_CASE("non-finite loss names the batch") {
    TrainConfig c = small_config();
    Network net(c.resolved_network(), 7);
    net.parameters()[0].value()[0] = std::nan("");
    TrainState state;
    const Batch b = synth_batch(2, 32, 7);
    CHECK_THROWS_WITH_AS(train_step(net, b, state, 10, c), doctest::Contains("0000,0001"), NumericalError);
    CHECK(state.iteration == 0);
  }

  TEST_CASE("mixed image sizes cannot be batched") {
    std::vector<Sample> s{synth_sample(32, 1, 0).sample, synth_sample(48, 1, 1).sample};
    CHECK_THROWS_AS(make_batch(s), ShapeError);
    CHECK_THROWS_AS(make_batch({}), std::invalid_argument);
  }
}

TEST_SUITE("sampling") {
  TEST_CASE("epoch order is a seeded permutation") {
    const auto a = epoch_order(50, 9, 0), b = epoch_order(50, 9, 0), c = epoch_order(50, 9, 1);
    CHECK(a == b);
    CHECK(a != c);
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 50; ++i) CHECK(sorted[i] == i);
  }

  TEST_CASE("training samples depend only on seed, epoch and index") {
    const TrainConfig c = small_config();
    const Sample s = synth_sample(48, 2, 0).sample;
    const Sample a = training_sample(s, c, 3, 17), b = training_sample(s, c, 3, 17);
    CHECK(a.image.dim(1) == 32);
    CHECK(std::equal(a.image.data().begin(), a.image.data().end(), b.image.data().begin()));
    CHECK(a.scribble.labels == b.scribble.labels);
    const Sample d = training_sample(s, c, 4, 17);
    CHECK_FALSE(std::equal(a.image.data().begin(), a.image.data().end(), d.image.data().begin()));
  }

  TEST_CASE("iterations per epoch rounds up") {
    CHECK(iterations_per_epoch(200, 8) == 25);
    CHECK(iterations_per_epoch(201, 8) == 26);
    CHECK(iterations_per_epoch(3, 8) == 1);
  }
}

TEST_SUITE("inference") {
  TEST_CASE("output matches the input dimensions") {
    Network net(small_config().resolved_network(), 8);
    std::mt19937_64 rng(8);
    Tensor image({3, 100, 60});
    for (double& v : image.data()) v = std::uniform_real_distribution<double>(0, 1)(rng);
    const SaliencyMap m = infer(net, image);
    CHECK(m.height == 100);
    CHECK(m.width == 60);
    for (double v : m.values) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }

  TEST_CASE("batched inference equals single inference") {
    Network net(small_config().resolved_network(), 9);
    const Sample a = synth_sample(32, 9, 0).sample, b = synth_sample(48, 9, 1).sample;
    const auto both = infer_batch(net, {&a.image, &b.image});
    CHECK(both[0].values == infer(net, a.image).values);
    CHECK(both[1].values == infer(net, b.image).values);
  }

  TEST_CASE("scale consistency is positive for an untrained network") {
    Network net(small_config().resolved_network(), 10);
    std::vector<Sample> s{synth_sample(32, 10, 0).sample, synth_sample(32, 10, 1).sample};
    CHECK(scale_consistency(net, s, 32, 16) > 0.0);
  }
}

TEST_SUITE("train loop") {
  TrainConfig loop_config() {
    TrainConfig c = small_config();
    c.epochs = 3;
    c.seed = 11;
    return c;
  }

  TEST_CASE("writes artifacts and is bit-reproducible") {
    TempDir d;
    const DatasetManifest m = synth_generate(d.path / "data", 8, 32, 11);
    const TrainConfig c = loop_config();
    std::vector<std::string> progress;
    TrainOptions o{d.path / "run1", std::nullopt, false, [&](const std::string& l) { progress.push_back(l); }};
    const TrainSummary s1 = train(m, c, o);
    o.out_dir = d.path / "run2";
    train(m, c, o);
    for (const char* f : {"model.ckpt", "state.bin", "train_log.jsonl", "config.json"}) {
      REQUIRE(fs::exists(d.path / "run1" / f));
      CHECK_MESSAGE(slurp(d.path / "run1" / f) == slurp(d.path / "run2" / f), f);
    }
    CHECK(progress.size() == 6);
    CHECK(s1.state.iteration == 6);
    CHECK(s1.state.epoch == 3);
    REQUIRE(s1.last_eval);

    const auto log = read_log(d.path / "run1" / "train_log.jsonl");
    REQUIRE(log.size() == 9);  // 2 iterations + 1 evaluation per epoch
    CHECK(log[0]["iter"] == 0);
    CHECK(log[0]["lr"] == 1e-5);
    for (const char* k : {"lr", "l_ce", "l_lsc", "l_ssc", "l_aux", "l_total"}) CHECK(log[0].contains(k));
    CHECK(log[2]["epoch"] == 1);
    for (const char* k : {"f_beta", "e_xi", "mae"}) CHECK(log[2].contains(k));
    CHECK(log[8]["mae"].get<double>() == s1.last_eval->dataset.mae);

    // The saved config re-fed reproduces the run configuration.
    CHECK(config_to_json(config_from_json(slurp(d.path / "run1" / "config.json"))) == config_to_json(c));
    const Network loaded = load_checkpoint(d.path / "run1" / "model.ckpt");
    CHECK(loaded.config().input_size == 32);
  }

  TEST_CASE("an interrupted run resumes onto the same trajectory") {
    TempDir d;
    const DatasetManifest m = synth_generate(d.path / "data", 8, 32, 12);
    const TrainConfig c = loop_config();
    train(m, c, {d.path / "full", std::nullopt, false, {}});

    struct Stop {};
    int epochs_seen = 0;
    TrainOptions o{d.path / "cut", std::nullopt, false, [&](const std::string&) {
                     if (++epochs_seen == 1) throw Stop{};
                   }};
    CHECK_THROWS_AS(train(m, c, o), Stop);
    // Leftover records from a partially logged epoch are discarded.
    { std::ofstream(d.path / "cut" / "train_log.jsonl", std::ios::app) << R"({"iter":2,"lr":0.5})" << '\n'; }
    o.resume = true;
    const TrainSummary s = train(m, c, o);
    CHECK(s.state.iteration == 6);
    CHECK(slurp(d.path / "cut" / "model.ckpt") == slurp(d.path / "full" / "model.ckpt"));
    CHECK(slurp(d.path / "cut" / "train_log.jsonl") == slurp(d.path / "full" / "train_log.jsonl"));
  }

  TEST_CASE("resuming with a different config is refused") {
    TempDir d;
    const DatasetManifest m = synth_generate(d.path / "data", 4, 32, 13);
    TrainConfig c = loop_config();
    c.epochs = 1;
    train(m, c, {d.path / "run", std::nullopt, false, {}});
    c.lr_max = 0.02;
    CHECK_THROWS_WITH_AS(train(m, c, {d.path / "run", std::nullopt, true, {}}), doctest::Contains("config"),
                         CheckpointError);
    std::ofstream(d.path / "run" / "state.bin", std::ios::trunc) << "garbage";
    CHECK_THROWS_AS(train(m, loop_config(), {d.path / "run", std::nullopt, true, {}}), CheckpointError);
  }
}
