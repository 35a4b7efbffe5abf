#include <omp.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "scws/data.hpp"
#include "scws/gradient_suite.hpp"
#include "scws/metrics.hpp"
#include "scws/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace scws;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  int threads = 0;

  std::string synth_out;
  std::size_t synth_count = 0;
  std::size_t synth_size = 64;
  std::uint64_t synth_seed = 0;

  std::string train_data, train_out, train_config, train_eval;
  std::vector<std::string> train_set;
  bool train_resume = false;

  std::string eval_data, eval_pred;

  std::string infer_ckpt, infer_image, infer_data, infer_out;

  std::uint64_t grad_seed = 0;
};

std::string read_text(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw DataError("cannot read " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void announce(const ordered_json& resolved) { std::cerr << "resolved config:\n" << resolved.dump(2) << '\n'; }

ordered_json metrics_json(const MetricValues& v) {
  return {{"f_beta", v.f_beta}, {"e_xi", v.e_xi}, {"mae", v.mae}};
}

int cmd_synth(const Options& o) {
  if (o.synth_count == 0) throw UsageError("--count must be >= 1");
  announce({{"command", "synth"}, {"out", o.synth_out}, {"count", o.synth_count}, {"size", o.synth_size},
            {"seed", o.synth_seed}});
  const DatasetManifest m = synth_generate(o.synth_out, o.synth_count, o.synth_size, o.synth_seed);
  std::cout << ordered_json{{"manifest", (fs::path(o.synth_out) / "manifest.tsv").string()}, {"count", m.size()}}.dump(2)
            << '\n';
  return kExitOk;
}

int cmd_train(const Options& o) {
  TrainConfig cfg;
  if (!o.train_config.empty()) cfg = config_from_json(read_text(o.train_config));
  cfg = apply_overrides(cfg, o.train_set);
  std::cerr << "resolved config:\n" << config_to_json(cfg) << '\n';
  const DatasetManifest m = load_manifest(o.train_data);
  TrainOptions opt;
  opt.out_dir = o.train_out;
  if (!o.train_eval.empty()) opt.eval_set = load_manifest(o.train_eval);
  opt.resume = o.train_resume;
  opt.progress = [](const std::string& line) { std::cerr << line << '\n'; };
  const TrainSummary s = train(m, cfg, opt);
  ordered_json out{{"checkpoint", s.checkpoint.string()},
                   {"iterations", s.state.iteration},
                   {"epochs", s.state.epoch},
                   {"best_f_beta", s.state.best_f_beta},
                   {"best_epoch", s.state.best_epoch}};
  if (s.last_eval) out["final"] = metrics_json(s.last_eval->dataset);
  std::cout << out.dump(2) << '\n';
  return kExitOk;
}

int cmd_eval(const Options& o) {
  announce({{"command", "eval"}, {"data", o.eval_data}, {"pred", o.eval_pred}});
  const DatasetManifest m = load_manifest(o.eval_data);
  std::cout << report_json(evaluate_dataset(m, o.eval_pred)) << '\n';
  return kExitOk;
}

int cmd_infer(const Options& o) {
  if (o.infer_image.empty() == o.infer_data.empty()) throw UsageError("infer needs exactly one of --image or --data");
  announce({{"command", "infer"}, {"ckpt", o.infer_ckpt}, {"image", o.infer_image}, {"data", o.infer_data},
            {"out", o.infer_out}});
  Network net = load_checkpoint(o.infer_ckpt);
  if (!o.infer_image.empty()) {
    save_map(o.infer_out, infer(net, load_image(o.infer_image)));
    std::cout << ordered_json{{"written", 1}, {"out", o.infer_out}}.dump(2) << '\n';
    return kExitOk;
  }
  const DatasetManifest m = load_manifest(o.infer_data);
  for (const auto& e : m.entries) save_map(fs::path(o.infer_out) / (e.id + ".pgm"), infer(net, load_image(m.root / e.image)));
  std::cout << ordered_json{{"written", m.size()}, {"out", o.infer_out}}.dump(2) << '\n';
  return kExitOk;
}

int cmd_gradcheck(const Options& o) {
  announce({{"command", "gradcheck"}, {"seed", o.grad_seed}});
  const GradSuiteResult r = run_gradient_suite(o.grad_seed);
  ordered_json checks = ordered_json::array();
  for (const auto& e : r.entries) {
    checks.push_back({{"name", e.name},
                      {"group", e.group},
                      {"coords", e.report.coords_checked},
                      {"max_rel_error", e.report.max_rel_error},
                      {"tolerance", e.tolerance},
                      {"passed", e.report.passed}});
    std::cerr << (e.report.passed ? "PASS " : "FAIL ") << e.name << ": " << describe(e.report) << '\n';
  }
  std::cout << ordered_json{{"seed", o.grad_seed}, {"passed", r.passed()}, {"seconds", r.seconds}, {"checks", checks}}
                   .dump(2)
            << '\n';
  return r.passed() ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"Scribble-supervised salient object detection toolkit"};
  app.require_subcommand(1);
  app.add_option("--threads", o.threads, "Worker threads (default: available cores)")->check(CLI::NonNegativeNumber);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic scribble-annotated dataset");
  synth->add_option("--out", o.synth_out, "Output directory")->required();
  synth->add_option("--count", o.synth_count, "Number of samples")->required();
  synth->add_option("--size", o.synth_size, "Image side, a multiple of 16");
  synth->add_option("--seed", o.synth_seed, "Generator seed");

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--data", o.train_data, "Training manifest")->required();
  train_cmd->add_option("--out", o.train_out, "Output directory")->required();
  train_cmd->add_option("--config", o.train_config, "JSON config file");
  train_cmd->add_option("--set", o.train_set, "Override, dotted.key=value (repeatable)")->take_all();
  train_cmd->add_option("--eval-data", o.train_eval, "Manifest evaluated after each epoch");
  train_cmd->add_flag("--resume", o.train_resume, "Continue from <out>/state.bin");

  auto* eval_cmd = app.add_subcommand("eval", "Score predictions against ground truth");
  eval_cmd->add_option("--data", o.eval_data, "Manifest with masks")->required();
  eval_cmd->add_option("--pred", o.eval_pred, "Directory of <id>.pgm predictions")->required();

  auto* infer_cmd = app.add_subcommand("infer", "Predict saliency maps");
  infer_cmd->add_option("--ckpt", o.infer_ckpt, "Model checkpoint")->required();
  infer_cmd->add_option("--image", o.infer_image, "Input PPM image");
  infer_cmd->add_option("--data", o.infer_data, "Manifest; writes <out>/<id>.pgm per entry");
  infer_cmd->add_option("--out", o.infer_out, "Output PGM file, or directory with --data")->required();

  auto* grad_cmd = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
  grad_cmd->add_option("--seed", o.grad_seed, "Seed for inputs and sampled coordinates");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  const int threads = o.threads > 0 ? o.threads : int(std::max(1u, std::thread::hardware_concurrency()));
  omp_set_num_threads(threads);

  try {
    if (synth->parsed()) return cmd_synth(o);
    if (train_cmd->parsed()) return cmd_train(o);
    if (eval_cmd->parsed()) return cmd_eval(o);
    if (infer_cmd->parsed()) return cmd_infer(o);
    return cmd_gradcheck(o);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid configuration: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
}
