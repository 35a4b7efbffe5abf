#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <type_traits>

#include "json.hpp"
#include "scws/trainer.hpp"

namespace scws {

using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(lr_min > 0.0 && lr_min < lr_max)) throw std::invalid_argument("need 0 < lr_min < lr_max");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
  if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("rho must lie in (0,1)");
  if (eval_every < 0) throw std::invalid_argument("eval_every must be >= 0");
  lsc.validate();
  objective.validate();
  resolved_network().validate();
  if (enable_ssc && small_size() >= std::size_t(train_size)) {
    throw std::invalid_argument("rho * train_size rounds to " + std::to_string(small_size()) +
                                ", which is not smaller than train_size; use a larger train_size or disable SSC");
  }
}

NetworkConfig TrainConfig::resolved_network() const {
  NetworkConfig n = network;
  n.input_size = train_size;
  n.enable_aggm = enable_aggm;
  return n;
}

std::size_t TrainConfig::small_size() const {
  const long side = std::lround(rho * train_size / 16.0) * 16;
  return static_cast<std::size_t>(std::max<long>(16, side));
}

namespace {

json to_json_value(const TrainConfig& c) {
  json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr_max"] = c.lr_max;
  j["lr_min"] = c.lr_min;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["seed"] = c.seed;
  j["train_size"] = c.train_size;
  j["rho"] = c.rho;
  j["enable_lsc"] = c.enable_lsc;
  j["enable_ssc"] = c.enable_ssc;
  j["enable_aggm"] = c.enable_aggm;
  j["eval_every"] = c.eval_every;
  j["lsc"] = {{"kernel_size", c.lsc.kernel_size},
              {"sigma_p", c.lsc.sigma_p},
              {"sigma_i", c.lsc.sigma_i},
              {"weight_norm", c.lsc.weight_norm}};
  j["objective"] = {{"beta", c.objective.beta}, {"alpha", c.objective.alpha}, {"lambda", c.objective.lambda}};
  j["network"] = {{"stage_channels", c.network.stage_channels},
                  {"global_channels", c.network.global_channels},
                  {"decoder_channels", c.network.decoder_channels}};
  return j;
}

// Rejects keys absent from the defaults, recursively.
void check_keys(const json& given, const json& reference, const std::string& prefix) {
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string key = prefix + it.key();
    if (!reference.contains(it.key())) throw std::invalid_argument("unknown config key '" + key + "'");
    const json& ref = reference.at(it.key());
    if (ref.is_object()) {
      if (!it.value().is_object()) throw std::invalid_argument("config key '" + key + "' must be an object");
      check_keys(it.value(), ref, key + ".");
    }
  }
}

template <class T>
T read(const json& j, const std::string& key) {
  const json& v = j.at(key);
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw std::invalid_argument("config key '" + key + "' must be a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw std::invalid_argument("config key '" + key + "' must be an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0) {
        throw std::invalid_argument("config key '" + key + "' must be non-negative");
      }
    }
  } else {
    if (!v.is_number()) throw std::invalid_argument("config key '" + key + "' must be a number");
  }
  return v.get<T>();
}

template <class T, std::size_t N>
std::array<T, N> read_array(const json& j, const std::string& key) {
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != N) {
    throw std::invalid_argument("config key '" + key + "' must be an array of " + std::to_string(N) + " numbers");
  }
  std::array<T, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    if (std::is_integral_v<T> ? !v[i].is_number_integer() : !v[i].is_number()) {
      throw std::invalid_argument("config key '" + key + "' has a non-numeric entry");
    }
    out[i] = v[i].get<T>();
  }
  return out;
}

TrainConfig from_json_value(const json& given) {
  if (!given.is_object()) throw std::invalid_argument("config must be a JSON object");
  const json defaults = to_json_value(TrainConfig{});
  check_keys(given, defaults, "");
  json j = defaults;
  j.merge_patch(given);
  TrainConfig c;
  c.epochs = read<int>(j, "epochs");
  c.batch_size = read<int>(j, "batch_size");
  c.lr_max = read<double>(j, "lr_max");
  c.lr_min = read<double>(j, "lr_min");
  c.momentum = read<double>(j, "momentum");
  c.weight_decay = read<double>(j, "weight_decay");
  c.seed = read<std::uint64_t>(j, "seed");
  c.train_size = read<int>(j, "train_size");
  c.rho = read<double>(j, "rho");
  c.enable_lsc = read<bool>(j, "enable_lsc");
  c.enable_ssc = read<bool>(j, "enable_ssc");
  c.enable_aggm = read<bool>(j, "enable_aggm");
  c.eval_every = read<int>(j, "eval_every");
  const json& l = j.at("lsc");
  c.lsc.kernel_size = read<int>(l, "kernel_size");
  c.lsc.sigma_p = read<double>(l, "sigma_p");
  c.lsc.sigma_i = read<double>(l, "sigma_i");
  c.lsc.weight_norm = read<double>(l, "weight_norm");
  const json& o = j.at("objective");
  c.objective.beta = read<double>(o, "beta");
  c.objective.alpha = read<double>(o, "alpha");
  c.objective.lambda = read_array<double, 3>(o, "lambda");
  const json& n = j.at("network");
  c.network.stage_channels = read_array<int, 4>(n, "stage_channels");
  c.network.global_channels = read<int>(n, "global_channels");
  c.network.decoder_channels = read<int>(n, "decoder_channels");
  c.validate();
  return c;
}

}  // namespace

TrainConfig config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json_value(j);
}

std::string config_to_json(const TrainConfig& cfg, int indent) { return to_json_value(cfg).dump(indent); }

TrainConfig apply_overrides(const TrainConfig& cfg, const std::vector<std::string>& overrides) {
  json j = to_json_value(cfg);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override '" + o + "' is not key=value");
    const std::string key = o.substr(0, eq), text = o.substr(eq + 1);
    std::string pointer;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      pointer += "/" + key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    const json::json_pointer ptr(pointer);
    if (!j.contains(ptr) || j.at(ptr).is_object()) throw std::invalid_argument("unknown config key '" + key + "'");
    json value;
    try {
      value = json::parse(text);
    } catch (const json::parse_error&) {
      value = text;
    }
    j[ptr] = value;
  }
  return from_json_value(j);
}

}  // namespace scws
