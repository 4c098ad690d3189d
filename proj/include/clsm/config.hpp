#pragma once

// Model and training hyperparameters plus the key-value config file:
//
//   # comment
//   d_z = 16
//   beta_max = 0.012
//
// Unknown keys, malformed values and out-of-range values are rejected.

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clsm/errors.hpp"
#include "clsm/tokens.hpp"

namespace clsm {

struct ModelConfig {
  int d_z = 128;
  int l_z = 4;
  int token_embed = 128;  // transformer width
  int hidden = 256;       // transformer feed-forward width and LSTM hidden size
  int heads = 8;
  double dropout = 0.1;
  int mlp_hidden = 512;
  int n_transformer_layers = 2;
  int n_lstm_layers = 2;
  int n_coupling_layers = 4;
  int coupling_mlp_hidden = 256;
  double leaky_slope = 0.01;
  int K = 128;
  int bar = 16;

  SpanGrid grid() const { return {K, bar, 4}; }

  void validate() const {
    const auto need = [](bool ok, const std::string& what) {
      if (!ok) throw InvalidConfig(what);
    };
    need(d_z > 0 && d_z % 2 == 0, "d_z must be positive and even");
    need(l_z > 0 && token_embed > 0 && hidden > 0 && heads > 0 && mlp_hidden > 0, "dimensions must be positive");
    need(token_embed % heads == 0, "token_embed must be divisible by heads");
    need(n_transformer_layers > 0 && n_lstm_layers > 0 && n_coupling_layers > 0, "layer counts must be positive");
    need(coupling_mlp_hidden > 0, "coupling_mlp_hidden must be positive");
    need(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
    need(leaky_slope >= 0.0, "leaky_slope must be non-negative");
    need(K > 0 && bar > 0 && K % bar == 0 && 4 * bar <= K, "K must hold at least 4 bars");
  }

  // Desk-scale configuration used by the toy corpus pipeline.
  static ModelConfig toy() {
    ModelConfig c;
    c.d_z = 16;
    c.token_embed = 64;
    c.hidden = 64;
    c.heads = 4;
    c.mlp_hidden = 64;
    c.n_transformer_layers = 1;
    c.n_lstm_layers = 1;
    c.coupling_mlp_hidden = 64;
    return c;
  }
};

struct TrainConfig {
  int batch = 64;
  int epochs = 2;
  double lr = 0.0005;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double beta_max = 0.012;  // CLSM KL weight
  double gamma = 0.4;       // VAE KL weight
  double anneal_epochs = 2;
  double grad_clip = 5.0;
  std::uint64_t seed = 0;
  int val_limit = 0;  // 0 = whole validation split

  void validate() const {
    const auto need = [](bool ok, const std::string& what) {
      if (!ok) throw InvalidConfig(what);
    };
    need(batch > 0, "batch must be positive");
    need(epochs > 0, "epochs must be positive");
    need(lr >= 0.0, "lr must be non-negative");
    need(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam betas must be in [0, 1)");
    need(beta_max >= 0.0, "beta_max must be non-negative");
    need(gamma >= 0.0, "gamma must be non-negative");
    need(anneal_epochs > 0.0, "anneal_epochs must be positive");
    need(grad_clip >= 0.0, "grad_clip must be non-negative");
    need(val_limit >= 0, "val_limit must be non-negative");
  }
};

namespace config_detail {

template <class T>
T parse_value(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T v{};
  in >> v;
  std::string rest;
  if (in.fail() || (in >> rest)) throw InvalidConfig("bad value for '" + key + "': '" + text + "'");
  return v;
}

struct Field {
  std::function<void(const std::string&)> set;
  std::function<nlohmann::json()> get;
};

template <class T>
Field bind(const std::string& key, T& ref) {
  return {[&ref, key](const std::string& v) { ref = parse_value<T>(key, v); }, [&ref] { return nlohmann::json(ref); }};
}

inline std::map<std::string, Field> fields(ModelConfig& m, TrainConfig& t) {
  return {
      {"d_z", bind("d_z", m.d_z)},
      {"l_z", bind("l_z", m.l_z)},
      {"token_embed", bind("token_embed", m.token_embed)},
      {"hidden", bind("hidden", m.hidden)},
      {"heads", bind("heads", m.heads)},
      {"dropout", bind("dropout", m.dropout)},
      {"mlp_hidden", bind("mlp_hidden", m.mlp_hidden)},
      {"n_transformer_layers", bind("n_transformer_layers", m.n_transformer_layers)},
      {"n_lstm_layers", bind("n_lstm_layers", m.n_lstm_layers)},
      {"n_coupling_layers", bind("n_coupling_layers", m.n_coupling_layers)},
      {"coupling_mlp_hidden", bind("coupling_mlp_hidden", m.coupling_mlp_hidden)},
      {"leaky_slope", bind("leaky_slope", m.leaky_slope)},
      {"K", bind("K", m.K)},
      {"bar", bind("bar", m.bar)},
      {"batch", bind("batch", t.batch)},
      {"epochs", bind("epochs", t.epochs)},
      {"lr", bind("lr", t.lr)},
      {"adam_beta1", bind("adam_beta1", t.adam_beta1)},
      {"adam_beta2", bind("adam_beta2", t.adam_beta2)},
      {"beta_max", bind("beta_max", t.beta_max)},
      {"gamma", bind("gamma", t.gamma)},
      {"anneal_epochs", bind("anneal_epochs", t.anneal_epochs)},
      {"grad_clip", bind("grad_clip", t.grad_clip)},
      {"seed", bind("seed", t.seed)},
      {"val_limit", bind("val_limit", t.val_limit)},
  };
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace config_detail

struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  void validate() const {
    model.validate();
    train.validate();
  }
};

// Applies "key = value" lines on top of `base`.
inline RunConfig parse_config(std::istream& in, RunConfig base = {}) {
  auto table = config_detail::fields(base.model, base.train);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidConfig("line " + std::to_string(lineno) + ": expected key = value");
    const auto key = config_detail::trim(line.substr(0, eq));
    const auto value = config_detail::trim(line.substr(eq + 1));
    auto it = table.find(key);
    if (it == table.end()) throw InvalidConfig("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->second.set(value);
  }
  base.validate();
  return base;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw InvalidConfig("cannot open config " + path);
  return parse_config(in, base);
}

inline nlohmann::json to_json(const ModelConfig& m) {
  ModelConfig copy = m;
  TrainConfig unused;
  nlohmann::json j;
  for (auto& [k, f] : config_detail::fields(copy, unused)) {
    if (k == "d_z" || k == "l_z" || k == "token_embed" || k == "hidden" || k == "heads" || k == "dropout" ||
        k == "mlp_hidden" || k.rfind("n_", 0) == 0 || k == "coupling_mlp_hidden" || k == "leaky_slope" || k == "K" ||
        k == "bar")
      j[k] = f.get();
  }
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig m;
  TrainConfig unused;
  auto table = config_detail::fields(m, unused);
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto f = table.find(it.key());
    if (f == table.end()) throw InvalidConfig("unknown model config key '" + it.key() + "'");
    f->second.set(it.value().is_string() ? it.value().get<std::string>() : it.value().dump());
  }
  m.validate();
  return m;
}

}  // namespace clsm
