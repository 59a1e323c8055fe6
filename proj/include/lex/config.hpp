#pragma once

#include <cstdlib>
#include <fstream>
#include <set>
#include <string>

#include "json.hpp"
#include "lex/lexmodel.hpp"
#include "lex/synthgen.hpp"

namespace lex {

using nlohmann::json;

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 1000;
  double lr = 1e-4;
  double weight_decay = 1e-3;
  std::uint64_t seed = 0;
  /// Epochs for the predictor / black-box classifier pre-training stage.
  std::size_t pretrain_epochs = 50;
  /// Save a checkpoint every N epochs (0: only the final one).
  std::size_t checkpoint_every = 0;

  void validate(std::size_t n_train) const {
    if (epochs == 0) throw ConfigError("train.epochs must be at least 1");
    if (batch_size == 0) throw ConfigError("train.batch_size must be at least 1");
    if (n_train && batch_size > n_train)
      throw ConfigError("train.batch_size (" + std::to_string(batch_size) + ") exceeds the training rows (" +
                        std::to_string(n_train) + ")");
    if (!(lr > 0)) throw ConfigError("train.lr must be positive");
    if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay must be non-negative");
  }

  diffnet::AdamOptions adam() const { return {lr, weight_decay}; }
  bool operator==(const TrainConfig&) const = default;
};

/// Synthetic data source for a run (used when no CSV is given).
struct DataConfig {
  std::string name = "S3";
  std::size_t n_train = 10000;
  std::size_t n_test = 10000;
  std::uint64_t seed = 0;
  double val_fraction = 0.2;
  bool operator==(const DataConfig&) const = default;
};

/// The resolved contents of a run configuration document.
struct RunConfig {
  std::string preset;  // informational; settings below are already expanded
  DataConfig data;
  model::LexConfig lex;
  TrainConfig train;
  bool operator==(const RunConfig&) const = default;
};

namespace config {

// ---------------------------------------------------------------------------
// Presets

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"l2x",      "invase",       "realx",        "lex-gaussian",
                                              "lex-gmm",  "constant",     "surrogate_constant", "gaussian_std"};
  return names;
}

/// Full-scale training: 1000 epochs, batch 1000, Adam lr 1e-4, weight decay 1e-3.
inline TrainConfig full_train() { return TrainConfig{1000, 1000, 1e-4, 1e-3, 0, 100, 0}; }

/// Desk-scale training used by the acceptance runs and sweeps by default.
inline TrainConfig desk_train() { return TrainConfig{200, 100, 1e-3, 1e-3, 0, 20, 0}; }

/// Applies a named preset on top of `rc` (selection, imputer, regime; network shapes kept).
inline void apply_preset(RunConfig& rc, const std::string& name) {
  auto& c = rc.lex;
  c.imputer = impute::Spec{};
  c.penalty = model::Penalty::none;
  c.lambda = 0.0;
  c.predictor_init = model::PredictorInit::random;
  c.regime = model::Regime::free_insitu;
  if (name == "l2x") {
    c.mode = mask::Mode::subset;
    c.imputer.kind = impute::Kind::constant;
    c.regime = model::Regime::surrogate_posthoc;
  } else if (name == "invase") {
    c.mode = mask::Mode::bernoulli;
    c.penalty = model::Penalty::l1;
    c.lambda = 0.1;
    c.imputer.kind = impute::Kind::constant;
  } else if (name == "realx") {
    c.mode = mask::Mode::bernoulli;
    c.penalty = model::Penalty::l1;
    c.lambda = 0.1;
    c.imputer.kind = impute::Kind::constant;
    c.predictor_init = model::PredictorInit::surrogate;
    c.regime = model::Regime::fixed_theta_insitu;
  } else if (name == "lex-gaussian" || name == "gaussian_std") {
    c.mode = mask::Mode::subset;
    c.imputer.kind = impute::Kind::gaussian_std;
  } else if (name == "lex-gmm") {
    c.mode = mask::Mode::subset;
    c.imputer.kind = impute::Kind::gmm;
    c.imputer.components = 10;
  } else if (name == "constant") {
    c.mode = mask::Mode::subset;
    c.imputer.kind = impute::Kind::constant;
  } else if (name == "surrogate_constant") {
    c.mode = mask::Mode::subset;
    c.imputer.kind = impute::Kind::constant;
    c.predictor_init = model::PredictorInit::surrogate;
    c.regime = model::Regime::fixed_theta_insitu;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  rc.preset = name;
}

inline RunConfig default_run_config() {
  RunConfig rc;
  rc.train = desk_train();
  return rc;
}

inline RunConfig preset_config(const std::string& name) {
  RunConfig rc = default_run_config();
  apply_preset(rc, name);
  return rc;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline void reject_unknown(const json& j, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("section '" + section + "' must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key()))
      throw ConfigError("unknown key '" + it.key() + "' in section '" + section + "'");
}

template <typename V>
void read(const json& j, const char* key, V& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for '" + section + "." + key + "'");
  }
}

}  // namespace detail

inline json to_json(const diffnet::MlpSpec& s) {
  return {{"input_dim", s.input_dim},
          {"hidden_dims", s.hidden_dims},
          {"output_dim", s.output_dim},
          {"output_activation", diffnet::to_string(s.output_activation)}};
}

inline json to_json(const RunConfig& rc) {
  const auto& c = rc.lex;
  json j;
  if (!rc.preset.empty()) j["preset"] = rc.preset;
  j["dataset"] = {{"name", rc.data.name},
                  {"n_train", rc.data.n_train},
                  {"n_test", rc.data.n_test},
                  {"seed", rc.data.seed},
                  {"val_fraction", rc.data.val_fraction}};
  j["imputer"] = {{"kind", impute::to_string(c.imputer.kind)},     {"constant", c.imputer.constant},
                  {"components", c.imputer.components},            {"seed", c.imputer.seed},
                  {"max_iter", c.imputer.max_iter},                {"tol", c.imputer.tol},
                  {"grid_max", c.imputer.grid_max},                {"logistics_epochs", c.imputer.logistics_epochs},
                  {"dequantize", c.imputer.dequantize}};
  j["selection"] = {{"mode", mask::to_string(c.mode)}, {"k", c.k},
                    {"tau", c.tau},                    {"penalty", model::to_string(c.penalty)},
                    {"lambda", c.lambda},              {"selector_bias_init", c.selector_bias_init}};
  const char* relax = c.relaxation == model::RelaxationChoice::automatic    ? "auto"
                      : c.relaxation == model::RelaxationChoice::continuous ? "continuous"
                                                                            : "straight_through";
  j["estimator"] = {{"kind", gradest::to_string(c.estimator)},
                    {"eta", c.eta},
                    {"baseline", c.baseline == gradest::Baseline::moving_average ? "moving_average" : "none"},
                    {"relaxation", relax},
                    {"L", c.L},
                    {"K_imp", c.K_imp}};
  j["model"] = {{"input_dim", c.predictor.input_dim},
                {"classes", c.predictor.output_dim},
                {"predictor_hidden", c.predictor.hidden_dims},
                {"selector_hidden", c.selector.hidden_dims},
                {"predictor_init", model::to_string(c.predictor_init)}};
  j["train"] = {{"epochs", rc.train.epochs},
                {"batch_size", rc.train.batch_size},
                {"lr", rc.train.lr},
                {"weight_decay", rc.train.weight_decay},
                {"seed", rc.train.seed},
                {"pretrain_epochs", rc.train.pretrain_epochs},
                {"checkpoint_every", rc.train.checkpoint_every}};
  j["regime"] = {{"name", model::to_string(c.regime)}};
  return j;
}

/// Parses a configuration document: an optional "preset" expands first, then the
/// sections override it. Unknown keys anywhere are rejected.
inline RunConfig from_json(const json& j) {
  detail::reject_unknown(j, "<root>",
                         {"preset", "dataset", "imputer", "selection", "estimator", "model", "train", "regime"});
  RunConfig rc = default_run_config();
  if (j.contains("preset")) apply_preset(rc, j.at("preset").get<std::string>());
  auto& c = rc.lex;
  using detail::read;

  if (j.contains("dataset")) {
    const auto& s = j["dataset"];
    detail::reject_unknown(s, "dataset", {"name", "n_train", "n_test", "seed", "val_fraction"});
    read(s, "name", rc.data.name, "dataset");
    synth::name_from_string(rc.data.name);
    read(s, "n_train", rc.data.n_train, "dataset");
    read(s, "n_test", rc.data.n_test, "dataset");
    read(s, "seed", rc.data.seed, "dataset");
    read(s, "val_fraction", rc.data.val_fraction, "dataset");
  }
  if (j.contains("imputer")) {
    const auto& s = j["imputer"];
    detail::reject_unknown(s, "imputer", {"kind", "constant", "c", "components", "seed", "max_iter", "tol", "grid_max",
                                          "logistics_epochs", "dequantize"});
    if (s.contains("kind")) c.imputer.kind = impute::kind_from_string(s["kind"].get<std::string>());
    read(s, "constant", c.imputer.constant, "imputer");
    read(s, "c", c.imputer.constant, "imputer");
    read(s, "components", c.imputer.components, "imputer");
    read(s, "seed", c.imputer.seed, "imputer");
    read(s, "max_iter", c.imputer.max_iter, "imputer");
    read(s, "tol", c.imputer.tol, "imputer");
    read(s, "grid_max", c.imputer.grid_max, "imputer");
    read(s, "logistics_epochs", c.imputer.logistics_epochs, "imputer");
    read(s, "dequantize", c.imputer.dequantize, "imputer");
  }
  if (j.contains("model")) {
    const auto& s = j["model"];
    detail::reject_unknown(s, "model", {"input_dim", "classes", "predictor_hidden", "selector_hidden", "predictor_init"});
    std::size_t D = c.predictor.input_dim, C = c.predictor.output_dim;
    read(s, "input_dim", D, "model");
    read(s, "classes", C, "model");
    read(s, "predictor_hidden", c.predictor.hidden_dims, "model");
    read(s, "selector_hidden", c.selector.hidden_dims, "model");
    c.predictor.input_dim = c.selector.input_dim = c.selector.output_dim = D;
    c.predictor.output_dim = C;
    if (s.contains("predictor_init"))
      c.predictor_init = model::predictor_init_from_string(s["predictor_init"].get<std::string>());
  }
  if (j.contains("selection")) {
    const auto& s = j["selection"];
    detail::reject_unknown(s, "selection", {"mode", "k", "rate", "tau", "penalty", "lambda", "selector_bias_init"});
    if (s.contains("mode")) c.mode = mask::mode_from_string(s["mode"].get<std::string>());
    read(s, "k", c.k, "selection");
    if (s.contains("rate")) c.k = mask::k_from_rate(s["rate"].get<double>(), c.dim());
    read(s, "tau", c.tau, "selection");
    if (s.contains("penalty")) c.penalty = model::penalty_from_string(s["penalty"].get<std::string>());
    read(s, "lambda", c.lambda, "selection");
    read(s, "selector_bias_init", c.selector_bias_init, "selection");
  }
  if (j.contains("estimator")) {
    const auto& s = j["estimator"];
    detail::reject_unknown(s, "estimator", {"kind", "eta", "baseline", "relaxation", "L", "K_imp"});
    if (s.contains("kind")) c.estimator = gradest::kind_from_string(s["kind"].get<std::string>());
    read(s, "eta", c.eta, "estimator");
    if (s.contains("baseline")) {
      const auto b = s["baseline"].get<std::string>();
      if (b == "none") c.baseline = gradest::Baseline::none;
      else if (b == "moving_average") c.baseline = gradest::Baseline::moving_average;
      else throw ConfigError("unknown baseline '" + b + "'");
    }
    if (s.contains("relaxation")) {
      const auto r = s["relaxation"].get<std::string>();
      if (r == "auto") c.relaxation = model::RelaxationChoice::automatic;
      else if (r == "continuous") c.relaxation = model::RelaxationChoice::continuous;
      else if (r == "straight_through") c.relaxation = model::RelaxationChoice::straight_through;
      else throw ConfigError("unknown relaxation '" + r + "'");
    }
    read(s, "L", c.L, "estimator");
    read(s, "K_imp", c.K_imp, "estimator");
  }
  if (j.contains("train")) {
    const auto& s = j["train"];
    detail::reject_unknown(s, "train", {"epochs", "batch_size", "lr", "weight_decay", "seed", "pretrain_epochs",
                                        "checkpoint_every", "profile"});
    if (s.contains("profile")) {
      const auto p = s["profile"].get<std::string>();
      if (p == "full") rc.train = full_train();
      else if (p == "desk") rc.train = desk_train();
      else throw ConfigError("unknown train profile '" + p + "'");
    }
    read(s, "epochs", rc.train.epochs, "train");
    read(s, "batch_size", rc.train.batch_size, "train");
    read(s, "lr", rc.train.lr, "train");
    read(s, "weight_decay", rc.train.weight_decay, "train");
    read(s, "seed", rc.train.seed, "train");
    read(s, "pretrain_epochs", rc.train.pretrain_epochs, "train");
    read(s, "checkpoint_every", rc.train.checkpoint_every, "train");
  }
  if (j.contains("regime")) {
    const auto& s = j["regime"];
    detail::reject_unknown(s, "regime", {"name"});
    if (s.contains("name")) c.regime = model::regime_from_string(s["name"].get<std::string>());
  }
  c.validate();
  return rc;
}

/// LEX_SEED, when set, overrides the training and dataset seeds.
inline void apply_seed_override(RunConfig& rc) {
  if (const char* s = std::getenv("LEX_SEED")) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(s, &used);
      if (used != std::string(s).size()) throw std::invalid_argument("trailing");
      rc.train.seed = v;
      rc.data.seed = v;
    } catch (const std::exception&) {
      throw ConfigError(std::string("LEX_SEED must be an unsigned integer, got '") + s + "'");
    }
  }
}

inline RunConfig load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

}  // namespace config
}  // namespace lex
