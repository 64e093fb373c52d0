#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "fedproxy/aggregation.hpp"
#include "fedproxy/errors.hpp"
#include "fedproxy/rng.hpp"
#include "fedproxy/tasks.hpp"

namespace fedproxy {

// Run configuration. Any absent seed is derived from the master seed, so a
// config plus one seed pins every random draw in the run.
struct BackboneConfig {
  std::size_t blocks = 6;
  std::size_t width = 8;
  std::size_t input_dim = 6;
  std::size_t out_dim = 1;
  double block_scale = 0.3;
  long pretrain_steps = 400;
  double pretrain_lr = 0.05;
  std::size_t pretrain_batch = 32;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> seed_override;
};

struct PublicTaskConfig {
  double noise_sd = 0.05;
  std::size_t train_samples = 256;
  std::size_t bi_samples = 64;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> seed_override;
};

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::heterogeneous;
  std::size_t clients = 4;
  std::size_t train_samples = 256;
  double noise_sd = 0.05;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> seed_override;
};

struct EvalConfig {
  std::size_t samples = 256;
};

struct RunConfig {
  BackboneConfig backbone;
  PublicTaskConfig public_task;
  ScenarioConfig scenario;
  double kappa = 0.5;
  long rounds = 3;
  AggConfig agg;
  ClientConfig client;
  std::optional<std::uint64_t> client_seed_override;
  EvalConfig eval;
  std::string output_dir = "out";
  std::uint64_t master_seed = 42;

  // Resolves derived seeds from the master seed. Call after any master
  // seed change (e.g. the FEDPROXY_SEED override).
  void finalize_seeds() {
    backbone.seed = backbone.seed_override.value_or(derive_seed(master_seed, "backbone"));
    public_task.seed =
        public_task.seed_override.value_or(derive_seed(master_seed, "public-task"));
    scenario.seed = scenario.seed_override.value_or(derive_seed(master_seed, "scenario"));
    client.seed = client_seed_override.value_or(derive_seed(master_seed, "client"));
  }

  void validate() const {
    if (backbone.blocks < 1) throw ConfigError("backbone.blocks must be >= 1");
    if (backbone.width < 1) throw ConfigError("backbone.width must be >= 1");
    if (backbone.input_dim < 1) throw ConfigError("backbone.input_dim must be >= 1");
    if (backbone.out_dim != 1)
      throw ConfigError("backbone.out_dim must be 1 (scalar task targets)");
    if (backbone.pretrain_steps < 0) throw ConfigError("backbone.pretrain_steps must be >= 0");
    if (!(backbone.pretrain_lr > 0.0)) throw ConfigError("backbone.pretrain_lr must be > 0");
    if (backbone.pretrain_batch < 1) throw ConfigError("backbone.pretrain_batch must be >= 1");
    if (public_task.train_samples < 1)
      throw ConfigError("public_task.train_samples must be >= 1");
    if (public_task.bi_samples < 1) throw ConfigError("public_task.bi_samples must be >= 1");
    if (public_task.noise_sd < 0.0) throw ConfigError("public_task.noise_sd must be >= 0");
    if (scenario.clients < 1) throw ConfigError("scenario.clients must be >= 1");
    if (scenario.train_samples < 1) throw ConfigError("scenario.train_samples must be >= 1");
    if (scenario.noise_sd < 0.0) throw ConfigError("scenario.noise_sd must be >= 0");
    if (!(kappa >= 0.0 && kappa < 1.0)) throw ConfigError("kappa must be in [0,1)");
    if (rounds < 1) throw ConfigError("rounds must be >= 1");
    if (eval.samples < 1) throw ConfigError("eval.samples must be >= 1");
    if (output_dir.empty()) throw ConfigError("output_dir must be non-empty");
    agg.validate();
    client.validate();
  }
};

namespace detail_config {

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

inline std::optional<std::uint64_t> get_seed(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  try {
    return j.at(key).get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

}  // namespace detail_config

inline ScenarioKind parse_scenario_kind(const std::string& s) {
  if (s == "homogeneous") return ScenarioKind::homogeneous;
  if (s == "heterogeneous") return ScenarioKind::heterogeneous;
  throw ConfigError("unknown scenario kind '" + s + "'");
}

inline const char* scenario_kind_name(ScenarioKind k) {
  return k == ScenarioKind::homogeneous ? "homogeneous" : "heterogeneous";
}

inline RunConfig parse_run_config(const nlohmann::json& j,
                                  std::optional<std::uint64_t> master_override = {}) {
  using detail_config::get_or;
  using detail_config::get_seed;
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  RunConfig cfg;

  if (j.contains("backbone")) {
    const auto& b = j.at("backbone");
    cfg.backbone.blocks = get_or<std::size_t>(b, "blocks", cfg.backbone.blocks);
    cfg.backbone.width = get_or<std::size_t>(b, "width", cfg.backbone.width);
    cfg.backbone.input_dim = get_or<std::size_t>(b, "input_dim", cfg.backbone.input_dim);
    cfg.backbone.out_dim = get_or<std::size_t>(b, "out_dim", cfg.backbone.out_dim);
    cfg.backbone.block_scale = get_or<double>(b, "block_scale", cfg.backbone.block_scale);
    cfg.backbone.pretrain_steps = get_or<long>(b, "pretrain_steps", cfg.backbone.pretrain_steps);
    cfg.backbone.pretrain_lr = get_or<double>(b, "pretrain_lr", cfg.backbone.pretrain_lr);
    cfg.backbone.pretrain_batch =
        get_or<std::size_t>(b, "pretrain_batch", cfg.backbone.pretrain_batch);
    cfg.backbone.seed_override = get_seed(b, "seed");
  }
  if (j.contains("public_task")) {
    const auto& p = j.at("public_task");
    cfg.public_task.noise_sd = get_or<double>(p, "noise_sd", cfg.public_task.noise_sd);
    cfg.public_task.train_samples =
        get_or<std::size_t>(p, "train_samples", cfg.public_task.train_samples);
    cfg.public_task.bi_samples = get_or<std::size_t>(p, "bi_samples", cfg.public_task.bi_samples);
    cfg.public_task.seed_override = get_seed(p, "seed");
  }
  if (j.contains("scenario")) {
    const auto& s = j.at("scenario");
    cfg.scenario.kind =
        parse_scenario_kind(get_or<std::string>(s, "kind", "heterogeneous"));
    cfg.scenario.clients = get_or<std::size_t>(s, "clients", cfg.scenario.clients);
    cfg.scenario.train_samples =
        get_or<std::size_t>(s, "train_samples", cfg.scenario.train_samples);
    cfg.scenario.noise_sd = get_or<double>(s, "noise_sd", cfg.scenario.noise_sd);
    cfg.scenario.seed_override = get_seed(s, "seed");
  }
  cfg.kappa = get_or<double>(j, "kappa", cfg.kappa);
  cfg.rounds = get_or<long>(j, "rounds", cfg.rounds);
  if (j.contains("agg")) {
    const auto& a = j.at("agg");
    cfg.agg.method = parse_agg_method(get_or<std::string>(a, "method", "fedproxy"));
    cfg.agg.r0 = get_or<double>(a, "r0", cfg.agg.r0);
    cfg.agg.delta_adapt = get_or<double>(a, "delta_adapt", cfg.agg.delta_adapt);
    cfg.agg.rho = get_or<double>(a, "rho", cfg.agg.rho);
    cfg.agg.eps = get_or<double>(a, "eps", cfg.agg.eps);
    cfg.agg.ties_density = get_or<double>(a, "ties_density", cfg.agg.ties_density);
    cfg.agg.ties_lambda = get_or<double>(a, "ties_lambda", cfg.agg.ties_lambda);
  }
  if (j.contains("client")) {
    const auto& c = j.at("client");
    cfg.client.lambda_reg = get_or<double>(c, "lambda_reg", cfg.client.lambda_reg);
    cfg.client.mu_prox = get_or<double>(c, "mu_prox", cfg.client.mu_prox);
    cfg.client.lr = get_or<double>(c, "lr", cfg.client.lr);
    cfg.client.epochs = get_or<long>(c, "epochs", cfg.client.epochs);
    cfg.client.batch_size = get_or<std::size_t>(c, "batch_size", cfg.client.batch_size);
    cfg.client_seed_override = get_seed(c, "seed");
  }
  if (j.contains("eval")) {
    cfg.eval.samples = get_or<std::size_t>(j.at("eval"), "samples", cfg.eval.samples);
  }
  cfg.output_dir = get_or<std::string>(j, "output_dir", cfg.output_dir);
  cfg.master_seed = get_or<std::uint64_t>(j, "master_seed", cfg.master_seed);
  if (master_override) cfg.master_seed = *master_override;

  cfg.finalize_seeds();
  cfg.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::string& path,
                                 std::optional<std::uint64_t> master_override = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse error in '" + path + "': " + e.what());
  }
  return parse_run_config(j, master_override);
}

// Canonical resolved config (all seeds explicit). nlohmann sorts object
// keys, so the dump is byte-stable and hashable.
inline nlohmann::json resolved_config_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["backbone"] = {{"blocks", cfg.backbone.blocks},
                   {"width", cfg.backbone.width},
                   {"input_dim", cfg.backbone.input_dim},
                   {"out_dim", cfg.backbone.out_dim},
                   {"block_scale", cfg.backbone.block_scale},
                   {"pretrain_steps", cfg.backbone.pretrain_steps},
                   {"pretrain_lr", cfg.backbone.pretrain_lr},
                   {"pretrain_batch", cfg.backbone.pretrain_batch},
                   {"seed", cfg.backbone.seed}};
  j["public_task"] = {{"noise_sd", cfg.public_task.noise_sd},
                      {"train_samples", cfg.public_task.train_samples},
                      {"bi_samples", cfg.public_task.bi_samples},
                      {"seed", cfg.public_task.seed}};
  j["scenario"] = {{"kind", scenario_kind_name(cfg.scenario.kind)},
                   {"clients", cfg.scenario.clients},
                   {"train_samples", cfg.scenario.train_samples},
                   {"noise_sd", cfg.scenario.noise_sd},
                   {"seed", cfg.scenario.seed}};
  j["kappa"] = cfg.kappa;
  j["rounds"] = cfg.rounds;
  j["agg"] = {{"method", agg_method_name(cfg.agg.method)},
              {"r0", cfg.agg.r0},
              {"delta_adapt", cfg.agg.delta_adapt},
              {"rho", cfg.agg.rho},
              {"eps", cfg.agg.eps},
              {"ties_density", cfg.agg.ties_density},
              {"ties_lambda", cfg.agg.ties_lambda}};
  j["client"] = {{"lambda_reg", cfg.client.lambda_reg},
                 {"mu_prox", cfg.client.mu_prox},
                 {"lr", cfg.client.lr},
                 {"epochs", cfg.client.epochs},
                 {"batch_size", cfg.client.batch_size},
                 {"seed", cfg.client.seed}};
  j["eval"] = {{"samples", cfg.eval.samples}};
  j["output_dir"] = cfg.output_dir;
  j["master_seed"] = cfg.master_seed;
  return j;
}

inline std::uint64_t config_hash(const RunConfig& cfg) {
  return hash_tag(resolved_config_json(cfg).dump());
}

}  // namespace fedproxy
