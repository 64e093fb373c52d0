#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedproxy/aggregation.hpp"
#include "fedproxy/checkpoint.hpp"
#include "fedproxy/compression.hpp"
#include "fedproxy/config.hpp"
#include "fedproxy/fusion.hpp"

namespace fedproxy {

inline constexpr const char* kVersion = "0.1.0";

// ---- deterministic number formatting ----

// Full round-trip precision; used everywhere byte-stability matters.
inline std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// ---- pipeline stages ----

// Everything the federated stage consumes: pretrained backbone, compressed
// proxy, correspondence, and the client tasks. Shared by all methods in a
// comparison so ablations start from the same point.
struct PipelineBase {
  ResidualStack backbone;
  FlatParams backbone_params;  // after public-task pretraining
  ResidualStack proxy;
  Correspondence corr;
  BlockInfluenceReport bi;
  PruneMask mask;
  TaskSpec public_task;
  std::vector<TaskSpec> tasks;
  double pretrain_final_loss = 0.0;
};

inline TaskSpec make_public_task(const RunConfig& cfg) {
  TaskSpec t;
  t.kind = TaskKind::regression;
  t.input_dim = cfg.backbone.input_dim;
  t.shared_seed = derive_seed(cfg.public_task.seed, "teacher");
  t.own_sign = 0.0;
  t.noise_sd = cfg.public_task.noise_sd;
  t.seed = derive_seed(cfg.public_task.seed, "data");
  t.shard = 0;
  t.train_samples = cfg.public_task.train_samples;
  return t;
}

// Stand-in for "a pretrained backbone exists": train the randomly
// initialized stack on the public task for a fixed step budget, then
// compress it and build the client scenario.
inline PipelineBase prepare_base(const RunConfig& cfg) {
  cfg.validate();
  PipelineBase base;
  base.public_task = make_public_task(cfg);
  base.backbone =
      ResidualStack::init_random(cfg.backbone.input_dim, cfg.backbone.width,
                                 cfg.backbone.out_dim, cfg.backbone.blocks,
                                 cfg.backbone.seed, cfg.backbone.block_scale);
  if (cfg.backbone.pretrain_steps > 0) {
    const Batch pub = train_set(base.public_task);
    TrainResult tr = local_sgd_on(base.backbone, pub, base.public_task.kind,
                                  cfg.backbone.pretrain_steps, cfg.backbone.pretrain_lr,
                                  cfg.backbone.pretrain_batch);
    base.pretrain_final_loss =
        tr.loss_trajectory.empty() ? 0.0 : tr.loss_trajectory.back();
  }
  base.backbone_params = base.backbone.flatten();

  base.bi = block_influence(base.backbone, base.public_task, cfg.public_task.bi_samples);
  base.mask = select_mask(base.bi, cfg.kappa);
  ProxyExtraction ex = extract_proxy(base.backbone, base.mask);
  base.proxy = std::move(ex.proxy);
  base.corr = std::move(ex.corr);

  base.tasks = make_scenario(cfg.scenario.kind, cfg.scenario.clients, cfg.scenario.seed,
                             cfg.backbone.input_dim, cfg.scenario.train_samples,
                             cfg.scenario.noise_sd);
  return base;
}

struct FederatedResult {
  std::vector<RoundMetrics> rounds;
  FlatParams final_proxy;
};

inline FederatedResult run_federated(const PipelineBase& base, const RunConfig& cfg,
                                     AggMethod method) {
  AggConfig agg = cfg.agg;
  agg.method = method;
  ClientConfig ccfg = cfg.client;
  if (method == AggMethod::fedproxy_no_pcr) ccfg.lambda_reg = 0.0;

  FederatedResult res;
  RoundState state = RoundState::initial(base.proxy.flatten());
  for (long t = 0; t < cfg.rounds; ++t)
    res.rounds.push_back(
        run_round(state, base.proxy, base.tasks, agg, ccfg, cfg.eval.samples));
  res.final_proxy = std::move(state.global);
  return res;
}

// ---- reporting ----

struct ClientEvalRow {
  int client_id = 0;
  TaskKind kind = TaskKind::regression;
  double backbone_pre_loss = 0.0;   // pretrained backbone, before fusion
  double backbone_post_loss = 0.0;  // fused backbone
  double proxy_loss = 0.0;          // final global proxy
  double backbone_pre_acc = 0.0;    // classification only
  double backbone_post_acc = 0.0;
};

struct MethodRow {
  std::string method;
  double proxy_eval_mean = 0.0;  // final global proxy, mean over client eval sets
  double fused_eval_mean = 0.0;  // fused backbone, mean over client eval sets
  double delta_proxy = 0.0;      // vs the fedproxy row
  double delta_fused = 0.0;
};

struct RunReport {
  nlohmann::json config;  // canonical resolved config
  std::uint64_t config_hash = 0;
  std::string version = kVersion;
  std::vector<double> bi_scores;
  std::vector<int> kept_blocks;
  double alpha = 0.0;
  double pretrain_final_loss = 0.0;
  std::vector<RoundMetrics> rounds;
  std::vector<ClientEvalRow> final_evals;
  std::vector<MethodRow> comparison;  // present for compare runs
};

inline double eval_model_loss(const ResidualStack& model, const TaskSpec& task,
                              std::size_t n) {
  return task_loss(model, eval_set(task, n), task.kind);
}

inline RunReport run_pipeline(const RunConfig& cfg) {
  PipelineBase base = prepare_base(cfg);
  FederatedResult fed = run_federated(base, cfg, cfg.agg.method);

  const FlatParams fused = plug_in_fuse(base.backbone_params, fed.final_proxy, base.corr);
  // fusion safety: dims outside the correspondence must be untouched
  {
    const SubspaceMask m = base.corr.backbone_mask(base.backbone.layout());
    for (std::size_t d = 0; d < fused.dim(); ++d)
      if (!m.keep[d] && fused[d] != base.backbone_params[d])
        throw Error("run_pipeline: fusion modified a dimension outside the correspondence");
  }

  ResidualStack fused_model = base.backbone;
  fused_model.load(fused);
  ResidualStack pre_model = base.backbone;
  pre_model.load(base.backbone_params);
  ResidualStack proxy_model = base.proxy;
  proxy_model.load(fed.final_proxy);

  RunReport rep;
  rep.config = resolved_config_json(cfg);
  rep.config_hash = config_hash(cfg);
  rep.bi_scores = base.bi.scores;
  for (std::size_t b = 0; b < base.mask.keep_block.size(); ++b)
    if (base.mask.keep_block[b]) rep.kept_blocks.push_back(static_cast<int>(b));
  rep.alpha = base.corr.alpha();
  rep.pretrain_final_loss = base.pretrain_final_loss;
  rep.rounds = std::move(fed.rounds);

  for (std::size_t k = 0; k < base.tasks.size(); ++k) {
    const TaskSpec& task = base.tasks[k];
    const Batch ev = eval_set(task, cfg.eval.samples);
    ClientEvalRow row;
    row.client_id = static_cast<int>(k);
    row.kind = task.kind;
    const Mat pre_out = forward_with_trace(pre_model, ev).outputs;
    const Mat post_out = forward_with_trace(fused_model, ev).outputs;
    row.backbone_pre_loss = loss_from_outputs(pre_out, ev.targets, task.kind);
    row.backbone_post_loss = loss_from_outputs(post_out, ev.targets, task.kind);
    row.proxy_loss = eval_model_loss(proxy_model, task, cfg.eval.samples);
    if (task.kind == TaskKind::classification) {
      row.backbone_pre_acc = accuracy01(pre_out, ev.targets);
      row.backbone_post_acc = accuracy01(post_out, ev.targets);
    }
    rep.final_evals.push_back(row);
  }
  return rep;
}

// Runs every method from one shared compressed starting point and reports
// final eval losses plus deltas against the fedproxy row.
inline std::vector<MethodRow> compare_methods(const RunConfig& cfg,
                                              const std::vector<AggMethod>& methods) {
  if (methods.size() < 2) throw ConfigError("compare_methods: need at least 2 methods");
  PipelineBase base = prepare_base(cfg);

  std::vector<MethodRow> rows;
  for (AggMethod m : methods) {
    FederatedResult fed = run_federated(base, cfg, m);
    MethodRow row;
    row.method = agg_method_name(m);
    row.proxy_eval_mean = fed.rounds.back().global_eval_loss;

    const FlatParams fused = plug_in_fuse(base.backbone_params, fed.final_proxy, base.corr);
    ResidualStack fused_model = base.backbone;
    fused_model.load(fused);
    double acc = 0.0;
    for (const TaskSpec& task : base.tasks)
      acc += eval_model_loss(fused_model, task, cfg.eval.samples);
    row.fused_eval_mean = acc / static_cast<double>(base.tasks.size());
    rows.push_back(std::move(row));
  }

  std::size_t ref = 0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i].method == "fedproxy") {
      ref = i;
      break;
    }
  for (auto& r : rows) {
    r.delta_proxy = r.proxy_eval_mean - rows[ref].proxy_eval_mean;
    r.delta_fused = r.fused_eval_mean - rows[ref].fused_eval_mean;
  }
  return rows;
}

// ---- serialization of reports ----

inline std::string metrics_csv(const RunReport& rep) {
  std::string out =
      "round,client_id,task_loss,eval_loss,h_k,w_k,mean_C,retention,delta_norm\n";
  for (const auto& rm : rep.rounds) {
    for (const auto& c : rm.clients) {
      out += std::to_string(rm.round) + ',' + std::to_string(c.client_id) + ',' +
             fmt17(c.task_loss) + ',' + fmt17(c.eval_loss) + ',' + fmt17(c.h) + ',' +
             fmt17(c.weight) + ",," + (c.sparsified ? fmt17(c.retention) : std::string()) +
             ",\n";
    }
    out += std::to_string(rm.round) + ",global,," + fmt17(rm.global_eval_loss) + ",,," +
           fmt17(rm.mean_conflict) + ",," + fmt17(rm.delta_norm) + "\n";
  }
  return out;
}

inline std::string final_eval_csv(const RunReport& rep) {
  std::string out =
      "client_id,kind,backbone_pre_loss,backbone_post_loss,proxy_loss,backbone_pre_acc,"
      "backbone_post_acc\n";
  for (const auto& r : rep.final_evals) {
    out += std::to_string(r.client_id) + ',' + task_kind_name(r.kind) + ',' +
           fmt17(r.backbone_pre_loss) + ',' + fmt17(r.backbone_post_loss) + ',' +
           fmt17(r.proxy_loss) + ',';
    if (r.kind == TaskKind::classification)
      out += fmt17(r.backbone_pre_acc) + ',' + fmt17(r.backbone_post_acc);
    else
      out += ",";
    out += '\n';
  }
  return out;
}

inline std::string bi_csv(const std::vector<double>& scores) {
  std::string out = "block_index,bi_score\n";
  for (std::size_t i = 0; i < scores.size(); ++i)
    out += std::to_string(i) + ',' + fmt17(scores[i]) + '\n';
  return out;
}

inline std::string comparison_csv(const std::vector<MethodRow>& rows) {
  std::string out = "method,proxy_eval_mean,fused_eval_mean,delta_proxy,delta_fused\n";
  for (const auto& r : rows)
    out += r.method + ',' + fmt17(r.proxy_eval_mean) + ',' + fmt17(r.fused_eval_mean) + ',' +
           fmt17(r.delta_proxy) + ',' + fmt17(r.delta_fused) + '\n';
  return out;
}

inline std::string comparison_markdown(const std::vector<MethodRow>& rows) {
  std::string out = "| method | proxy eval (mean) | fused eval (mean) | d proxy | d fused |\n";
  out += "|---|---|---|---|---|\n";
  for (const auto& r : rows)
    out += "| " + r.method + " | " + fmt6(r.proxy_eval_mean) + " | " +
           fmt6(r.fused_eval_mean) + " | " + fmt6(r.delta_proxy) + " | " +
           fmt6(r.delta_fused) + " |\n";
  return out;
}

inline std::string report_markdown(const RunReport& rep) {
  std::string out = "# Run report\n\n";
  out += "- version: " + rep.version + "\n";
  out += "- config hash: " + std::to_string(rep.config_hash) + "\n";
  out += "- alpha (fraction of backbone dims removed): " + fmt6(rep.alpha) + "\n";
  out += "- pretrain final loss: " + fmt6(rep.pretrain_final_loss) + "\n";
  out += "- kept blocks:";
  for (int b : rep.kept_blocks) out += ' ' + std::to_string(b);
  out += "\n\n## Block influence\n\n| block | BI |\n|---|---|\n";
  for (std::size_t i = 0; i < rep.bi_scores.size(); ++i)
    out += "| " + std::to_string(i) + " | " + fmt6(rep.bi_scores[i]) + " |\n";

  out += "\n## Rounds\n\n";
  out += "| round | client | task loss | eval loss | h | w | mean C | retention | delta norm |\n";
  out += "|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& rm : rep.rounds) {
    for (const auto& c : rm.clients)
      out += "| " + std::to_string(rm.round) + " | " + std::to_string(c.client_id) + " | " +
             fmt6(c.task_loss) + " | " + fmt6(c.eval_loss) + " | " + fmt6(c.h) + " | " +
             fmt6(c.weight) + " |  | " + (c.sparsified ? fmt6(c.retention) : std::string()) +
             " |  |\n";
    out += "| " + std::to_string(rm.round) + " | global |  | " + fmt6(rm.global_eval_loss) +
           " |  |  | " + fmt6(rm.mean_conflict) + " |  | " + fmt6(rm.delta_norm) + " |\n";
  }

  out += "\n## Final evaluation\n\n";
  out += "| client | kind | backbone pre | backbone fused | proxy | acc pre | acc fused |\n";
  out += "|---|---|---|---|---|---|---|\n";
  for (const auto& r : rep.final_evals) {
    out += "| " + std::to_string(r.client_id) + " | " + task_kind_name(r.kind) + " | " +
           fmt6(r.backbone_pre_loss) + " | " + fmt6(r.backbone_post_loss) + " | " +
           fmt6(r.proxy_loss) + " | ";
    if (r.kind == TaskKind::classification)
      out += fmt6(r.backbone_pre_acc) + " | " + fmt6(r.backbone_post_acc) + " |\n";
    else
      out += " |  |\n";
  }
  if (!rep.comparison.empty()) {
    out += "\n## Method comparison\n\n" + comparison_markdown(rep.comparison);
  }
  return out;
}

inline nlohmann::json report_json(const RunReport& rep) {
  nlohmann::json j;
  j["version"] = rep.version;
  j["config"] = rep.config;
  j["config_hash"] = rep.config_hash;
  j["alpha"] = rep.alpha;
  j["pretrain_final_loss"] = rep.pretrain_final_loss;
  j["bi_scores"] = rep.bi_scores;
  j["kept_blocks"] = rep.kept_blocks;
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& rm : rep.rounds) {
    nlohmann::json jr;
    jr["round"] = rm.round;
    jr["mean_conflict"] = rm.mean_conflict;
    jr["delta_norm"] = rm.delta_norm;
    jr["global_eval_loss"] = rm.global_eval_loss;
    nlohmann::json clients = nlohmann::json::array();
    for (const auto& c : rm.clients) {
      clients.push_back({{"client_id", c.client_id},
                         {"task_loss", c.task_loss},
                         {"eval_loss", c.eval_loss},
                         {"h", c.h},
                         {"h_norm", c.h_norm},
                         {"weight", c.weight},
                         {"retention", c.retention},
                         {"sparsified", c.sparsified}});
    }
    jr["clients"] = std::move(clients);
    rounds.push_back(std::move(jr));
  }
  j["rounds"] = std::move(rounds);
  nlohmann::json evals = nlohmann::json::array();
  for (const auto& r : rep.final_evals) {
    evals.push_back({{"client_id", r.client_id},
                     {"kind", task_kind_name(r.kind)},
                     {"backbone_pre_loss", r.backbone_pre_loss},
                     {"backbone_post_loss", r.backbone_post_loss},
                     {"proxy_loss", r.proxy_loss},
                     {"backbone_pre_acc", r.backbone_pre_acc},
                     {"backbone_post_acc", r.backbone_post_acc}});
  }
  j["final_evals"] = std::move(evals);
  if (!rep.comparison.empty()) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : rep.comparison)
      rows.push_back({{"method", r.method},
                      {"proxy_eval_mean", r.proxy_eval_mean},
                      {"fused_eval_mean", r.fused_eval_mean},
                      {"delta_proxy", r.delta_proxy},
                      {"delta_fused", r.delta_fused}});
    j["comparison"] = std::move(rows);
  }
  return j;
}

inline RunReport report_from_json(const nlohmann::json& j) {
  RunReport rep;
  try {
    rep.version = j.value("version", std::string(kVersion));
    rep.config = j.value("config", nlohmann::json::object());
    rep.config_hash = j.value("config_hash", std::uint64_t{0});
    rep.alpha = j.value("alpha", 0.0);
    rep.pretrain_final_loss = j.value("pretrain_final_loss", 0.0);
    rep.bi_scores = j.value("bi_scores", std::vector<double>{});
    rep.kept_blocks = j.value("kept_blocks", std::vector<int>{});
    for (const auto& jr : j.value("rounds", nlohmann::json::array())) {
      RoundMetrics rm;
      rm.round = jr.value("round", 0);
      rm.mean_conflict = jr.value("mean_conflict", 0.0);
      rm.delta_norm = jr.value("delta_norm", 0.0);
      rm.global_eval_loss = jr.value("global_eval_loss", 0.0);
      for (const auto& jc : jr.value("clients", nlohmann::json::array())) {
        RoundMetrics::ClientRow c;
        c.client_id = jc.value("client_id", 0);
        c.task_loss = jc.value("task_loss", 0.0);
        c.eval_loss = jc.value("eval_loss", 0.0);
        c.h = jc.value("h", 0.0);
        c.h_norm = jc.value("h_norm", 0.0);
        c.weight = jc.value("weight", 0.0);
        c.retention = jc.value("retention", 1.0);
        c.sparsified = jc.value("sparsified", false);
        rm.clients.push_back(c);
      }
      rep.rounds.push_back(std::move(rm));
    }
    for (const auto& je : j.value("final_evals", nlohmann::json::array())) {
      ClientEvalRow r;
      r.client_id = je.value("client_id", 0);
      r.kind = je.value("kind", std::string("regression")) == "classification"
                   ? TaskKind::classification
                   : TaskKind::regression;
      r.backbone_pre_loss = je.value("backbone_pre_loss", 0.0);
      r.backbone_post_loss = je.value("backbone_post_loss", 0.0);
      r.proxy_loss = je.value("proxy_loss", 0.0);
      r.backbone_pre_acc = je.value("backbone_pre_acc", 0.0);
      r.backbone_post_acc = je.value("backbone_post_acc", 0.0);
      rep.final_evals.push_back(r);
    }
    for (const auto& jc : j.value("comparison", nlohmann::json::array())) {
      MethodRow r;
      r.method = jc.value("method", std::string());
      r.proxy_eval_mean = jc.value("proxy_eval_mean", 0.0);
      r.fused_eval_mean = jc.value("fused_eval_mean", 0.0);
      r.delta_proxy = jc.value("delta_proxy", 0.0);
      r.delta_fused = jc.value("delta_fused", 0.0);
      rep.comparison.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed report json: ") + e.what());
  }
  return rep;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failure on '" + path + "'");
}

struct EmitFormats {
  bool csv = true;
  bool markdown = true;
};

inline std::vector<std::string> emit_report(const RunReport& rep, const std::string& dir,
                                            EmitFormats formats = {}) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
  std::vector<std::string> written;
  auto emit = [&](const std::string& name, const std::string& text) {
    const std::string path = dir + "/" + name;
    write_text_file(path, text);
    written.push_back(path);
  };
  if (formats.csv) {
    emit("metrics.csv", metrics_csv(rep));
    emit("final_eval.csv", final_eval_csv(rep));
    emit("bi_report.csv", bi_csv(rep.bi_scores));
    if (!rep.comparison.empty()) emit("comparison.csv", comparison_csv(rep.comparison));
  }
  if (formats.markdown) emit("report.md", report_markdown(rep));
  emit("report.json", report_json(rep).dump(2) + "\n");
  return written;
}

}  // namespace fedproxy
