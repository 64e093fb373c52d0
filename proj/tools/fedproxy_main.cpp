// Command-line front end: compress / train / merge / fuse / verify-bound /
// compare / report. Exit codes: 0 ok, 2 config error, 3 numerical
// divergence, 4 I/O or file-format error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedproxy/checkpoint.hpp"
#include "fedproxy/config.hpp"
#include "fedproxy/fusion.hpp"
#include "fedproxy/harness.hpp"

namespace {

using namespace fedproxy;

std::optional<std::uint64_t> seed_from_env() {
  const char* env = std::getenv("FEDPROXY_SEED");
  if (!env || !*env) return std::nullopt;
  try {
    return static_cast<std::uint64_t>(std::stoull(env));
  } catch (...) {
    throw ConfigError(std::string("FEDPROXY_SEED is not an integer: '") + env + "'");
  }
}

RunConfig load_config(const std::string& path) {
  return load_run_config(path, seed_from_env());
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

int cmd_compress(const std::string& config_path, const std::string& backbone_ckpt,
                 const std::string& out_dir) {
  RunConfig cfg = load_config(config_path);
  const std::string dir = out_dir.empty() ? cfg.output_dir : out_dir;
  ensure_dir(dir);

  ResidualStack backbone =
      ResidualStack::init_random(cfg.backbone.input_dim, cfg.backbone.width,
                                 cfg.backbone.out_dim, cfg.backbone.blocks,
                                 cfg.backbone.seed, cfg.backbone.block_scale);
  const TaskSpec public_task = make_public_task(cfg);
  if (!backbone_ckpt.empty()) {
    backbone.load(load_checkpoint(backbone_ckpt));
  } else if (cfg.backbone.pretrain_steps > 0) {
    const Batch pub = train_set(public_task);
    local_sgd_on(backbone, pub, public_task.kind, cfg.backbone.pretrain_steps,
                 cfg.backbone.pretrain_lr, cfg.backbone.pretrain_batch);
  }

  const BlockInfluenceReport bi =
      block_influence(backbone, public_task, cfg.public_task.bi_samples);
  const PruneMask mask = select_mask(bi, cfg.kappa);
  ProxyExtraction ex = extract_proxy(backbone, mask);

  save_checkpoint(ex.proxy.flatten(), dir + "/proxy.ckpt");
  save_correspondence(ex.corr, dir + "/correspondence.bin");
  write_text_file(dir + "/bi_report.csv", bi_csv(bi.scores));

  std::cout << "compressed " << backbone.n_blocks() << " blocks -> "
            << ex.proxy.n_blocks() << " (kappa=" << fmt6(cfg.kappa)
            << ", alpha=" << fmt6(ex.corr.alpha()) << ")\n";
  std::cout << "wrote " << dir << "/proxy.ckpt, correspondence.bin, bi_report.csv\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  RunConfig cfg = load_config(config_path);
  if (!out_dir.empty()) cfg.output_dir = out_dir;

  PipelineBase base = prepare_base(cfg);
  FederatedResult fed = run_federated(base, cfg, cfg.agg.method);
  const FlatParams fused = plug_in_fuse(base.backbone_params, fed.final_proxy, base.corr);

  RunReport rep = run_pipeline(cfg);
  ensure_dir(cfg.output_dir);
  emit_report(rep, cfg.output_dir);
  save_checkpoint(fed.final_proxy, cfg.output_dir + "/proxy_final.ckpt");
  save_checkpoint(fused, cfg.output_dir + "/backbone_fused.ckpt");
  save_checkpoint(base.backbone_params, cfg.output_dir + "/backbone_pre.ckpt");
  save_correspondence(base.corr, cfg.output_dir + "/correspondence.bin");

  std::cout << "method " << agg_method_name(cfg.agg.method) << ", " << cfg.rounds
            << " rounds, " << cfg.scenario.clients << " clients\n";
  for (const auto& rm : rep.rounds)
    std::cout << "  round " << rm.round << ": global eval " << fmt6(rm.global_eval_loss)
              << ", mean C " << fmt6(rm.mean_conflict) << ", |delta| "
              << fmt6(rm.delta_norm) << "\n";
  std::cout << "outputs in " << cfg.output_dir << "\n";
  return 0;
}

int cmd_merge(const std::string& global_path, const std::vector<std::string>& client_paths,
              const std::string& method_name, double r0, double delta_adapt, double rho,
              double eps, const std::string& out_path) {
  if (client_paths.empty()) throw ConfigError("merge: need at least one --client checkpoint");
  const FlatParams global = load_checkpoint(global_path);
  std::vector<FlatParams> clients;
  std::vector<TaskVector> taus;
  for (std::size_t k = 0; k < client_paths.size(); ++k) {
    clients.push_back(load_checkpoint(client_paths[k]));
    taus.push_back(TaskVector{sub(clients.back(), global), static_cast<int>(k), 0});
  }

  AggConfig agg;
  agg.method = parse_agg_method(method_name);
  agg.r0 = r0;
  agg.delta_adapt = delta_adapt;
  agg.rho = rho;
  agg.eps = eps;
  agg.validate();

  const std::size_t K = clients.size();
  FlatParams merged = global;
  if (agg.method == AggMethod::fedavg || agg.method == AggMethod::fedprox ||
      agg.method == AggMethod::fedproxy_no_hties) {
    merged = fedavg_merge(clients, std::vector<double>(K, 1.0 / static_cast<double>(K)));
  } else if (agg.method == AggMethod::ties) {
    merged = apply_update(global, ties_merge_baseline(taus, agg.ties_density, agg.ties_lambda));
  } else {
    ServerAnalysis an;
    if (K >= 2) {
      an = analyze_round(taus, global);
    } else {
      an.h_norm = {0.0};
      an.w = {1.0};
    }
    std::vector<TaskVector> sparsified;
    for (std::size_t k = 0; k < K; ++k)
      sparsified.push_back(hties_sparsify(taus[k], retention_rate(agg, an.h_norm[k])));
    merged = apply_update(global, hties_merge(sparsified, an.w, agg.rho, agg.eps));
  }
  save_checkpoint(merged, out_path);
  std::cout << "merged " << K << " clients with " << method_name << " -> " << out_path
            << " (|delta| = " << fmt6(norm2(sub(merged, global))) << ")\n";
  return 0;
}

int cmd_fuse(const std::string& backbone_path, const std::string& proxy_path,
             const std::string& corr_path, const std::string& out_path) {
  const FlatParams backbone = load_checkpoint(backbone_path);
  const FlatParams proxy = load_checkpoint(proxy_path);
  const Correspondence corr = load_correspondence(corr_path);
  const FlatParams fused = plug_in_fuse(backbone, proxy, corr);
  save_checkpoint(fused, out_path);
  std::cout << "fused " << proxy.dim() << " proxy dims into " << backbone.dim()
            << "-dim backbone -> " << out_path << "\n";
  return 0;
}

int cmd_verify_bound(std::size_t dim, std::size_t rows, double mask_fraction,
                     std::size_t count, std::uint64_t seed, std::size_t probes,
                     const std::string& out_path) {
  if (rows == 0) rows = dim + 4;
  std::string csv = "instance,lhs,rhs,t1,t2,t3,l_hat,alpha,holds\n";
  std::size_t held = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const BoundInstance inst =
        random_bound_instance(dim, rows, mask_fraction, seed, i, probes);
    const BoundCheck chk = check_bound(inst);
    csv += std::to_string(i) + ',' + fmt17(chk.lhs) + ',' + fmt17(chk.rhs) + ',' +
           fmt17(chk.gap.t1) + ',' + fmt17(chk.gap.t2) + ',' + fmt17(chk.gap.t3) + ',' +
           fmt17(inst.L_hat) + ',' + fmt17(inst.alpha) + ',' + (chk.holds ? "1" : "0") + '\n';
    if (chk.holds) ++held;
  }
  if (out_path.empty() || out_path == "-") {
    std::cout << csv;
  } else {
    write_text_file(out_path, csv);
    std::cout << "wrote " << out_path << "\n";
  }
  std::cout << "bound held on " << held << "/" << count << " instances (D=" << dim
            << ", m=" << rows << ", mask fraction=" << fmt6(mask_fraction) << ")\n";
  return 0;
}

int cmd_compare(const std::string& config_path, const std::string& methods_arg,
                const std::string& out_dir) {
  RunConfig cfg = load_config(config_path);
  const std::string dir = out_dir.empty() ? cfg.output_dir : out_dir;

  std::vector<AggMethod> methods;
  std::string cur;
  for (char c : methods_arg + ",") {
    if (c == ',') {
      if (!cur.empty()) methods.push_back(parse_agg_method(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (methods.size() < 2) throw ConfigError("compare: need at least 2 methods");

  const std::vector<MethodRow> rows = compare_methods(cfg, methods);
  ensure_dir(dir);
  write_text_file(dir + "/comparison.csv", comparison_csv(rows));
  write_text_file(dir + "/comparison.md", comparison_markdown(rows));
  std::cout << comparison_markdown(rows);
  std::cout << "wrote " << dir << "/comparison.csv and comparison.md\n";
  return 0;
}

int cmd_report(const std::string& input_path, const std::string& out_dir, bool csv,
               bool markdown) {
  std::ifstream in(input_path);
  if (!in) throw IoError("cannot open report '" + input_path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("report parse error in '" + input_path + "': " + e.what());
  }
  const RunReport rep = report_from_json(j);
  EmitFormats formats;
  formats.csv = csv;
  formats.markdown = markdown;
  const auto written = emit_report(rep, out_dir, formats);
  for (const auto& p : written) std::cout << "wrote " << p << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedproxy: deterministic federated proxy-model laboratory"};
  app.require_subcommand(1);

  std::string config_path, backbone_ckpt, out_dir, out_path;

  auto* compress = app.add_subcommand("compress", "compress a backbone into a proxy");
  compress->add_option("--config", config_path, "run config (json)")->required();
  compress->add_option("--backbone", backbone_ckpt,
                       "backbone checkpoint (default: pretrain per config)");
  compress->add_option("--out", out_dir, "output directory (default: config output_dir)");

  auto* train = app.add_subcommand("train", "run the full pipeline per config");
  train->add_option("--config", config_path, "run config (json)")->required();
  train->add_option("--out", out_dir, "output directory override");

  std::string global_path, method_name = "fedproxy";
  std::vector<std::string> client_paths;
  double r0 = 1.0, delta_adapt = 0.2, rho = 1.1, eps = 1e-8;
  auto* merge = app.add_subcommand("merge", "one-shot merge of client checkpoints");
  merge->add_option("--global", global_path, "round-start global checkpoint")->required();
  merge->add_option("--client", client_paths, "client checkpoint (repeatable)")->required();
  merge->add_option("--method", method_name, "aggregation method");
  merge->add_option("--r0", r0, "base retention rate");
  merge->add_option("--delta-adapt", delta_adapt, "retention heterogeneity penalty");
  merge->add_option("--rho", rho, "dominance threshold");
  merge->add_option("--eps", eps, "dominance stability constant");
  merge->add_option("--out", out_path, "merged checkpoint path")->required();

  std::string proxy_path, corr_path;
  auto* fuse = app.add_subcommand("fuse", "plug proxy parameters into a backbone");
  fuse->add_option("--backbone", backbone_ckpt, "backbone checkpoint")->required();
  fuse->add_option("--proxy", proxy_path, "proxy checkpoint")->required();
  fuse->add_option("--corr", corr_path, "correspondence file")->required();
  fuse->add_option("--out", out_path, "fused checkpoint path")->required();

  std::size_t dim = 8, rows = 0, count = 100, probes = 256;
  double mask_fraction = 0.5;
  std::uint64_t seed = 1;
  auto* verify = app.add_subcommand("verify-bound",
                                    "fusion-error bound check on random quadratic instances");
  verify->add_option("--dim", dim, "parameter dimension D (>= 2)");
  verify->add_option("--rows", rows, "rows m of A (default D+4)");
  verify->add_option("--mask-fraction", mask_fraction, "fraction of dims kept by the proxy");
  verify->add_option("--count", count, "number of instances");
  verify->add_option("--seed", seed, "sweep seed");
  verify->add_option("--probes", probes, "Lipschitz probe count");
  verify->add_option("--out", out_path, "CSV output path ('-' for stdout)");

  std::string methods_arg =
      "fedproxy,fedproxy_no_pcr,fedproxy_no_hties,fedavg,fedprox,ties";
  auto* compare = app.add_subcommand("compare", "run several methods from one starting point");
  compare->add_option("--config", config_path, "run config (json)")->required();
  compare->add_option("--methods", methods_arg, "comma-separated method list");
  compare->add_option("--out", out_dir, "output directory (default: config output_dir)");

  std::string input_path;
  bool fmt_csv = true, fmt_md = true;
  auto* report = app.add_subcommand("report", "regenerate csv/markdown from report.json");
  report->add_option("--input", input_path, "report.json path")->required();
  report->add_option("--out", out_dir, "output directory")->required();
  report->add_flag("--csv,!--no-csv", fmt_csv, "emit CSV files");
  report->add_flag("--markdown,!--no-markdown", fmt_md, "emit markdown");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (compress->parsed()) return cmd_compress(config_path, backbone_ckpt, out_dir);
    if (train->parsed()) return cmd_train(config_path, out_dir);
    if (merge->parsed())
      return cmd_merge(global_path, client_paths, method_name, r0, delta_adapt, rho, eps,
                       out_path);
    if (fuse->parsed()) return cmd_fuse(backbone_ckpt, proxy_path, corr_path, out_path);
    if (verify->parsed())
      return cmd_verify_bound(dim, rows, mask_fraction, count, seed, probes, out_path);
    if (compare->parsed()) return cmd_compare(config_path, methods_arg, out_dir);
    if (report->parsed()) return cmd_report(input_path, out_dir, fmt_csv, fmt_md);
  } catch (const fedproxy::DivergenceError& e) {
    std::cerr << "error (divergence): " << e.what() << "\n";
    return 3;
  } catch (const fedproxy::IoError& e) {
    std::cerr << "error (io/format): " << e.what() << "\n";
    return 4;
  } catch (const fedproxy::ConfigError& e) {
    std::cerr << "error (config): " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
