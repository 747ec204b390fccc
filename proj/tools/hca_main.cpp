#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hca/config.hpp"
#include "hca/data.hpp"
#include "hca/evaluation.hpp"
#include "hca/gradcheck.hpp"
#include "hca/model.hpp"
#include "hca/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::string default_out_dir() {
  const char* env = std::getenv("HCA_OUT");
  return env ? env : "";
}

fs::path resolve_out_dir(const std::string& cli_out, const std::string& config_out) {
  if (!cli_out.empty()) return cli_out;
  if (!config_out.empty()) return config_out;
  const std::string env = default_out_dir();
  if (!env.empty()) return env;
  throw hca::ConfigError("no output directory: pass --out, set out_dir, or export HCA_OUT");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw hca::DataError("cannot write '" + path.string() + "'");
  out << text;
}

void write_json(const fs::path& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

hca::ImageGeometry parse_geometry(const std::string& s) {
  hca::ImageGeometry g;
  if (s.empty()) return g;
  if (std::sscanf(s.c_str(), "%ld,%ld,%ld", &g.channels, &g.height, &g.width) != 3)
    throw hca::ConfigError("bad --geometry '" + s + "', expected c,h,w");
  return g;
}

hca::Dataset materialize(const hca::DataSourceConfig& src, hca::DatasetKind kind) {
  if (src.manifest) {
    hca::Dataset ds = hca::load_manifest(*src.manifest);
    hca::check_data(ds.kind == kind, "manifest '" + *src.manifest + "' is not a " +
                                         hca::to_string(kind) + " set");
    return ds;
  }
  return kind == hca::DatasetKind::Proxy
             ? hca::synth_proxy(src.seed, src.n, src.geometry)
             : hca::synth_target(src.seed, src.n, src.geometry, src.noise_sd);
}

// ---- synth-data -------------------------------------------------------------

struct SynthArgs {
  std::string kind;
  std::uint64_t seed = 0;
  int n = 0;
  std::string out;
  std::string geometry;
  double noise_sd = 0.0;
  bool force = false;
};

int run_synth(const SynthArgs& args) {
  const hca::DatasetKind kind = hca::dataset_kind_from(args.kind);
  const fs::path out = resolve_out_dir(args.out, "");
  if (fs::exists(out) && !fs::is_empty(out) && !args.force)
    throw hca::DataError("output directory '" + out.string() +
                         "' is not empty; pass --force to overwrite");
  const hca::ImageGeometry geo = parse_geometry(args.geometry);
  hca::Dataset ds = kind == hca::DatasetKind::Proxy
                        ? hca::synth_proxy(args.seed, args.n, geo)
                        : hca::synth_target(args.seed, args.n, geo, args.noise_sd);
  hca::save_dataset(ds, out, hca::dataset_meta_json(ds, args.seed, args.n, geo, args.noise_sd));
  std::cout << "wrote " << ds.samples.size() << " samples to " << out.string() << "\n";
  return kExitOk;
}

// ---- pretrain ---------------------------------------------------------------

struct ConfigArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
};

int run_pretrain(const ConfigArgs& args) {
  hca::RunConfig cfg = hca::load_run_config(args.config);
  const fs::path out = resolve_out_dir(args.out, cfg.out_dir);
  fs::create_directories(out);
  if (!cfg.proxy) throw hca::ConfigError("config /data/proxy: required for pretrain");

  hca::ModelSpec spec = cfg.model;
  spec.head_kind = hca::HeadKind::Pretrain15;
  if (args.seed) cfg.pretrain.seed = *args.seed;

  const hca::Dataset proxy = materialize(*cfg.proxy, hca::DatasetKind::Proxy);
  hca::LossTrace trace;
  const hca::Checkpoint ckpt = hca::pretrain(spec, proxy, cfg.pretrain, &trace);
  hca::checkpoint_save(ckpt, out / "checkpoint");
  hca::write_loss_trace_csv(trace, out / "pretrain_loss.csv");

  // Per-class ranking quality on the proxy set (pre-training phase report).
  const auto preds = hca::predict(ckpt, proxy);
  json aucs;
  double auc_sum = 0.0;
  int auc_count = 0;
  for (int c = 0; c < 15; ++c) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t i = 0; i < proxy.samples.size(); ++i) {
      scores.push_back(preds[i][static_cast<std::size_t>(c)]);
      labels.push_back(static_cast<int>(proxy.samples[i].labels[static_cast<std::size_t>(c)]));
    }
    const std::string key = "class_" + std::to_string(c);
    try {
      const double a = hca::auc(scores, labels);
      aucs[key] = a;
      auc_sum += a;
      ++auc_count;
    } catch (const hca::DataError&) {
      aucs[key] = nullptr;  // single-class label column
    }
  }
  json report;
  report["per_class_auc"] = aucs;
  if (auc_count > 0) report["mean_auc"] = auc_sum / auc_count;
  report["final_train_loss"] = trace.empty() ? json() : json(trace.back().train_loss);
  write_json(out / "pretrain_auc.json", report);
  std::cout << "pretrained " << cfg.pretrain.epochs << " epochs; checkpoint at "
            << (out / "checkpoint").string() << "\n";
  return kExitOk;
}

// ---- crossval ---------------------------------------------------------------

int run_crossval(const ConfigArgs& args) {
  hca::RunConfig cfg = hca::load_run_config(args.config);
  const fs::path out = resolve_out_dir(args.out, cfg.out_dir);
  fs::create_directories(out);
  if (!cfg.target) throw hca::ConfigError("config /data/target: required for crossval");
  if (args.seed) cfg.seeds = {*args.seed};
  if (args.jobs) cfg.jobs = *args.jobs;

  hca::ModelSpec spec = cfg.model;
  spec.head_kind = hca::HeadKind::Severity2;

  const hca::Dataset target = materialize(*cfg.target, hca::DatasetKind::Target);
  std::optional<hca::Checkpoint> donor;
  if (cfg.pretrain_checkpoint) donor = hca::checkpoint_load(*cfg.pretrain_checkpoint);

  const std::string backbone = hca::backbone_label(spec.backbone);
  std::vector<json> per_seed;
  for (const std::uint64_t seed : cfg.seeds) {
    const hca::CrossvalResult result = hca::crossval(
        spec, target, donor ? &*donor : nullptr, cfg.finetune, cfg.k, seed, cfg.jobs);
    const std::string tag = "_s" + std::to_string(seed);
    hca::write_predictions_csv(result.predictions, out / ("fold_predictions" + tag + ".csv"));
    hca::write_fold_metrics_csv(result.folds, out / ("fold_metrics" + tag + ".csv"));
    for (std::size_t f = 0; f < result.fold_traces.size(); ++f)
      hca::write_loss_trace_csv(result.fold_traces[f],
                                out / ("loss_fold" + std::to_string(f) + tag + ".csv"));
    const json agg = hca::aggregate_to_json(cfg.label, backbone, spec.attention_kind,
                                            donor.has_value(), seed, cfg.k, result.aggregated);
    write_json(out / ("aggregate" + tag + ".json"), agg);
    per_seed.push_back(agg);
    std::cout << "seed " << seed << ": mse " << result.aggregated.at("mse").mean << ", r2(ge) "
              << result.aggregated.at("r2_geographic_extend").mean << "\n";
  }

  if (per_seed.size() > 1) {
    json summary;
    summary["label"] = cfg.label;
    summary["backbone"] = backbone;
    summary["attention"] = hca::to_string(spec.attention_kind);
    summary["pretrained"] = donor.has_value();
    summary["k"] = cfg.k;
    summary["seeds"] = cfg.seeds;
    json metrics;
    for (const auto& [name, stat] : per_seed[0]["metrics"].items()) {
      (void)stat;
      std::vector<double> means;
      for (const json& s : per_seed) means.push_back(s["metrics"][name]["mean"].get<double>());
      const double n = static_cast<double>(means.size());
      double mean = 0.0;
      for (double v : means) mean += v;
      mean /= n;
      double ss = 0.0;
      for (double v : means) ss += (v - mean) * (v - mean);
      json m;
      m["mean"] = mean;
      m["std"] = means.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
      m["per_seed"] = means;
      metrics[name] = m;
    }
    summary["metrics"] = metrics;
    write_json(out / "summary.json", summary);
  }
  return kExitOk;
}

// ---- grad-check -------------------------------------------------------------

int run_grad_check(const ConfigArgs& args) {
  hca::RunConfig cfg = hca::load_run_config(args.config);
  const auto entries = hca::gradient_check_suite(cfg.model);
  double worst = 0.0;
  for (const auto& e : entries) {
    std::printf("%-24s %.3e\n", e.op.c_str(), e.max_rel_err);
    worst = std::max(worst, e.max_rel_err);
  }
  std::printf("%-24s %.3e\n", "worst", worst);
  return worst <= 1e-4 ? kExitOk : kExitRuntime;
}

// ---- report -----------------------------------------------------------------

int run_report(const std::vector<std::string>& inputs, const std::string& out_file) {
  std::vector<json> aggregates;
  for (const std::string& input : inputs) {
    const fs::path dir(input);
    std::vector<fs::path> files;
    if (fs::is_directory(dir)) {
      if (fs::exists(dir / "summary.json")) {
        files.push_back(dir / "summary.json");
      } else {
        for (const auto& entry : fs::directory_iterator(dir)) {
          const std::string name = entry.path().filename().string();
          if (name.rfind("aggregate", 0) == 0 && entry.path().extension() == ".json")
            files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
      }
    } else if (fs::exists(dir)) {
      files.push_back(dir);
    }
    if (files.empty())
      throw hca::DataError("report: no aggregate JSON found under '" + input + "'");
    for (const fs::path& f : files) {
      std::ifstream in(f);
      aggregates.push_back(json::parse(in));
    }
  }
  const std::string table = hca::render_report_table(aggregates);
  write_text(out_file, table);
  std::cout << "wrote " << out_file << " (" << aggregates.size() << " rows)\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hybrid convolution-attention experiment harness"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth-data", "generate a synthetic dataset");
  synth_cmd->add_option("--kind", synth.kind, "proxy or target")
      ->required()
      ->check(CLI::IsMember({"proxy", "target"}));
  synth_cmd->add_option("--seed", synth.seed, "generator seed");
  synth_cmd->add_option("--n", synth.n, "sample count")->required()->check(CLI::PositiveNumber);
  synth_cmd->add_option("--out", synth.out, "output directory (or HCA_OUT)");
  synth_cmd->add_option("--geometry", synth.geometry, "image geometry c,h,w (default 1,32,32)");
  synth_cmd->add_option("--noise-sd", synth.noise_sd,
                        "target label noise, fraction of score range");
  synth_cmd->add_flag("--force", synth.force, "overwrite a non-empty output directory");

  ConfigArgs pretrain_args, crossval_args, grad_args;
  CLI::App* pretrain_cmd = app.add_subcommand("pretrain", "run the proxy pre-training phase");
  pretrain_cmd->add_option("--config", pretrain_args.config, "run config JSON")->required();
  pretrain_cmd->add_option("--out", pretrain_args.out, "output directory override");
  std::uint64_t seed_opt = 0;
  CLI::Option* pseed = pretrain_cmd->add_option("--seed", seed_opt, "seed override");

  CLI::App* crossval_cmd =
      app.add_subcommand("crossval", "patient-grouped k-fold severity evaluation");
  crossval_cmd->add_option("--config", crossval_args.config, "run config JSON")->required();
  crossval_cmd->add_option("--out", crossval_args.out, "output directory override");
  std::uint64_t cseed_opt = 0;
  CLI::Option* cseed = crossval_cmd->add_option("--seed", cseed_opt, "seed override");
  int jobs_opt = 0;
  CLI::Option* cjobs =
      crossval_cmd->add_option("--jobs", jobs_opt, "parallel fold jobs")->check(CLI::PositiveNumber);

  CLI::App* grad_cmd = app.add_subcommand("grad-check", "finite-difference gradient audit");
  grad_cmd->add_option("--config", grad_args.config, "run config JSON")->required();

  std::vector<std::string> report_inputs;
  std::string report_out;
  CLI::App* report_cmd = app.add_subcommand("report", "merge aggregate JSONs into a table");
  report_cmd->add_option("--in", report_inputs, "aggregate directories or files")
      ->required()
      ->expected(-1);
  report_cmd->add_option("--out", report_out, "output markdown file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth);
    if (pretrain_cmd->parsed()) {
      if (*pseed) pretrain_args.seed = seed_opt;
      return run_pretrain(pretrain_args);
    }
    if (crossval_cmd->parsed()) {
      if (*cseed) crossval_args.seed = cseed_opt;
      if (*cjobs) crossval_args.jobs = jobs_opt;
      return run_crossval(crossval_args);
    }
    if (grad_cmd->parsed()) return run_grad_check(grad_args);
    if (report_cmd->parsed()) return run_report(report_inputs, report_out);
  } catch (const hca::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
