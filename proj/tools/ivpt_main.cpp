// ivpt: train, verify and sweep prompt-tuned toy vision transformers.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ivpt/analysis.hpp"
#include "ivpt/error.hpp"
#include "ivpt/experiment.hpp"
#include "ivpt/snapshot.hpp"

namespace {

using namespace ivpt;

constexpr int kExitConfig = 2;
constexpr int kExitVerify = 3;
constexpr int kExitRuntime = 4;

// Flags shared by every subcommand. A flag only takes effect when given; a
// --config file is applied afterwards and wins over flags.
struct CommonFlags {
  std::string config_path;
  std::string structure, da, gamma_init, ar, task, noise_model, output;
  std::size_t ar_k = 0, num_prompts = 0, n = 0, n_eval = 0, jobs = 1, epochs = 0, warmup = 0;
  std::size_t batch = 0, image = 0, patch = 0, layers = 0, dim = 0, heads = 0, classes = 0, max_objects = 0;
  std::vector<std::size_t> ar_layers;
  std::vector<std::uint64_t> seeds;
  std::uint64_t data_seed = 0, backbone_seed = 0;
  double lr = 0.0, noise_rho = 0.0, noise_sigma = 0.0;
  bool noise_train = false;
  std::vector<std::pair<CLI::Option*, std::function<void(ExperimentConfig&)>>> setters;

  template <typename T, typename Fn>
  void add(CLI::App* app, const std::string& name, T& target, const std::string& help, Fn fn) {
    CLI::Option* opt = app->add_option(name, target, help);
    if constexpr (requires { target.push_back(target.front()); }) opt->delimiter(',');
    setters.emplace_back(opt, fn);
  }

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config; its keys override flags");
    add(app, "--structure", structure, "vpt-shallow|vpt-deep|provp|express|vanilla-cdc|cdc",
        [this](ExperimentConfig& c) { c.prompts.structure = parse_structure(structure); });
    add(app, "--da", da, "on|off", [this](ExperimentConfig& c) {
      if (da != "on" && da != "off") throw ConfigError("--da expects on or off");
      c.prompts.da = da == "on";
    });
    add(app, "--gamma-init", gamma_init, "identity|zero|uniform",
        [this](ExperimentConfig& c) { c.prompts.gamma_init = parse_gamma_init(gamma_init); });
    add(app, "--ar", ar, "none|all|topk",
        [this](ExperimentConfig& c) { c.prompts.ar = parse_ar_mode(ar); });
    add(app, "--ar-k", ar_k, "reinforced tokens per layer",
        [this](ExperimentConfig& c) { c.prompts.ar_k = ar_k; });
    add(app, "--ar-layers", ar_layers, "layers receiving reinforcement (default all)",
        [this](ExperimentConfig& c) { c.prompts.ar_layers = ar_layers; });
    add(app, "--num-prompts", num_prompts, "prompts per layer (N)",
        [this](ExperimentConfig& c) { c.prompts.num_prompts = num_prompts; });
    add(app, "--task", task, "pattern|count",
        [this](ExperimentConfig& c) { c.data.task = parse_task(task); });
    add(app, "--n", n, "training samples", [this](ExperimentConfig& c) { c.data.n_train = n; });
    add(app, "--n-eval", n_eval, "evaluation samples",
        [this](ExperimentConfig& c) { c.data.n_eval = n_eval; });
    add(app, "--max-objects", max_objects, "count task: largest object count",
        [this](ExperimentConfig& c) { c.data.max_objects = max_objects; });
    add(app, "--data-seed", data_seed, "dataset generator seed",
        [this](ExperimentConfig& c) { c.data.seed = data_seed; });
    add(app, "--noise-rho", noise_rho, "noise rate in [0, 1]",
        [this](ExperimentConfig& c) { c.noise.rho = noise_rho; });
    add(app, "--noise-sigma", noise_sigma, "noise standard deviation",
        [this](ExperimentConfig& c) { c.noise.sigma = noise_sigma; });
    add(app, "--noise-model", noise_model, "blend|additive",
        [this](ExperimentConfig& c) { c.noise.model = parse_noise_model(noise_model); });
    setters.emplace_back(app->add_flag("--noise-train", noise_train, "corrupt the training split too"),
                         [this](ExperimentConfig& c) { c.noise_train = noise_train; });
    add(app, "--epochs", epochs, "training epochs",
        [this](ExperimentConfig& c) { c.train.epochs = epochs; });
    add(app, "--warmup", warmup, "linear warmup epochs",
        [this](ExperimentConfig& c) { c.train.warmup_epochs = warmup; });
    add(app, "--lr", lr, "base learning rate", [this](ExperimentConfig& c) { c.train.base_lr = lr; });
    add(app, "--batch", batch, "batch size", [this](ExperimentConfig& c) { c.train.batch_size = batch; });
    add(app, "--image-size", image, "square image side in pixels", [this](ExperimentConfig& c) {
      c.model.image_height = image;
      c.model.image_width = image;
    });
    add(app, "--patch", patch, "patch side in pixels",
        [this](ExperimentConfig& c) { c.model.patch_size = patch; });
    add(app, "--layers", layers, "transformer layers (L)",
        [this](ExperimentConfig& c) { c.model.layers = layers; });
    add(app, "--dim", dim, "token dimension (D)", [this](ExperimentConfig& c) { c.model.dim = dim; });
    add(app, "--heads", heads, "attention heads", [this](ExperimentConfig& c) { c.model.heads = heads; });
    add(app, "--classes", classes, "number of classes",
        [this](ExperimentConfig& c) { c.model.num_classes = classes; });
    add(app, "--backbone-seed", backbone_seed, "frozen backbone seed",
        [this](ExperimentConfig& c) { c.model.seed = backbone_seed; });
    add(app, "--seeds", seeds, "run seeds", [this](ExperimentConfig& c) { c.seeds = seeds; });
    add(app, "--jobs", jobs, "concurrent runs", [this](ExperimentConfig& c) { c.jobs = jobs; });
    add(app, "--output", output, "output directory",
        [this](ExperimentConfig& c) { c.output_dir = output; });
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c = default_experiment();
    for (const auto& [opt, fn] : setters)
      if (opt->count() > 0) fn(c);
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ConfigError("cannot read config " + config_path);
      std::stringstream ss;
      ss << in.rdbuf();
      apply_config_json(c, ss.str());
    }
    c.validate();
    return c;
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void print_breakdown(const ParamBreakdown& p) {
  std::printf("cdc %zu  da %zu  ar %zu  express %zu  head %zu  total %zu\n", p.cdc, p.da, p.ar,
              p.express, p.head, p.total);
}

int cmd_train(const ExperimentConfig& cfg) {
  const Datasets data = build_datasets(cfg);
  std::ofstream results;
  std::filesystem::create_directories(cfg.output_dir);
  results.open(cfg.output_dir / "train_results.jsonl");
  if (!results) throw IoError("cannot write " + (cfg.output_dir / "train_results.jsonl").string());
  for (std::uint64_t seed : cfg.seeds) {
    const std::string stem = "seed" + std::to_string(seed);
    TrainedRun run = run_single(cfg, seed, data, cfg.output_dir / (stem + "_metrics.jsonl"));
    save_snapshot(run.model, seed, cfg.output_dir / (stem + "_model"));
    const ResultRecord& r = run.record;
    results << "{\"config_hash\":\"" << r.config_hash << "\",\"structure\":\""
            << to_string(r.structure) << "\",\"da\":" << (r.da ? "true" : "false") << ",\"ar\":\""
            << to_string(r.ar) << "\",\"ar_k\":" << r.ar_k << ",\"seed\":" << seed
            << ",\"final_top1\":" << r.final_top1 << ",\"params_total\":" << r.params.total
            << ",\"metrics_path\":\"" << r.metrics_path.string() << "\"}\n";
    std::printf("seed %llu: init acc %s -> final top-1 %s (%zu learnable, %.1f s)\n",
                static_cast<unsigned long long>(seed), fmt(run.metrics.initial_eval_acc).c_str(),
                fmt(r.final_top1).c_str(), run.metrics.learnable_params, run.metrics.wall_seconds);
    if (run.metrics.backbone_hash_before != run.metrics.backbone_hash_after) {
      std::fprintf(stderr, "backbone changed during training\n");
      return kExitRuntime;
    }
  }
  return 0;
}

int cmd_verify(const ExperimentConfig& cfg, bool ln_path) {
  const VerifyResult res = run_verify(cfg, ln_path);
  double worst = 0.0;
  for (const VerifyEntry& e : res.entries) {
    worst = std::max(worst, e.report.max_residual);
    if (!ln_path && !e.report.pass) {
      std::fprintf(stderr, "FAIL %s %s layer %zu head %zu: residual %.3e >= %.1e\n", e.stage.c_str(),
                   e.report.kind.c_str(), e.report.layer, e.report.head, e.report.max_residual,
                   e.report.tolerance);
    }
  }
  std::printf("%zu checks, worst relative residual %.3e%s\n", res.entries.size(), worst,
              ln_path ? " (layer-norm path, informational)" : "");
  std::printf("report: %s\n", (cfg.output_dir / "verify_report.json").string().c_str());
  if (ln_path) return 0;
  return res.all_pass ? 0 : kExitVerify;
}

int cmd_ablate(const ExperimentConfig& cfg, const std::vector<std::string>& axis_names) {
  std::vector<Axis> axes;
  for (const auto& a : axis_names) axes.push_back(parse_axis(a));
  const AblateResult res = run_ablate(cfg, axes);
  std::printf("%-28s %5s %8s %8s\n", "setting", "runs", "mean", "std");
  for (const SummaryRow& row : res.summary) {
    if (row.runs == 0) {
      std::printf("%-28s %5s\n", row.label.c_str(), "skip");
      continue;
    }
    std::printf("%-28s %5zu %8s %8s\n", row.label.c_str(), row.runs, fmt(row.mean).c_str(),
                fmt(row.stddev).c_str());
  }
  return 0;
}

int cmd_noise(ExperimentConfig cfg, const std::vector<double>& rhos,
              const std::vector<std::string>& structure_names, bool seeds_given) {
  if (!seeds_given) cfg.seeds = {0, 1, 2};
  std::vector<Structure> structures;
  for (const auto& s : structure_names) structures.push_back(parse_structure(s));
  const NoiseSweepResult res = run_noise_sweep(cfg, rhos, structures);
  for (const NoiseCurve& c : res.curves) {
    std::printf("%s:", to_string(c.structure).c_str());
    for (std::size_t i = 0; i < c.rhos.size(); ++i) {
      std::printf("  rho %.2f %s+-%s", c.rhos[i], fmt(c.mean[i]).c_str(), fmt(c.stddev[i]).c_str());
    }
    std::printf("  spearman %.3f\n", c.spearman);
  }
  return 0;
}

int cmd_attn_dump(const ExperimentConfig& cfg, const std::string& snapshot, std::size_t index,
                  const std::string& csv) {
  const Datasets data = build_datasets(cfg);
  if (index >= data.eval.size()) {
    throw ConfigError("--index " + std::to_string(index) + " outside the eval split of " +
                      std::to_string(data.eval.size()));
  }
  const PromptedModel model = snapshot.empty()
                                  ? PromptedModel(cfg.model, cfg.prompts, cfg.seeds.front())
                                  : load_snapshot(snapshot);
  const auto rows = export_attention(model, data.eval[index].image);
  const std::filesystem::path out = csv.empty() ? cfg.output_dir / "attention.csv" : std::filesystem::path(csv);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  write_attention_csv(out, rows);
  std::printf("%zu layers x %zu slots -> %s\n", rows.size(), rows.empty() ? 0 : rows.front().size(),
              out.string().c_str());
  return 0;
}

int cmd_params(const ExperimentConfig& cfg, bool check) {
  const ParamBreakdown p = count_learnable_params(cfg.model, cfg.prompts);
  print_breakdown(p);
  if (check) {
    const PromptedModel model(cfg.model, cfg.prompts, cfg.seeds.front());
    const std::size_t scanned = model.registry().trainable_scalars();
    std::printf("registry scan %zu: %s\n", scanned, scanned == p.total ? "match" : "MISMATCH");
    if (scanned != p.total) return kExitVerify;
  }
  return 0;
}

int cmd_gen(const ExperimentConfig& cfg) {
  const Datasets data = build_datasets(cfg);
  const auto train = save_raw_dataset(data.train, cfg.output_dir / "train");
  const auto eval = save_raw_dataset(data.eval, cfg.output_dir / "eval");
  std::printf("%zu train -> %s\n%zu eval -> %s\n", data.train.size(), train.string().c_str(),
              data.eval.size(), eval.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-tuned vision transformer toolkit"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train prompts and head on a synthetic task");
  auto* verify = app.add_subcommand("verify", "check the attention re-weighting identities");
  auto* ablate = app.add_subcommand("ablate", "sweep structure / da / ar settings over seeds");
  auto* noise = app.add_subcommand("noise-sweep", "accuracy under input noise per structure");
  auto* attn = app.add_subcommand("attn-dump", "class-token attention per layer as CSV");
  auto* params = app.add_subcommand("params", "learnable-parameter breakdown");
  auto* gen = app.add_subcommand("gen", "write a synthetic dataset as raw f64 files");

  std::vector<CommonFlags> flags(7);
  std::vector<CLI::App*> subs = {train, verify, ablate, noise, attn, params, gen};
  for (std::size_t i = 0; i < subs.size(); ++i) flags[i].attach(subs[i]);

  bool ln_path = false;
  verify->add_flag("--ln-path", ln_path, "route keys through layer norm (informational)");
  std::vector<std::string> axes;
  ablate->add_option("--axes", axes, "subset of structure,da,ar")->delimiter(',');
  std::vector<double> rhos = {0.0, 0.2, 0.4, 0.6};
  noise->add_option("--rhos", rhos, "noise rates")->capture_default_str()->delimiter(',');
  std::vector<std::string> structures = {"cdc", "express"};
  noise->add_option("--structures", structures, "structures to compare")->delimiter(',');
  std::string snapshot, csv;
  std::size_t index = 0;
  attn->add_option("--snapshot", snapshot, "snapshot stem written by train");
  attn->add_option("--index", index, "eval sample to trace");
  attn->add_option("--csv", csv, "output CSV path");
  bool check = false;
  params->add_flag("--check", check, "also build the model and scan its registry");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (!subs[i]->parsed()) continue;
      const ExperimentConfig cfg = flags[i].resolve();
      if (subs[i] == train) return cmd_train(cfg);
      if (subs[i] == verify) return cmd_verify(cfg, ln_path);
      if (subs[i] == ablate) return cmd_ablate(cfg, axes);
      if (subs[i] == noise) {
        const bool seeds_given = noise->get_option("--seeds")->count() > 0;
        return cmd_noise(cfg, rhos, structures, seeds_given);
      }
      if (subs[i] == attn) return cmd_attn_dump(cfg, snapshot, index, csv);
      if (subs[i] == params) return cmd_params(cfg, check);
      if (subs[i] == gen) return cmd_gen(cfg);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return 0;
}
