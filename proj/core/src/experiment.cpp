#include "ivpt/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "config_json.hpp"
#include "ivpt/error.hpp"

namespace ivpt {
namespace {

using detail::json;
using detail::read_key;

const std::set<std::string>& experiment_keys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> k = detail::model_keys();
    k.insert(detail::prompt_keys().begin(), detail::prompt_keys().end());
    for (const char* name :
         {"epochs", "warmup_epochs", "base_lr", "momentum", "weight_decay", "batch_size", "task",
          "n_train", "n_eval", "max_objects", "data_seed", "train_manifest", "eval_manifest",
          "noise_rho", "noise_sigma", "noise_model", "noise_train", "noise_seed", "seeds",
          "output_dir", "jobs", "verify_epochs", "verify_samples"}) {
      k.insert(name);
    }
    return k;
  }();
  return keys;
}

json to_json(const ExperimentConfig& c, bool with_location) {
  json j = json::object();
  detail::to_json_fields(j, c.model);
  detail::to_json_fields(j, c.prompts);
  j["epochs"] = c.train.epochs;
  j["warmup_epochs"] = c.train.warmup_epochs;
  j["base_lr"] = c.train.base_lr;
  j["momentum"] = c.train.momentum;
  j["weight_decay"] = c.train.weight_decay;
  j["batch_size"] = c.train.batch_size;
  j["task"] = to_string(c.data.task);
  j["n_train"] = c.data.n_train;
  j["n_eval"] = c.data.n_eval;
  j["max_objects"] = c.data.max_objects;
  j["data_seed"] = c.data.seed;
  j["train_manifest"] = c.data.train_manifest.string();
  j["eval_manifest"] = c.data.eval_manifest.string();
  j["noise_rho"] = c.noise.rho;
  j["noise_sigma"] = c.noise.sigma;
  j["noise_model"] = to_string(c.noise.model);
  j["noise_train"] = c.noise_train;
  j["noise_seed"] = c.noise.seed;
  j["seeds"] = c.seeds;
  j["verify_epochs"] = c.verify_epochs;
  j["verify_samples"] = c.verify_samples;
  if (with_location) {
    j["output_dir"] = c.output_dir.string();
    j["jobs"] = c.jobs;
  }
  return j;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string cell_label(const PromptConfig& p) {
  std::string label = to_string(p.structure);
  if (p.da) label += "+da";
  if (p.ar != ArMode::None) label += "+ar-" + to_string(p.ar);
  return label;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void mean_std(const std::vector<double>& xs, double& mean, double& stddev) {
  mean = 0.0;
  stddev = 0.0;
  if (xs.empty()) return;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = r;
    i = j + 1;
  }
  return ranks;
}

json report_json(const VerifyEntry& e) {
  const DecompositionReport& r = e.report;
  json j = {{"stage", e.stage},
            {"kind", r.kind},
            {"layer", r.layer},
            {"head", r.head},
            {"max_residual", r.max_residual},
            {"tolerance", r.tolerance},
            {"pass", r.pass},
            {"reweighting", r.reweighting},
            {"proportionality_spread", r.proportionality_spread}};
  if (!r.factors.empty()) j["factors"] = r.factors;
  return j;
}

// Runs every layer/head check on one model state.
void verify_stage(const PromptedModel& model, const Tensor& image, const std::string& stage,
                  bool ln_path, VerifyResult& result) {
  const ModelConfig& mc = model.model_config();
  const PromptBank& bank = model.bank();
  const PromptConfig& pc = model.prompt_config();
  Tape tape = Tape::no_grad();
  const ForwardResult fwd = model.forward(tape, image);
  const std::size_t dh = mc.head_dim();
  const double scale = std::sqrt(static_cast<double>(dh));
  const Tensor zeros = Tensor::zeros({pc.num_prompts, mc.dim});

  Tensor running = bank.prompts[0];
  for (std::size_t l = 0; l < mc.layers; ++l) {
    const LayerParams& layer = model.backbone().layers()[l];
    const Tensor& own = bank.prompts[l];
    Tensor previous = zeros;
    if (l > 0) previous = pc.structure == Structure::VanillaCdc ? running : bank.prompts[l - 1];
    const bool da = pc.da && l > 0;
    Tensor aggregated = previous;
    if (da) aggregated = tape.matmul(bank.gamma[l - 1], previous);
    for (std::size_t h = 0; h < mc.heads; ++h) {
      const auto query = fwd.records[l].cls_queries.values().subspan(h * dh, dh);
      auto add = [&](DecompositionReport rep) {
        rep.layer = l;
        rep.head = h;
        if (!ln_path) result.all_pass = result.all_pass && rep.pass;
        result.entries.push_back({stage, std::move(rep)});
      };
      if (ln_path) {
        DecompositionReport rep = measure_ln_path_residual(query, layer, h, dh, own, aggregated, scale);
        rep.kind = da ? "da-ln" : "cdc-ln";
        add(std::move(rep));
        continue;
      }
      const Tensor w_head = key_head_slice(layer.wk, h, dh);
      add(verify_cdc_decomposition(query, w_head, own, previous, scale));
      if (da) add(verify_da_decomposition(query, w_head, own, previous, bank.gamma[l - 1], scale));
    }
    if (l > 0) running = tape.add(running, own);
  }
}

}  // namespace

std::string to_string(Task t) { return t == Task::Pattern ? "pattern" : "count"; }

Task parse_task(const std::string& text) {
  if (text == "pattern") return Task::Pattern;
  if (text == "count") return Task::Count;
  throw ConfigError("unknown task '" + text + "' (expected pattern or count)");
}

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  prompts.validate(model);
  noise.validate();
  if (data.task == Task::Pattern && (model.num_classes < 2 || model.num_classes > 8)) {
    throw ConfigError("pattern task needs 2..8 classes, got " + std::to_string(model.num_classes));
  }
  if (data.task == Task::Count && model.num_classes != data.max_objects + 1) {
    throw ConfigError("count task with max_objects " + std::to_string(data.max_objects) + " needs " +
                      std::to_string(data.max_objects + 1) + " classes");
  }
  if (data.train_manifest.empty() && data.n_train == 0) throw ConfigError("n_train must be >= 1");
  if (seeds.empty()) throw ConfigError("seed list is empty");
  if (jobs == 0) throw ConfigError("jobs must be >= 1");
  if (verify_samples == 0) throw ConfigError("verify_samples must be >= 1");
}

ExperimentConfig default_experiment() {
  ExperimentConfig c;
  c.prompts.da = true;
  c.prompts.ar = ArMode::TopK;
  if (const char* env = std::getenv("IVPT_SEED")) {
    try {
      std::size_t used = 0;
      const unsigned long long seed = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
      c.seeds = {seed};
    } catch (const std::exception&) {
      throw ConfigError(std::string("IVPT_SEED is not an unsigned integer: '") + env + "'");
    }
  }
  return c;
}

void apply_config_json(ExperimentConfig& c, const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config JSON: ") + e.what());
  }
  detail::reject_unknown(j, experiment_keys());
  try {
    detail::from_json_fields(j, c.model);
    detail::from_json_fields(j, c.prompts);
    if (j.contains("task")) c.data.task = parse_task(j.at("task").get<std::string>());
    if (j.contains("noise_model")) {
      c.noise.model = parse_noise_model(j.at("noise_model").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  read_key(j, "epochs", c.train.epochs);
  read_key(j, "warmup_epochs", c.train.warmup_epochs);
  read_key(j, "base_lr", c.train.base_lr);
  read_key(j, "momentum", c.train.momentum);
  read_key(j, "weight_decay", c.train.weight_decay);
  read_key(j, "batch_size", c.train.batch_size);
  read_key(j, "n_train", c.data.n_train);
  read_key(j, "n_eval", c.data.n_eval);
  read_key(j, "max_objects", c.data.max_objects);
  read_key(j, "data_seed", c.data.seed);
  std::string path;
  if (j.contains("train_manifest")) {
    read_key(j, "train_manifest", path);
    c.data.train_manifest = path;
  }
  if (j.contains("eval_manifest")) {
    read_key(j, "eval_manifest", path);
    c.data.eval_manifest = path;
  }
  read_key(j, "noise_rho", c.noise.rho);
  read_key(j, "noise_sigma", c.noise.sigma);
  read_key(j, "noise_seed", c.noise.seed);
  read_key(j, "noise_train", c.noise_train);
  read_key(j, "seeds", c.seeds);
  if (j.contains("output_dir")) {
    read_key(j, "output_dir", path);
    c.output_dir = path;
  }
  read_key(j, "jobs", c.jobs);
  read_key(j, "verify_epochs", c.verify_epochs);
  read_key(j, "verify_samples", c.verify_samples);
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  ExperimentConfig c = default_experiment();
  apply_config_json(c, ss.str());
  return c;
}

std::string canonical_json(const ExperimentConfig& config) { return to_json(config, false).dump(); }

std::string config_hash(const ExperimentConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(canonical_json(config))));
  return buf;
}

Datasets build_datasets(const ExperimentConfig& config) {
  const ImageSpec spec{config.model.image_height, config.model.image_width, config.model.channels};
  auto generate = [&](std::size_t n, std::uint64_t seed) {
    return config.data.task == Task::Pattern
               ? gen_pattern_task(n, config.model.num_classes, seed, spec)
               : gen_count_task(n, config.data.max_objects, seed, spec);
  };
  Datasets d;
  d.train = config.data.train_manifest.empty()
                ? generate(config.data.n_train, derive_seed(config.data.seed, 0))
                : load_raw_dataset(config.data.train_manifest, spec, config.model.num_classes);
  d.eval = config.data.eval_manifest.empty()
               ? generate(config.data.n_eval, derive_seed(config.data.seed, 1))
               : load_raw_dataset(config.data.eval_manifest, spec, config.model.num_classes);
  if (config.noise.rho > 0.0) {
    d.eval = corrupt_dataset(d.eval, config.noise);
    if (config.noise_train) {
      NoiseSpec train_noise = config.noise;
      train_noise.seed = derive_seed(config.noise.seed, 1);
      d.train = corrupt_dataset(d.train, train_noise);
    }
  }
  return d;
}

TrainedRun run_single(const ExperimentConfig& config, std::uint64_t seed, const Datasets& data,
                      const std::filesystem::path& metrics_path) {
  ExperimentConfig cell = config;
  cell.seeds = {seed};
  cell.validate();
  PromptedModel model(cell.model, cell.prompts, seed);
  TrainConfig tc = cell.train;
  tc.seed = seed;

  std::ofstream metrics_out;
  if (!metrics_path.empty()) metrics_out = open_out(metrics_path);
  RunMetrics metrics = train(model, data.train, data.eval, tc, [&](const EpochMetrics& m) {
    if (metrics_out.is_open()) metrics_out << to_json_line(m) << '\n';
  });
  if (metrics_out.is_open() && !metrics_out.flush()) {
    throw IoError("write failed for " + metrics_path.string());
  }

  ResultRecord rec;
  rec.config_hash = config_hash(cell);
  rec.structure = cell.prompts.structure;
  rec.da = cell.prompts.da;
  rec.ar = cell.prompts.ar;
  rec.ar_k = cell.prompts.ar == ArMode::TopK ? cell.prompts.ar_k : 0;
  rec.seed = seed;
  rec.final_top1 = metrics.final_top1;
  rec.params = count_learnable_params(cell.model, cell.prompts);
  rec.metrics_path = metrics_path;
  return TrainedRun{rec, std::move(metrics), std::move(model)};
}

std::string to_string(Axis a) {
  switch (a) {
    case Axis::Structure: return "structure";
    case Axis::Da: return "da";
    case Axis::Ar: return "ar";
  }
  return "?";
}

Axis parse_axis(const std::string& text) {
  if (text == "structure") return Axis::Structure;
  if (text == "da") return Axis::Da;
  if (text == "ar") return Axis::Ar;
  throw ConfigError("invalid ablation axis '" + text + "' (expected structure, da or ar)");
}

std::vector<AblateCell> ablate_cells(const PromptConfig& base, const std::vector<Axis>& axes) {
  std::vector<PromptConfig> cells = {base};
  std::set<Axis> seen;
  for (Axis axis : axes) {
    if (!seen.insert(axis).second) throw ConfigError("ablation axis '" + to_string(axis) + "' repeated");
    std::vector<PromptConfig> next;
    for (const PromptConfig& c : cells) {
      switch (axis) {
        case Axis::Structure:
          for (Structure s : {Structure::VptShallow, Structure::VptDeep, Structure::ProVP,
                              Structure::Express, Structure::VanillaCdc, Structure::Cdc}) {
            PromptConfig v = c;
            v.structure = s;
            next.push_back(v);
          }
          break;
        case Axis::Da:
          for (bool da : {false, true}) {
            PromptConfig v = c;
            v.da = da;
            next.push_back(v);
          }
          break;
        case Axis::Ar:
          for (ArMode m : {ArMode::None, ArMode::All, ArMode::TopK}) {
            PromptConfig v = c;
            v.ar = m;
            next.push_back(v);
          }
          break;
      }
    }
    cells = std::move(next);
  }
  // A base config with DA on is only meaningful for CDC; when structure is
  // swept without the da axis, drop DA where it cannot apply.
  const bool da_swept = seen.count(Axis::Da) > 0;
  std::vector<AblateCell> out;
  for (PromptConfig& c : cells) {
    if (!da_swept && c.da && !supports_da(c.structure)) c.da = false;
    out.push_back({c, cell_label(c)});
  }
  return out;
}

void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(std::max<std::size_t>(1, jobs), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = count;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

AblateResult run_ablate(const ExperimentConfig& config, const std::vector<Axis>& axes) {
  config.validate();
  const std::vector<AblateCell> cells = ablate_cells(config.prompts, axes);
  const Datasets data = build_datasets(config);
  const std::size_t n_seeds = config.seeds.size();

  AblateResult result;
  result.records.resize(cells.size() * n_seeds);
  parallel_for(result.records.size(), config.jobs, [&](std::size_t i) {
    const AblateCell& cell = cells[i / n_seeds];
    const std::uint64_t seed = config.seeds[i % n_seeds];
    ExperimentConfig cfg = config;
    cfg.prompts = cell.prompts;
    if (cell.prompts.da && !supports_da(cell.prompts.structure)) {
      ResultRecord rec;
      rec.structure = cell.prompts.structure;
      rec.da = true;
      rec.ar = cell.prompts.ar;
      rec.seed = seed;
      rec.skipped = true;
      result.records[i] = rec;
      return;
    }
    const auto path = config.output_dir / "runs" / (cell.label + "_seed" + std::to_string(seed) + ".jsonl");
    result.records[i] = run_single(cfg, seed, data, path).record;
  });

  auto runs = open_out(config.output_dir / "ablate_runs.csv");
  runs << "config_hash,label,structure,da,ar,ar_k,seed,final_top1,cdc_params,da_params,ar_params,"
          "express_params,head_params,total_params,metrics_path\n";
  for (std::size_t i = 0; i < result.records.size(); ++i) {
    const ResultRecord& r = result.records[i];
    runs << r.config_hash << ',' << cells[i / n_seeds].label << ',' << to_string(r.structure) << ','
         << (r.da ? "on" : "off") << ',' << to_string(r.ar) << ',' << r.ar_k << ',' << r.seed << ',';
    if (r.skipped) {
      runs << "skipped,,,,,,,\n";
      continue;
    }
    runs << format_double(r.final_top1) << ',' << r.params.cdc << ',' << r.params.da << ','
         << r.params.ar << ',' << r.params.express << ',' << r.params.head << ',' << r.params.total
         << ',' << r.metrics_path.string() << '\n';
  }

  auto summary = open_out(config.output_dir / "ablate_summary.csv");
  summary << "label,runs,mean_top1,std_top1\n";
  for (std::size_t c = 0; c < cells.size(); ++c) {
    std::vector<double> accs;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const ResultRecord& r = result.records[c * n_seeds + s];
      if (!r.skipped) accs.push_back(r.final_top1);
    }
    SummaryRow row;
    row.label = cells[c].label;
    row.runs = accs.size();
    mean_std(accs, row.mean, row.stddev);
    summary << row.label << ',' << row.runs << ',';
    if (row.runs == 0) {
      summary << "skipped,\n";
    } else {
      summary << format_double(row.mean) << ',' << format_double(row.stddev) << '\n';
    }
    result.summary.push_back(row);
  }
  return result;
}

NoiseSweepResult run_noise_sweep(const ExperimentConfig& config, const std::vector<double>& rhos,
                                 const std::vector<Structure>& structures) {
  config.validate();
  if (rhos.empty() || structures.empty()) throw ConfigError("noise sweep needs rhos and structures");
  for (double rho : rhos) {
    if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("rho " + format_double(rho) + " outside [0, 1]");
  }
  ExperimentConfig clean = config;
  clean.noise.rho = 0.0;
  const Datasets data = build_datasets(clean);
  auto corrupted = [&](double rho, std::uint64_t salt) {
    NoiseSpec spec = config.noise;
    spec.rho = rho;
    spec.seed = derive_seed(config.noise.seed, salt);
    return spec;
  };
  std::vector<Dataset> evals;
  for (double rho : rhos) evals.push_back(corrupt_dataset(data.eval, corrupted(rho, 0)));

  const std::size_t n_rho = rhos.size(), n_seeds = config.seeds.size();
  NoiseSweepResult result;
  result.points.resize(structures.size() * n_rho * n_seeds);
  // With noise_train each rho needs its own training run.
  const std::size_t trainings_per_seed = config.noise_train ? n_rho : 1;
  parallel_for(structures.size() * n_seeds * trainings_per_seed, config.jobs, [&](std::size_t task) {
    const std::size_t s = task / (n_seeds * trainings_per_seed);
    const std::size_t seed_idx = (task / trainings_per_seed) % n_seeds;
    const std::size_t r_train = task % trainings_per_seed;
    ExperimentConfig cfg = config;
    cfg.prompts.structure = structures[s];
    cfg.prompts.da = false;
    cfg.prompts.ar = ArMode::None;
    const std::uint64_t seed = config.seeds[seed_idx];
    Datasets run_data{data.train, data.eval};
    if (config.noise_train) {
      run_data.train = corrupt_dataset(data.train, corrupted(rhos[r_train], 1));
      run_data.eval = evals[r_train];
    }
    const auto path = config.output_dir / "runs" /
                      (to_string(structures[s]) + "_seed" + std::to_string(seed) +
                       (config.noise_train ? "_rho" + format_double(rhos[r_train]) : "") + ".jsonl");
    TrainedRun run = run_single(cfg, seed, run_data, path);
    for (std::size_t r = 0; r < n_rho; ++r) {
      if (config.noise_train && r != r_train) continue;
      NoisePoint& p = result.points[(s * n_rho + r) * n_seeds + seed_idx];
      p.structure = structures[s];
      p.rho = rhos[r];
      p.seed = seed;
      p.accuracy = evaluate(run.model, evals[r]).accuracy;
    }
  });

  auto csv = open_out(config.output_dir / "noise_sweep.csv");
  csv << "structure,rho,seed,acc\n";
  for (const NoisePoint& p : result.points) {
    csv << to_string(p.structure) << ',' << format_double(p.rho) << ',' << p.seed << ','
        << format_double(p.accuracy) << '\n';
  }
  auto summary = open_out(config.output_dir / "noise_summary.csv");
  summary << "structure,rho,mean_acc,std_acc,spearman\n";
  for (std::size_t s = 0; s < structures.size(); ++s) {
    NoiseCurve curve;
    curve.structure = structures[s];
    curve.rhos = rhos;
    for (std::size_t r = 0; r < n_rho; ++r) {
      std::vector<double> accs;
      for (std::size_t k = 0; k < n_seeds; ++k) accs.push_back(result.points[(s * n_rho + r) * n_seeds + k].accuracy);
      double m = 0.0, sd = 0.0;
      mean_std(accs, m, sd);
      curve.mean.push_back(m);
      curve.stddev.push_back(sd);
    }
    curve.spearman = spearman(rhos, curve.mean);
    for (std::size_t r = 0; r < n_rho; ++r) {
      summary << to_string(curve.structure) << ',' << format_double(rhos[r]) << ','
              << format_double(curve.mean[r]) << ',' << format_double(curve.stddev[r]) << ','
              << format_double(curve.spearman) << '\n';
    }
    result.curves.push_back(std::move(curve));
  }
  return result;
}

VerifyResult run_verify(const ExperimentConfig& config, bool ln_path) {
  config.validate();
  const Structure s = config.prompts.structure;
  if (s != Structure::Cdc && s != Structure::VanillaCdc) {
    throw ConfigError("verify needs a cdc or vanilla-cdc structure, got " + to_string(s));
  }
  ExperimentConfig cfg = config;
  cfg.data.n_train = std::min(config.data.n_train, config.verify_samples);
  cfg.data.n_eval = std::min(config.data.n_eval, config.verify_samples / 2 + 1);
  Datasets data = build_datasets(cfg);
  if (data.train.size() > config.verify_samples) data.train.resize(config.verify_samples);
  if (data.eval.empty()) throw ConfigError("verify needs at least one eval sample");

  VerifyResult result;
  result.informational = ln_path;
  const std::uint64_t seed = config.seeds.front();
  PromptedModel model(cfg.model, cfg.prompts, seed);
  verify_stage(model, data.eval.front().image, "init", ln_path, result);

  if (config.verify_epochs > 0) {
    TrainConfig tc = cfg.train;
    tc.epochs = config.verify_epochs;
    tc.warmup_epochs = std::min(tc.warmup_epochs, tc.epochs / 10);
    tc.seed = seed;
    train(model, data.train, data.eval, tc);
    verify_stage(model, data.eval.front().image, "trained", ln_path, result);
  }

  json entries = json::array();
  for (const VerifyEntry& e : result.entries) entries.push_back(report_json(e));
  json doc = {{"informational", ln_path},
              {"all_pass", result.all_pass},
              {"config_hash", config_hash(config)},
              {"entries", entries}};
  auto out = open_out(config.output_dir / "verify_report.json");
  out << doc.dump(1) << '\n';
  return result;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw DimensionError("spearman: length mismatch");
  if (x.size() < 2) return 0.0;
  const std::vector<double> rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace ivpt
