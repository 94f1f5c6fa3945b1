#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ivpt/analysis.hpp"
#include "ivpt/data.hpp"
#include "ivpt/model.hpp"
#include "ivpt/training.hpp"

namespace ivpt {

enum class Task { Pattern, Count };

std::string to_string(Task t);
Task parse_task(const std::string& text);

struct DataSpec {
  Task task = Task::Pattern;
  std::size_t n_train = 512;
  std::size_t n_eval = 256;
  std::size_t max_objects = 3;
  std::uint64_t seed = 1000;
  // When set, samples come from raw manifests instead of a generator.
  std::filesystem::path train_manifest;
  std::filesystem::path eval_manifest;
};

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  PromptConfig prompts;
  DataSpec data;
  NoiseSpec noise;
  bool noise_train = false;
  std::filesystem::path output_dir = "ivpt_out";
  std::vector<std::uint64_t> seeds = {0};
  std::size_t jobs = 1;
  std::size_t verify_epochs = 20;
  // Training subset size for the short run inside verify.
  std::size_t verify_samples = 128;

  void validate() const;
};

// Defaults: CDC with DA and top-k AR; seeds default to IVPT_SEED when set.
ExperimentConfig default_experiment();

// Overlays the keys of a flat JSON object; unknown keys throw ConfigError.
void apply_config_json(ExperimentConfig& config, const std::string& text);
ExperimentConfig load_experiment(const std::filesystem::path& path);

// Sorted keys, no whitespace. Output location and job count are excluded.
std::string canonical_json(const ExperimentConfig& config);
std::string config_hash(const ExperimentConfig& config);

struct Datasets {
  Dataset train;
  Dataset eval;
};

// Eval split is corrupted by config.noise; the train split too when
// noise_train is set.
Datasets build_datasets(const ExperimentConfig& config);

struct ResultRecord {
  std::string config_hash;
  Structure structure = Structure::Cdc;
  bool da = false;
  ArMode ar = ArMode::None;
  std::size_t ar_k = 0;
  std::uint64_t seed = 0;
  double final_top1 = 0.0;
  ParamBreakdown params;
  std::filesystem::path metrics_path;
  bool skipped = false;  // combination the structure does not support
};

struct TrainedRun {
  ResultRecord record;
  RunMetrics metrics;
  PromptedModel model;
};

// Trains one (config, seed) cell. Epoch metrics go to `metrics_path` as JSON
// lines when it is non-empty.
TrainedRun run_single(const ExperimentConfig& config, std::uint64_t seed, const Datasets& data,
                      const std::filesystem::path& metrics_path = {});

enum class Axis { Structure, Da, Ar };

std::string to_string(Axis a);
Axis parse_axis(const std::string& text);

struct AblateCell {
  PromptConfig prompts;
  std::string label;
};

// Cartesian product of the requested axes over the base prompt config.
std::vector<AblateCell> ablate_cells(const PromptConfig& base, const std::vector<Axis>& axes);

struct SummaryRow {
  std::string label;
  std::size_t runs = 0;
  double mean = 0.0;
  double stddev = 0.0;
};

struct AblateResult {
  std::vector<ResultRecord> records;  // cell-major, seeds inner
  std::vector<SummaryRow> summary;
};

// Writes ablate_runs.csv, ablate_summary.csv and one metrics file per run
// under config.output_dir.
AblateResult run_ablate(const ExperimentConfig& config, const std::vector<Axis>& axes);

struct NoisePoint {
  Structure structure = Structure::Cdc;
  double rho = 0.0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
};

struct NoiseCurve {
  Structure structure = Structure::Cdc;
  std::vector<double> rhos;
  std::vector<double> mean;
  std::vector<double> stddev;
  double spearman = 0.0;  // of mean accuracy against rho
};

struct NoiseSweepResult {
  std::vector<NoisePoint> points;  // structure-major, then rho, then seed
  std::vector<NoiseCurve> curves;
};

// Trains each (structure, seed) once on clean data and evaluates it on every
// corrupted eval split. Writes noise_sweep.csv and noise_summary.csv.
NoiseSweepResult run_noise_sweep(const ExperimentConfig& config, const std::vector<double>& rhos,
                                 const std::vector<Structure>& structures);

struct VerifyEntry {
  std::string stage;  // "init" or "trained"
  DecompositionReport report;
};

struct VerifyResult {
  std::vector<VerifyEntry> entries;
  bool informational = false;
  bool all_pass = true;
};

// Runs the CDC and DA decomposition checks on every layer and head, using the
// class-token query of a live forward pass, before and after a short
// training run. With ln_path the keys go through the layer norm and the
// result is informational only. Writes verify_report.json.
VerifyResult run_verify(const ExperimentConfig& config, bool ln_path = false);

// Rank correlation with average ranks for ties; 0 when either side is
// constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// Runs fn(0..count-1) on up to `jobs` threads.
void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace ivpt
