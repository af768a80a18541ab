#ifndef KBRL_RUNNER_HPP_
#define KBRL_RUNNER_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "kbrl/boundary.hpp"
#include "kbrl/corpus.hpp"
#include "kbrl/grpo.hpp"
#include "kbrl/metrics.hpp"
#include "kbrl/policy.hpp"
#include "kbrl/reward.hpp"

namespace kbrl {

struct CorpusSource {
  // JSON-lines corpus; when empty, `synthetic` is generated from the run seed.
  std::filesystem::path path;
  // Strategy labels for `path`; empty selects the emotional-support set.
  std::vector<std::string> labels;
  SyntheticCorpusSpec synthetic;
};

struct SftConfig {
  int epochs = 20;
  double learning_rate = 1.0;
};

struct RunConfig {
  std::string run_id = "run";
  CorpusSource corpus;
  int k = 10;
  double temperature = 0.4;
  double test_fraction = 0.2;
  int feature_dim = 1024;
  double exemplar_pull = 0.2;
  SftConfig sft;
  GrpoConfig grpo;
  RewardConfig reward;
  // Restrict RL to weakly known samples.
  bool weakly_known_only = false;
  // Delineate with the zero-initialized policy instead of the SFT policy.
  bool delineate_before_sft = false;
  // Checkpoint interval in episodes; 0 keeps only the final parameters.
  int checkpoint_every = 50;
  int workers = 0;
  // Ablations average over seeds seed, seed + 1, ...
  int seed_count = 1;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/run";

  void validate() const;
};

// Reads keys present in `text` on top of `base`; unknown keys are errors.
RunConfig config_from_json(const std::string& text, RunConfig base = {});
std::string config_to_json(const RunConfig& config);
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

// Seed for a named pipeline stage.
std::uint64_t stage_seed(const RunConfig& config, std::string_view stage);

struct Dataset {
  StrategySet strategies;
  std::vector<DialogueSample> train;
  std::vector<DialogueSample> test;
};

// Loads or generates the corpus and applies the seeded train/test split.
Dataset prepare_dataset(const RunConfig& config);

std::string method_name(const RunConfig& config);

using Progress = std::function<void(std::string_view)>;

// Standalone stages. Each reads earlier outputs from config.output_dir.
PolicyParams run_sft_stage(const RunConfig& config, const Progress& progress = {});
std::vector<BoundaryRecord> run_delineate_stage(const RunConfig& config,
                                                const Progress& progress = {});
PolicyParams run_train_stage(const RunConfig& config, const Progress& progress = {});
MetricsReport run_eval_stage(const RunConfig& config, const Progress& progress = {});

// SFT, reference snapshot, delineation, GRPO, evaluation and report. Errors
// are rethrown as StageError carrying the stage name.
std::filesystem::path run_pipeline(const RunConfig& config, const Progress& progress = {});

enum class AblationPreset { kRegionVsUniform, kRewardComponents, kKSweep };

std::string_view ablation_name(AblationPreset preset);
AblationPreset parse_ablation(std::string_view name);

struct AblationRow {
  std::string variant;
  double macro_f1 = 0.0;
  double preference_bias = 0.0;
  double weighted_f1 = 0.0;
  double rouge_l = 0.0;
  // KSweep only.
  int k = 0;
  double confidence_variance = 0.0;
  double binomial_variance = 0.0;
};

struct AblationTable {
  AblationPreset preset = AblationPreset::kRegionVsUniform;
  std::vector<AblationRow> rows;

  const AblationRow& row(std::string_view variant) const;
  std::string to_csv() const;
};

struct KSweepOptions {
  std::vector<int> ks = {1, 2, 4, 6, 8, 10};
  int probe_count = 200;
  int repetitions = 30;
};

// Rows are averaged over config.seed_count seeds. Writes
// ablation_<preset>.csv into config.output_dir.
AblationTable run_ablation(AblationPreset preset, const RunConfig& config,
                           const Progress& progress = {},
                           const KSweepOptions& sweep = {});

struct RunReport {
  bool complete = false;
  std::string text;
};

// Summarizes a run directory and writes report.txt, curves.csv,
// strategy_frequency.csv and regions.csv. Throws when the directory has no
// config echo.
RunReport report(const std::filesystem::path& run_dir);

}  // namespace kbrl

#endif  // KBRL_RUNNER_HPP_
