#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "kbrl/error.hpp"
#include "kbrl/runner.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> k;
  std::optional<double> temperature;
  std::optional<double> beta;
  std::optional<std::string> reward_mode;
  std::optional<int> seed_count;
  std::optional<std::string> corpus;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Run configuration (JSON)");
  cmd->add_option("--seed", o.seed, "Master seed");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--k", o.k, "Responses sampled per sample during delineation");
  cmd->add_option("--temperature", o.temperature, "Delineation sampling temperature");
  cmd->add_option("--beta", o.beta, "KL penalty coefficient");
  cmd->add_option("--reward-mode", o.reward_mode,
                  "region_aware | uniform_correctness | accuracy_only | entropy_only");
  cmd->add_option("--seed-count", o.seed_count, "Seeds averaged by ablations");
  cmd->add_option("--corpus", o.corpus, "JSON-lines corpus (default: synthetic)");
  cmd->add_flag("-q,--quiet", o.quiet, "Suppress progress output");
}

kbrl::RunConfig resolve(const Overrides& o) {
  kbrl::RunConfig c;
  if (!o.config.empty()) c = kbrl::load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.output_dir = *o.out;
  if (o.k) c.k = *o.k;
  if (o.temperature) c.temperature = *o.temperature;
  if (o.beta) c.reward.beta = *o.beta;
  if (o.reward_mode) c.grpo.reward_mode = kbrl::parse_reward_mode(*o.reward_mode);
  if (o.seed_count) c.seed_count = *o.seed_count;
  if (o.corpus) c.corpus.path = *o.corpus;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-boundary-aware strategy planning: SFT, delineation, GRPO, evaluation"};
  app.require_subcommand(1);
  Overrides o;
  std::string preset = "region_vs_uniform";
  std::string run_dir;

  auto* sft = app.add_subcommand("sft", "Supervised fine-tuning");
  auto* delineate = app.add_subcommand("delineate", "Knowledge-boundary delineation");
  auto* train = app.add_subcommand("train", "GRPO training");
  auto* eval = app.add_subcommand("eval", "Evaluate the trained policy");
  auto* pipeline = app.add_subcommand("pipeline", "Run every stage end to end");
  auto* ablation = app.add_subcommand("ablation", "Run an ablation preset");
  auto* report = app.add_subcommand("report", "Summarize a run directory");
  for (auto* cmd : {sft, delineate, train, eval, pipeline, ablation}) add_common(cmd, o);
  ablation->add_option("--preset", preset, "region_vs_uniform | reward_components | k_sweep")
      ->capture_default_str();
  report->add_option("run_dir", run_dir, "Run directory")->required();

  CLI11_PARSE(app, argc, argv);

  const kbrl::Progress progress = [&](std::string_view line) {
    if (!o.quiet) std::cerr << line << '\n';
  };
  try {
    if (report->parsed()) {
      const auto r = kbrl::report(run_dir);
      std::cout << r.text;
      return r.complete ? 0 : 3;
    }
    const auto config = resolve(o);
    if (sft->parsed()) {
      kbrl::run_sft_stage(config, progress);
    } else if (delineate->parsed()) {
      kbrl::run_delineate_stage(config, progress);
    } else if (train->parsed()) {
      kbrl::run_train_stage(config, progress);
    } else if (eval->parsed()) {
      kbrl::run_eval_stage(config, progress);
    } else if (pipeline->parsed()) {
      kbrl::run_pipeline(config, progress);
      std::cout << kbrl::report(config.output_dir).text;
    } else if (ablation->parsed()) {
      const auto table = kbrl::run_ablation(kbrl::parse_ablation(preset), config, progress);
      std::cout << table.to_csv();
    }
  } catch (const kbrl::StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
