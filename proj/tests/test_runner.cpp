#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "kbrl/error.hpp"
#include "kbrl/runner.hpp"
#include "test_util.hpp"

using namespace kbrl;
namespace fs = std::filesystem;

namespace {

RunConfig smoke(const fs::path& out) {
  RunConfig c;
  c.run_id = "smoke";
  c.corpus.synthetic.sample_count = 10;
  c.corpus.synthetic.feature_noise = 0.2;
  c.k = 4;
  c.feature_dim = 256;
  c.sft.epochs = 5;
  c.grpo.episodes = 20;
  c.grpo.batch_size = 4;
  c.grpo.group_size = 4;
  c.checkpoint_every = 5;
  c.output_dir = out;
  c.seed = 7;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_SUITE("runner") {

TEST_CASE("config defaults follow the published settings") {
  const RunConfig c;
  CHECK(c.k == 10);
  CHECK(c.temperature == 0.4);
  CHECK(c.reward.beta == 0.001);
}

TEST_CASE("config round-trips and rejects unknown keys") {
  auto c = smoke("runs/x");
  c.grpo.reward_mode = RewardMode::kEntropyOnly;
  c.reward.attribution = RegionAttribution::kGroupShared;
  c.corpus.synthetic.gold_distribution = {.4, .2, .1, .1, .05, .05, .05, .05};
  const auto back = config_from_json(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));
  CHECK_THROWS_AS(config_from_json(R"({"kk": 3})"), Error);
  CHECK_THROWS_AS(config_from_json(R"({"grpo": {"episodez": 3}})"), Error);
  CHECK_THROWS_AS(config_from_json("{"), ParseError);
  const auto partial = config_from_json(R"({"k": 4})", c);
  CHECK(partial.k == 4);
  CHECK(partial.run_id == "smoke");
}

TEST_CASE("stage seeds differ by stage") {
  const auto c = smoke("runs/x");
  CHECK(stage_seed(c, "sft") != stage_seed(c, "grpo"));
}

TEST_CASE("dataset split is deterministic and disjoint") {
  auto c = smoke("runs/x");
  c.corpus.synthetic.sample_count = 100;
  const auto a = prepare_dataset(c);
  const auto b = prepare_dataset(c);
  CHECK(a.train == b.train);
  CHECK(a.test.size() == 20);
  CHECK(a.train.size() == 80);
  for (const auto& t : a.test) {
    for (const auto& s : a.train) CHECK(s.id != t.id);
  }
}

TEST_CASE("pipeline on a tiny corpus writes every artifact deterministically") {
  const auto dir = kbrl::testing::scratch_dir("pipeline");
  const auto start = std::chrono::steady_clock::now();
  run_pipeline(smoke(dir / "a"));
  run_pipeline(smoke(dir / "b"));
  CHECK(std::chrono::steady_clock::now() - start < std::chrono::minutes(1));
  for (const char* name : {"config.echo", "boundary.records", "train.log", "sft.log",
                           "metrics.csv", "metrics.json", "report.txt", "run.complete",
                           "curves.csv", "regions.csv", "strategy_frequency.csv",
                           "checkpoints/sft.json", "checkpoints/final.json",
                           "checkpoints/episode-000020.json"}) {
    CHECK_MESSAGE(fs::exists(dir / "a" / name), name);
  }
  CHECK(slurp(dir / "a" / "metrics.csv") == slurp(dir / "b" / "metrics.csv"));
  CHECK(slurp(dir / "a" / "train.log") == slurp(dir / "b" / "train.log"));
  const auto summary = report(dir / "a");
  CHECK(summary.complete);
  for (const char* m : {"Q", "B", "Q_W", "R-L"}) CHECK(summary.text.find(m) != std::string::npos);
  const auto records = load_records(dir / "a" / "boundary.records");
  const auto counts = region_counts(records);
  CHECK(counts[0] + counts[1] + counts[2] == 8);
  const auto regions = slurp(dir / "a" / "regions.csv");
  CHECK(regions.rfind("region,count\n", 0) == 0);
}

TEST_CASE("standalone stages reproduce the pipeline") {
  const auto dir = kbrl::testing::scratch_dir("stages");
  run_pipeline(smoke(dir / "p"));
  const auto c = smoke(dir / "s");
  run_sft_stage(c);
  run_delineate_stage(c);
  run_train_stage(c);
  run_eval_stage(c);
  CHECK(slurp(dir / "p" / "metrics.csv") == slurp(dir / "s" / "metrics.csv"));
  CHECK(slurp(dir / "p" / "boundary.records") == slurp(dir / "s" / "boundary.records"));
  CHECK_FALSE(report(dir / "s").complete);
}

TEST_CASE("delineation can use the policy before SFT") {
  const auto dir = kbrl::testing::scratch_dir("pre-sft");
  auto c = smoke(dir / "run");
  c.delineate_before_sft = true;
  run_sft_stage(c);
  const auto records = run_delineate_stage(c);
  const auto data = prepare_dataset(c);
  DelineationConfig d;
  d.k = c.k;
  d.temperature = c.temperature;
  d.seed = stage_seed(c, "delineate");
  const auto base = PolicyParams::zeros(c.feature_dim, 8, c.exemplar_pull);
  CHECK(records == delineate(base, data.strategies, data.train, data.train, d));
  CHECK(config_from_json(config_to_json(c)).delineate_before_sft);
}

TEST_CASE("missing corpus fails in the corpus stage without creating the run dir") {
  const auto dir = kbrl::testing::scratch_dir("missing");
  auto c = smoke(dir / "run");
  c.corpus.path = dir / "nope.jsonl";
  try {
    run_pipeline(c);
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "corpus");
  }
  CHECK_FALSE(fs::exists(dir / "run"));
}

TEST_CASE("pipeline errors carry the stage name") {
  const auto dir = kbrl::testing::scratch_dir("stage-error");
  auto c = smoke(dir / "run");
  c.k = 9;  // the exemplar pool holds 7 other samples
  try {
    run_pipeline(c);
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "delineate");
  }
  CHECK(fs::exists(dir / "run" / "config.echo"));
  CHECK(fs::exists(dir / "run" / "checkpoints" / "sft.json"));
}

TEST_CASE("report flags an aborted run and keeps partial curves") {
  const auto dir = kbrl::testing::scratch_dir("aborted");
  const auto c = smoke(dir / "run");
  run_pipeline(c);
  fs::remove(dir / "run" / "run.complete");
  fs::remove(dir / "run" / "metrics.json");
  std::ifstream in(dir / "run" / "train.log");
  std::string line, kept;
  for (int i = 0; i < 7 && std::getline(in, line); ++i) kept += line + "\n";
  in.close();
  std::ofstream(dir / "run" / "train.log") << kept;
  const auto r = report(dir / "run");
  CHECK_FALSE(r.complete);
  CHECK(r.text.find("INCOMPLETE") != std::string::npos);
  CHECK(r.text.find("7 of 20") != std::string::npos);
  int rows = 0;
  std::ifstream curves(dir / "run" / "curves.csv");
  while (std::getline(curves, line)) ++rows;
  CHECK(rows == 8);
  CHECK_THROWS_AS(report(dir / "nothing-here"), Error);
}

TEST_CASE("ablation presets") {
  const auto dir = kbrl::testing::scratch_dir("ablation");
  auto c = smoke(dir);
  c.corpus.synthetic.sample_count = 40;
  c.grpo.episodes = 5;
  const auto a = run_ablation(AblationPreset::kRewardComponents, c);
  const auto b = run_ablation(AblationPreset::kRewardComponents, c);
  CHECK(a.rows.size() == 4);
  CHECK(a.row("baseline").macro_f1 == b.row("baseline").macro_f1);
  CHECK(a.row("baseline").preference_bias == b.row("baseline").preference_bias);
  CHECK(fs::exists(dir / "ablation_reward_components.csv"));

  const auto rvu = run_ablation(AblationPreset::kRegionVsUniform, c);
  CHECK(rvu.rows.size() == 4);
  CHECK_NOTHROW(rvu.row("weakly_known_uniform"));

  KSweepOptions sweep;
  sweep.probe_count = 20;
  sweep.repetitions = 10;
  const auto ks = run_ablation(AblationPreset::kKSweep, c, {}, sweep);
  REQUIRE(ks.rows.size() == 6);
  for (std::size_t i = 1; i < ks.rows.size(); ++i) {
    CHECK(ks.rows[i].k > ks.rows[i - 1].k);
    CHECK(ks.rows[i].binomial_variance <= ks.rows[i - 1].binomial_variance);
  }
  CHECK(ks.to_csv().rfind("variant,Q,B,Q_W,R-L,k,confidence_variance,binomial_variance\n", 0) == 0);
  CHECK_THROWS_AS(parse_ablation("nope"), Error);
}

}
