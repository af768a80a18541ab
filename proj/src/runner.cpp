#include "kbrl/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include "json.hpp"
#include "kbrl/error.hpp"
#include "kbrl/rng.hpp"

namespace kbrl {
namespace fs = std::filesystem;
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr const char* kConfigEcho = "config.echo";
constexpr const char* kRecordsFile = "boundary.records";
constexpr const char* kTrainLog = "train.log";
constexpr const char* kSftLog = "sft.log";
constexpr const char* kMetricsCsv = "metrics.csv";
constexpr const char* kMetricsJson = "metrics.json";
constexpr const char* kCompleteMarker = "run.complete";

void note(const Progress& progress, const std::string& message) {
  if (progress) progress(message);
}

template <typename Fn>
auto in_stage(std::string_view stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(std::string(stage), e.what());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

fs::path checkpoint_dir(const RunConfig& config) { return config.output_dir / "checkpoints"; }
fs::path sft_checkpoint(const RunConfig& config) { return checkpoint_dir(config) / "sft.json"; }
fs::path final_checkpoint(const RunConfig& config) { return checkpoint_dir(config) / "final.json"; }

void open_run_dir(const RunConfig& config) {
  fs::create_directories(checkpoint_dir(config));
  fs::remove(config.output_dir / kCompleteMarker);
  write_file(config.output_dir / kConfigEcho, config_to_json(config) + "\n");
}

template <typename T>
void take(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

void reject_unknown(const json& j, std::initializer_list<std::string_view> keys,
                    std::string_view where) {
  for (const auto& [key, value] : j.items()) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw Error("unknown config key '" + std::string(where) + key + "'");
    }
  }
}

RewardConfig reward_for(const RunConfig& config, const StrategySet& strategies) {
  RewardConfig reward = config.reward;
  reward.strategy_count = static_cast<int>(strategies.size());
  return reward;
}

PolicyParams sft_on(const RunConfig& config, const Dataset& data, const Progress& progress) {
  const auto result = sft_train(
      PolicyParams::zeros(config.feature_dim, static_cast<int>(data.strategies.size()),
                          config.exemplar_pull),
      data.train, config.sft.epochs, config.sft.learning_rate);
  std::ofstream log(config.output_dir / kSftLog);
  for (std::size_t e = 0; e < result.loss_trace.size(); ++e) {
    log << json{{"epoch", e}, {"loss", result.loss_trace[e]}}.dump() << '\n';
  }
  save_params(sft_checkpoint(config), result.params);
  if (!result.loss_trace.empty()) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "sft: %zu epochs, loss %.4f -> %.4f", result.loss_trace.size(),
                  result.loss_trace.front(), result.loss_trace.back());
    note(progress, buf);
  }
  return result.params;
}

DelineationConfig delineation_for(const RunConfig& config) {
  DelineationConfig d;
  d.k = config.k;
  d.temperature = config.temperature;
  d.seed = stage_seed(config, "delineate");
  d.workers = config.workers;
  return d;
}

std::vector<BoundaryRecord> delineate_with(const RunConfig& config, const Dataset& data,
                                           const PolicyParams& sft) {
  if (!config.delineate_before_sft) {
    return delineate(sft, data.strategies, data.train, data.train, delineation_for(config));
  }
  const auto base = PolicyParams::zeros(config.feature_dim, static_cast<int>(data.strategies.size()),
                                        config.exemplar_pull);
  return delineate(base, data.strategies, data.train, data.train, delineation_for(config));
}

std::vector<BoundaryRecord> delineate_on(const RunConfig& config, const Dataset& data,
                                         const PolicyParams& sft, const Progress& progress) {
  auto records = delineate_with(config, data, sft);
  write_records(config.output_dir / kRecordsFile, records);
  const auto counts = region_counts(records);
  note(progress, "delineate: unknown " + std::to_string(counts[0]) + ", weakly known " +
                     std::to_string(counts[1]) + ", highly known " + std::to_string(counts[2]));
  return records;
}

std::vector<DialogueSample> rl_corpus(const RunConfig& config, const Dataset& data,
                                      std::span<const BoundaryRecord> records) {
  if (!config.weakly_known_only) return data.train;
  const auto index = index_records(records);
  std::vector<DialogueSample> subset;
  for (const auto& s : data.train) {
    const auto it = index.find(s.id);
    if (it == index.end()) throw Error("missing boundary record for sample '" + s.id + "'");
    if (it->second->region == Region::kWeaklyKnown) subset.push_back(s);
  }
  if (subset.empty()) throw Error("no weakly known samples to train on");
  return subset;
}

GrpoConfig grpo_for(const RunConfig& config) {
  GrpoConfig g = config.grpo;
  g.seed = stage_seed(config, "grpo");
  return g;
}

PolicyParams train_on(const RunConfig& config, const Dataset& data, const PolicyParams& sft,
                      std::span<const BoundaryRecord> records, const Progress& progress) {
  const auto reference = snapshot_reference(sft);
  const auto corpus = rl_corpus(config, data, records);
  std::ofstream log(config.output_dir / kTrainLog);
  if (!log) throw Error("cannot write " + (config.output_dir / kTrainLog).string());
  const int every = config.checkpoint_every;
  const auto observer = [&](const EpisodeLog& entry, const PolicyParams& params) {
    log << episode_log_to_json(entry) << '\n';
    log.flush();
    const int done = entry.episode + 1;
    if (every > 0 && done % every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "episode-%06d.json", done);
      save_params(checkpoint_dir(config) / name, params);
      char buf[128];
      std::snprintf(buf, sizeof buf, "grpo: episode %d, reward %.4f, correctness %.4f", done,
                    entry.mean_total, entry.mean_correctness);
      note(progress, buf);
    }
  };
  auto result = train(sft, data.strategies, corpus, records, reward_for(config, data.strategies),
                      grpo_for(config), reference, observer);
  save_params(final_checkpoint(config), result.params);
  return std::move(result.params);
}

MetricsReport eval_on(const RunConfig& config, const Dataset& data, const PolicyParams& final_params,
                      const PolicyParams* sft) {
  ordered_json reports;
  std::string csv = metrics_csv_header() + "\n";
  if (sft != nullptr) {
    const auto base = evaluate(*sft, data.strategies, data.test);
    reports["sft"] = json::parse(report_to_json(base));
    csv += metrics_csv_row(config.run_id, "sft", base) + "\n";
  }
  const auto report = evaluate(final_params, data.strategies, data.test);
  const auto method = method_name(config);
  reports[method] = json::parse(report_to_json(report));
  csv += metrics_csv_row(config.run_id, method, report) + "\n";
  write_file(config.output_dir / kMetricsJson, reports.dump(2) + "\n");
  write_file(config.output_dir / kMetricsCsv, csv);
  return report;
}

std::string fixed(double v, int digits = 6) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct Prepared {
  Dataset data;
  PolicyParams sft;
};

MetricsReport variant_metrics(const RunConfig& config, const Prepared& prepared,
                              std::span<const BoundaryRecord> records) {
  const auto corpus = rl_corpus(config, prepared.data, records);
  const auto result =
      train(prepared.sft, prepared.data.strategies, corpus, records,
            reward_for(config, prepared.data.strategies), grpo_for(config),
            snapshot_reference(prepared.sft));
  return evaluate(result.params, prepared.data.strategies, prepared.data.test);
}

void accumulate(AblationRow& row, const MetricsReport& m, double weight) {
  row.macro_f1 += weight * m.macro_f1;
  row.preference_bias += weight * m.preference_bias;
  row.weighted_f1 += weight * m.weighted_f1;
  row.rouge_l += weight * m.rouge_l;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::vector<std::string> lines;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

}  // namespace

void RunConfig::validate() const {
  if (run_id.empty() || run_id.find_first_of(",\n") != std::string::npos) {
    throw Error("run_id must be non-empty without commas or newlines");
  }
  if (k < 1) throw Error("k must be >= 1");
  if (!(temperature > 0.0)) throw Error("temperature must be > 0");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw Error("test_fraction must be in (0, 1)");
  if (feature_dim < 1) throw Error("feature_dim must be >= 1");
  if (!std::isfinite(exemplar_pull)) throw Error("exemplar_pull must be finite");
  if (sft.epochs < 0) throw Error("sft.epochs must be >= 0");
  if (!(sft.learning_rate >= 0.0) || !std::isfinite(sft.learning_rate)) {
    throw Error("sft.learning_rate must be finite and >= 0");
  }
  if (checkpoint_every < 0) throw Error("checkpoint_every must be >= 0");
  if (seed_count < 1) throw Error("seed_count must be >= 1");
  if (corpus.path.empty()) corpus.synthetic.validate();
  grpo.validate();
  RewardConfig r = reward;
  r.strategy_count = std::max(r.strategy_count, 2);
  r.validate();
}

RunConfig config_from_json(const std::string& text, RunConfig c) {
  try {
    const json j = json::parse(text);
    reject_unknown(j,
                   {"run_id", "seed", "output_dir", "corpus", "k", "temperature", "test_fraction",
                    "feature_dim", "exemplar_pull", "sft", "grpo", "reward", "weakly_known_only", "delineate_before_sft",
                    "checkpoint_every", "workers", "seed_count"},
                   "");
    take(j, "run_id", c.run_id);
    take(j, "seed", c.seed);
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    take(j, "k", c.k);
    take(j, "temperature", c.temperature);
    take(j, "test_fraction", c.test_fraction);
    take(j, "feature_dim", c.feature_dim);
    take(j, "exemplar_pull", c.exemplar_pull);
    take(j, "weakly_known_only", c.weakly_known_only);
    take(j, "delineate_before_sft", c.delineate_before_sft);
    take(j, "checkpoint_every", c.checkpoint_every);
    take(j, "workers", c.workers);
    take(j, "seed_count", c.seed_count);
    if (j.contains("corpus")) {
      const auto& cj = j.at("corpus");
      reject_unknown(cj, {"path", "labels", "synthetic"}, "corpus.");
      if (cj.contains("path")) c.corpus.path = cj.at("path").get<std::string>();
      take(cj, "labels", c.corpus.labels);
      if (cj.contains("synthetic")) {
        const auto& sj = cj.at("synthetic");
        reject_unknown(sj, {"strategy_count", "sample_count", "gold_distribution", "feature_noise"},
                       "corpus.synthetic.");
        take(sj, "strategy_count", c.corpus.synthetic.strategy_count);
        take(sj, "sample_count", c.corpus.synthetic.sample_count);
        take(sj, "gold_distribution", c.corpus.synthetic.gold_distribution);
        take(sj, "feature_noise", c.corpus.synthetic.feature_noise);
      }
    }
    if (j.contains("sft")) {
      const auto& sj = j.at("sft");
      reject_unknown(sj, {"epochs", "learning_rate"}, "sft.");
      take(sj, "epochs", c.sft.epochs);
      take(sj, "learning_rate", c.sft.learning_rate);
    }
    if (j.contains("grpo")) {
      const auto& gj = j.at("grpo");
      reject_unknown(gj,
                     {"group_size", "clip_epsilon", "learning_rate", "episodes", "batch_size",
                      "reward_mode", "temperature"},
                     "grpo.");
      take(gj, "group_size", c.grpo.group_size);
      take(gj, "clip_epsilon", c.grpo.clip_epsilon);
      take(gj, "learning_rate", c.grpo.learning_rate);
      take(gj, "episodes", c.grpo.episodes);
      take(gj, "batch_size", c.grpo.batch_size);
      take(gj, "temperature", c.grpo.temperature);
      if (gj.contains("reward_mode")) {
        c.grpo.reward_mode = parse_reward_mode(gj.at("reward_mode").get<std::string>());
      }
    }
    if (j.contains("reward")) {
      const auto& rj = j.at("reward");
      reject_unknown(rj, {"beta", "attribution"}, "reward.");
      take(rj, "beta", c.reward.beta);
      if (rj.contains("attribution")) {
        const auto name = rj.at("attribution").get<std::string>();
        if (name == "per_rollout") {
          c.reward.attribution = RegionAttribution::kPerRollout;
        } else if (name == "group_shared") {
          c.reward.attribution = RegionAttribution::kGroupShared;
        } else {
          throw Error("unknown reward attribution: " + name);
        }
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad config: ") + e.what(), 0);
  }
  return c;
}

std::string config_to_json(const RunConfig& c) {
  ordered_json j;
  j["run_id"] = c.run_id;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir.string();
  ordered_json corpus;
  corpus["path"] = c.corpus.path.string();
  corpus["labels"] = c.corpus.labels;
  corpus["synthetic"] = {{"strategy_count", c.corpus.synthetic.strategy_count},
                         {"sample_count", c.corpus.synthetic.sample_count},
                         {"gold_distribution", c.corpus.synthetic.gold_distribution},
                         {"feature_noise", c.corpus.synthetic.feature_noise}};
  j["corpus"] = corpus;
  j["k"] = c.k;
  j["temperature"] = c.temperature;
  j["test_fraction"] = c.test_fraction;
  j["feature_dim"] = c.feature_dim;
  j["exemplar_pull"] = c.exemplar_pull;
  j["sft"] = {{"epochs", c.sft.epochs}, {"learning_rate", c.sft.learning_rate}};
  ordered_json g;
  g["group_size"] = c.grpo.group_size;
  g["clip_epsilon"] = c.grpo.clip_epsilon;
  g["learning_rate"] = c.grpo.learning_rate;
  g["episodes"] = c.grpo.episodes;
  g["batch_size"] = c.grpo.batch_size;
  g["reward_mode"] = reward_mode_name(c.grpo.reward_mode);
  g["temperature"] = c.grpo.temperature;
  j["grpo"] = g;
  j["reward"] = {{"beta", c.reward.beta},
                 {"attribution", c.reward.attribution == RegionAttribution::kPerRollout
                                     ? "per_rollout"
                                     : "group_shared"}};
  j["weakly_known_only"] = c.weakly_known_only;
  j["delineate_before_sft"] = c.delineate_before_sft;
  j["checkpoint_every"] = c.checkpoint_every;
  j["workers"] = c.workers;
  j["seed_count"] = c.seed_count;
  return j.dump(2);
}

RunConfig load_config(const fs::path& path, RunConfig base) {
  return config_from_json(read_file(path), std::move(base));
}

std::uint64_t stage_seed(const RunConfig& config, std::string_view stage) {
  return derive_seed(config.seed, stage);
}

Dataset prepare_dataset(const RunConfig& config) {
  config.validate();
  Dataset data{StrategySet::emotional_support(), {}, {}};
  std::vector<DialogueSample> samples;
  if (!config.corpus.path.empty()) {
    if (!config.corpus.labels.empty()) data.strategies = StrategySet(config.corpus.labels);
    samples = load_corpus(config.corpus.path, data.strategies);
  } else {
    auto spec = config.corpus.synthetic;
    spec.seed = stage_seed(config, "corpus");
    auto corpus = generate_synthetic(spec);
    data.strategies = std::move(corpus.strategies);
    samples = std::move(corpus.samples);
  }
  if (samples.size() < 2) throw Error("corpus needs at least two samples to split");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  RngStream rng(stage_seed(config, "split"));
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    std::swap(order[i], order[rng.below(i + 1)]);
  }
  auto test_count = static_cast<std::size_t>(
      std::llround(config.test_fraction * static_cast<double>(samples.size())));
  test_count = std::clamp<std::size_t>(test_count, 1, samples.size() - 1);
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < test_count ? data.test : data.train).push_back(std::move(samples[order[i]]));
  }
  return data;
}

std::string method_name(const RunConfig& config) {
  std::string name(reward_mode_name(config.grpo.reward_mode));
  return config.weakly_known_only ? "weakly_known_" + name : name;
}

PolicyParams run_sft_stage(const RunConfig& config, const Progress& progress) {
  const auto data = in_stage("corpus", [&] { return prepare_dataset(config); });
  in_stage("setup", [&] { open_run_dir(config); });
  return in_stage("sft", [&] { return sft_on(config, data, progress); });
}

std::vector<BoundaryRecord> run_delineate_stage(const RunConfig& config,
                                                const Progress& progress) {
  const auto data = in_stage("corpus", [&] { return prepare_dataset(config); });
  return in_stage("delineate", [&] {
    const auto sft = load_params(sft_checkpoint(config));
    return delineate_on(config, data, sft, progress);
  });
}

PolicyParams run_train_stage(const RunConfig& config, const Progress& progress) {
  const auto data = in_stage("corpus", [&] { return prepare_dataset(config); });
  return in_stage("grpo", [&] {
    const auto sft = load_params(sft_checkpoint(config));
    const auto records = load_records(config.output_dir / kRecordsFile);
    return train_on(config, data, sft, records, progress);
  });
}

MetricsReport run_eval_stage(const RunConfig& config, const Progress& progress) {
  const auto data = in_stage("corpus", [&] { return prepare_dataset(config); });
  return in_stage("eval", [&] {
    const auto final_params = load_params(final_checkpoint(config));
    std::optional<PolicyParams> sft;
    if (fs::exists(sft_checkpoint(config))) sft = load_params(sft_checkpoint(config));
    const auto report = eval_on(config, data, final_params, sft ? &*sft : nullptr);
    note(progress, "eval: Q " + fixed(report.macro_f1, 4) + ", B " +
                       fixed(report.preference_bias, 4));
    return report;
  });
}

fs::path run_pipeline(const RunConfig& config, const Progress& progress) {
  const auto data = in_stage("corpus", [&] { return prepare_dataset(config); });
  in_stage("setup", [&] { open_run_dir(config); });
  const auto sft = in_stage("sft", [&] { return sft_on(config, data, progress); });
  const auto records = in_stage("delineate", [&] { return delineate_on(config, data, sft, progress); });
  const auto final_params =
      in_stage("grpo", [&] { return train_on(config, data, sft, records, progress); });
  const auto metrics = in_stage("eval", [&] { return eval_on(config, data, final_params, &sft); });
  note(progress, "eval: Q " + fixed(metrics.macro_f1, 4) + ", B " +
                     fixed(metrics.preference_bias, 4));
  in_stage("report", [&] {
    write_file(config.output_dir / kCompleteMarker, config.run_id + "\n");
    report(config.output_dir);
  });
  return config.output_dir;
}

std::string_view ablation_name(AblationPreset preset) {
  switch (preset) {
    case AblationPreset::kRegionVsUniform: return "region_vs_uniform";
    case AblationPreset::kRewardComponents: return "reward_components";
    case AblationPreset::kKSweep: return "k_sweep";
  }
  return "region_vs_uniform";
}

AblationPreset parse_ablation(std::string_view name) {
  for (auto preset : {AblationPreset::kRegionVsUniform, AblationPreset::kRewardComponents,
                      AblationPreset::kKSweep}) {
    if (ablation_name(preset) == name) return preset;
  }
  throw Error("unknown ablation preset: " + std::string(name));
}

const AblationRow& AblationTable::row(std::string_view variant) const {
  for (const auto& r : rows) {
    if (r.variant == variant) return r;
  }
  throw Error("ablation table has no row '" + std::string(variant) + "'");
}

std::string AblationTable::to_csv() const {
  const bool sweep = preset == AblationPreset::kKSweep;
  std::string out = "variant,Q,B,Q_W,R-L";
  if (sweep) out += ",k,confidence_variance,binomial_variance";
  out += '\n';
  for (const auto& r : rows) {
    out += r.variant + ',' + fixed(r.macro_f1) + ',' + fixed(r.preference_bias) + ',' +
           fixed(r.weighted_f1) + ',' + fixed(r.rouge_l);
    if (sweep) {
      out += ',' + std::to_string(r.k) + ',' + fixed(r.confidence_variance, 8) + ',' +
             fixed(r.binomial_variance, 8);
    }
    out += '\n';
  }
  return out;
}

AblationTable run_ablation(AblationPreset preset, const RunConfig& config,
                           const Progress& progress, const KSweepOptions& sweep) {
  config.validate();
  AblationTable table;
  table.preset = preset;

  struct Variant {
    std::string name;
    RewardMode mode;
    bool weak_only;
  };
  std::vector<Variant> variants;
  switch (preset) {
    case AblationPreset::kRegionVsUniform:
      variants = {{"region_aware", RewardMode::kRegionAware, false},
                  {"uniform_correctness", RewardMode::kUniformCorrectness, false},
                  {"weakly_known_uniform", RewardMode::kUniformCorrectness, true}};
      table.rows.push_back({"sft"});
      break;
    case AblationPreset::kRewardComponents:
      variants = {{"baseline", RewardMode::kUniformCorrectness, false},
                  {"accuracy_only", RewardMode::kAccuracyOnly, false},
                  {"entropy_only", RewardMode::kEntropyOnly, false},
                  {"both", RewardMode::kRegionAware, false}};
      break;
    case AblationPreset::kKSweep:
      for (int k : sweep.ks) {
        AblationRow row;
        row.variant = "k=" + std::to_string(k);
        row.k = k;
        table.rows.push_back(row);
      }
      break;
  }
  for (const auto& v : variants) table.rows.push_back({v.name});

  const double weight = 1.0 / config.seed_count;
  for (int i = 0; i < config.seed_count; ++i) {
    RunConfig seeded = config;
    seeded.seed = config.seed + static_cast<std::uint64_t>(i);
    note(progress, std::string(ablation_name(preset)) + ": seed " + std::to_string(seeded.seed));
    Prepared prepared{in_stage("corpus", [&] { return prepare_dataset(seeded); }), {}};
    prepared.sft = in_stage("sft", [&] {
      return sft_train(PolicyParams::zeros(seeded.feature_dim,
                                           static_cast<int>(prepared.data.strategies.size()),
                                           seeded.exemplar_pull),
                       prepared.data.train, seeded.sft.epochs, seeded.sft.learning_rate)
          .params;
    });
    if (preset == AblationPreset::kKSweep) {
      for (auto& row : table.rows) {
        RunConfig at_k = seeded;
        at_k.k = row.k;
        at_k.grpo.reward_mode = RewardMode::kRegionAware;
        const auto records = in_stage("delineate", [&] {
          return delineate_with(at_k, prepared.data, prepared.sft);
        });
        const auto spread = in_stage("delineate", [&] {
          const auto probes = std::span<const DialogueSample>(prepared.data.train)
                                  .first(std::min<std::size_t>(
                                      prepared.data.train.size(),
                                      static_cast<std::size_t>(sweep.probe_count)));
          auto d = delineation_for(at_k);
          d.seed = stage_seed(at_k, "confidence-spread");
          return confidence_spread(prepared.sft, prepared.data.strategies, probes,
                                   prepared.data.train, d, sweep.repetitions);
        });
        row.confidence_variance += weight * spread.empirical_variance;
        row.binomial_variance += weight * spread.binomial_variance;
        accumulate(row, in_stage("grpo", [&] { return variant_metrics(at_k, prepared, records); }),
                   weight);
      }
      continue;
    }
    const auto records = in_stage("delineate", [&] {
      return delineate_with(seeded, prepared.data, prepared.sft);
    });
    for (auto& row : table.rows) {
      if (row.variant == "sft") {
        accumulate(row, evaluate(prepared.sft, prepared.data.strategies, prepared.data.test),
                   weight);
        continue;
      }
      const auto& v = *std::find_if(variants.begin(), variants.end(),
                                    [&](const Variant& x) { return x.name == row.variant; });
      RunConfig variant = seeded;
      variant.grpo.reward_mode = v.mode;
      variant.weakly_known_only = v.weak_only;
      accumulate(row, in_stage("grpo", [&] { return variant_metrics(variant, prepared, records); }),
                 weight);
    }
  }
  in_stage("report", [&] {
    fs::create_directories(config.output_dir);
    write_file(config.output_dir / ("ablation_" + std::string(ablation_name(preset)) + ".csv"),
               table.to_csv());
  });
  return table;
}

RunReport report(const fs::path& run_dir) {
  if (!fs::exists(run_dir / kConfigEcho)) {
    throw Error("not a run directory (no " + std::string(kConfigEcho) + "): " + run_dir.string());
  }
  const RunConfig config = config_from_json(read_file(run_dir / kConfigEcho));
  RunReport out;
  out.complete = fs::exists(run_dir / kCompleteMarker);
  std::ostringstream text;
  text << "run: " << config.run_id << "\n";
  text << "status: " << (out.complete ? "complete" : "INCOMPLETE") << "\n";
  text << "method: " << method_name(config) << "\n";

  std::vector<std::string> labels;
  if (fs::exists(run_dir / kRecordsFile)) {
    const auto records = load_records(run_dir / kRecordsFile);
    const auto counts = region_counts(records);
    std::ofstream regions(run_dir / "regions.csv");
    regions << "region,count\n";
    for (auto r : {Region::kHighlyKnown, Region::kWeaklyKnown, Region::kUnknown}) {
      regions << region_name(r) << ',' << counts[static_cast<std::size_t>(r)] << '\n';
    }
    text << "regions: highly_known " << counts[2] << ", weakly_known " << counts[1]
         << ", unknown " << counts[0] << " (total " << records.size() << ")\n";
  } else {
    text << "regions: missing\n";
  }

  const auto log_lines = read_lines(run_dir / kTrainLog);
  if (!log_lines.empty()) {
    std::ofstream curves(run_dir / "curves.csv");
    std::ofstream freq(run_dir / "strategy_frequency.csv");
    curves << "episode,mean_total,mean_correctness,mean_region,mean_kl,surrogate_loss\n";
    EpisodeLog last;
    for (std::size_t i = 0; i < log_lines.size(); ++i) {
      last = episode_log_from_json(log_lines[i]);
      curves << last.episode << ',' << fixed(last.mean_total) << ',' << fixed(last.mean_correctness)
             << ',' << fixed(last.mean_region) << ',' << fixed(last.mean_kl) << ','
             << fixed(last.surrogate_loss) << '\n';
      if (i == 0) {
        freq << "episode";
        for (std::size_t s = 0; s < last.strategy_frequency.size(); ++s) freq << ",s" << s;
        freq << '\n';
      }
      freq << last.episode;
      for (double f : last.strategy_frequency) freq << ',' << fixed(f);
      freq << '\n';
    }
    text << "episodes logged: " << log_lines.size() << " of " << config.grpo.episodes << "\n";
    text << "final episode: reward " << fixed(last.mean_total, 4) << ", correctness "
         << fixed(last.mean_correctness, 4) << ", region " << fixed(last.mean_region, 4)
         << ", kl " << fixed(last.mean_kl, 4) << "\n";
  } else {
    text << "episodes logged: 0 of " << config.grpo.episodes << "\n";
  }

  if (fs::exists(run_dir / kMetricsJson)) {
    const json metrics = json::parse(read_file(run_dir / kMetricsJson));
    text << "metrics:\n";
    char line[160];
    std::snprintf(line, sizeof line, "  %-28s %8s %8s %8s %8s\n", "method", "Q", "B", "Q_W", "R-L");
    text << line;
    for (const auto& [name, m] : metrics.items()) {
      std::snprintf(line, sizeof line, "  %-28s %8.4f %8.4f %8.4f %8.4f\n", name.c_str(),
                    m.at("Q").get<double>(), m.at("B").get<double>(), m.at("Q_W").get<double>(),
                    m.at("R-L").get<double>());
      text << line;
    }
  } else {
    text << "metrics: missing\n";
  }
  out.text = text.str();
  write_file(run_dir / "report.txt", out.text);
  return out;
}

}  // namespace kbrl
