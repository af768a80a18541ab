#include "kbrl/boundary.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <thread>

#include "json.hpp"
#include "kbrl/error.hpp"

namespace kbrl {
namespace {

using nlohmann::json;

std::vector<PromptExemplar> draw_exemplars(const DialogueSample& sample,
                                           std::span<const DialogueSample> pool,
                                           int k, RngStream& rng) {
  const auto self = static_cast<std::size_t>(
      std::count_if(pool.begin(), pool.end(),
                    [&](const DialogueSample& s) { return s.id == sample.id; }));
  if (pool.size() - self < static_cast<std::size_t>(k)) {
    throw Error("exemplar pool too small: need " + std::to_string(k) +
                " exemplars besides '" + sample.id + "', have " +
                std::to_string(pool.size() - self));
  }
  std::vector<PromptExemplar> out;
  out.reserve(static_cast<std::size_t>(k));
  while (out.size() < static_cast<std::size_t>(k)) {
    const auto index = static_cast<int>(rng.below(pool.size()));
    if (pool[static_cast<std::size_t>(index)].id == sample.id) continue;
    const bool taken = std::any_of(out.begin(), out.end(),
                                   [&](const PromptExemplar& e) { return e.index == index; });
    if (!taken) out.push_back({index, &pool[static_cast<std::size_t>(index)]});
  }
  return out;
}

}  // namespace

std::string_view region_name(Region region) {
  switch (region) {
    case Region::kUnknown: return "unknown";
    case Region::kWeaklyKnown: return "weakly_known";
    case Region::kHighlyKnown: return "highly_known";
  }
  return "unknown";
}

Region parse_region(std::string_view name) {
  if (name == "unknown") return Region::kUnknown;
  if (name == "weakly_known") return Region::kWeaklyKnown;
  if (name == "highly_known") return Region::kHighlyKnown;
  throw Error("unknown region: " + std::string(name));
}

SampleSet harvest(const PolicyParams& params, const StrategySet& strategies,
                  const DialogueSample& sample, int k, double temperature,
                  std::span<const PromptExemplar> exemplars, RngStream& rng) {
  if (k < 1) throw Error("harvest needs K >= 1");
  if (exemplars.size() != static_cast<std::size_t>(k)) {
    throw Error("harvest needs exactly K exemplars");
  }
  for (std::size_t i = 0; i < exemplars.size(); ++i) {
    for (std::size_t j = i + 1; j < exemplars.size(); ++j) {
      if (exemplars[i].index == exemplars[j].index) {
        throw Error("harvest exemplars must have distinct indices");
      }
    }
  }
  SampleSet set;
  set.sample_id = sample.id;
  set.drafts.reserve(exemplars.size());
  set.correct_flags.reserve(exemplars.size());
  for (const auto& exemplar : exemplars) {
    set.drafts.push_back(
        sample_response(params, strategies, sample, temperature, &exemplar, rng));
    set.correct_flags.push_back(set.drafts.back().strategy == sample.gold_strategy);
  }
  return set;
}

int correct_count(const SampleSet& set) {
  return static_cast<int>(std::count(set.correct_flags.begin(), set.correct_flags.end(), true));
}

double confidence(const SampleSet& set) {
  if (set.correct_flags.empty()) throw Error("confidence of an empty sample set");
  return static_cast<double>(correct_count(set)) /
         static_cast<double>(set.correct_flags.size());
}

std::vector<int> strategy_counts(const SampleSet& set, int strategy_count) {
  std::vector<int> counts(static_cast<std::size_t>(strategy_count), 0);
  for (const auto& draft : set.drafts) {
    if (draft.strategy.id < 0 || draft.strategy.id >= strategy_count) {
      throw Error("draft strategy outside the strategy set");
    }
    ++counts[static_cast<std::size_t>(draft.strategy.id)];
  }
  return counts;
}

double entropy_from_counts(std::span<const int> counts) {
  long total = 0;
  for (int c : counts) {
    if (c < 0) throw Error("negative strategy count");
    total += c;
  }
  if (total == 0) throw Error("entropy of an empty count vector");
  double e = 0.0;
  for (int c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    e -= p * std::log(p);
  }
  return std::max(e, 0.0);
}

double strategy_entropy(const SampleSet& set, const StrategySet& strategies) {
  return entropy_from_counts(strategy_counts(set, strategies.size()));
}

Region region_from_count(int correct, int k) {
  if (k < 1 || correct < 0 || correct > k) throw Error("correct count out of range");
  if (correct == k) return Region::kHighlyKnown;
  if (correct == 0) return Region::kUnknown;
  return Region::kWeaklyKnown;
}

Region categorize(const SampleSet& set) {
  return region_from_count(correct_count(set), set.k());
}

BoundaryRecord make_record(const SampleSet& set, const StrategySet& strategies) {
  BoundaryRecord r;
  r.sample_id = set.sample_id;
  r.correct_count = correct_count(set);
  r.k = set.k();
  r.confidence = confidence(set);
  r.strategy_counts = strategy_counts(set, strategies.size());
  r.entropy = entropy_from_counts(r.strategy_counts);
  r.region = region_from_count(r.correct_count, r.k);
  return r;
}

std::vector<BoundaryRecord> delineate(const PolicyParams& params,
                                      const StrategySet& strategies,
                                      std::span<const DialogueSample> corpus,
                                      std::span<const DialogueSample> exemplar_pool,
                                      const DelineationConfig& config) {
  if (corpus.empty()) throw Error("delineation corpus is empty");
  if (config.k < 1) throw Error("delineation needs K >= 1");
  if (!(config.temperature > 0.0)) throw Error("delineation temperature must be > 0");
  if (exemplar_pool.size() < static_cast<std::size_t>(config.k)) {
    throw Error("exemplar pool too small: " + std::to_string(exemplar_pool.size()) +
                " < K = " + std::to_string(config.k));
  }
  std::vector<BoundaryRecord> records(corpus.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  auto work = [&] {
    for (std::size_t i = next++; i < corpus.size() && !failed; i = next++) {
      try {
        const auto& sample = corpus[i];
        RngStream rng(derive_seed(config.seed, sample.id));
        const auto exemplars = draw_exemplars(sample, exemplar_pool, config.k, rng);
        records[i] = make_record(harvest(params, strategies, sample, config.k,
                                         config.temperature, exemplars, rng),
                                 strategies);
      } catch (...) {
        if (!failed.exchange(true)) failure = std::current_exception();
      }
    }
  };
  unsigned workers = config.workers > 0 ? static_cast<unsigned>(config.workers)
                                        : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(corpus.size()));
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
  }
  if (failure) std::rethrow_exception(failure);
  return records;
}

double expected_confidence(const PolicyParams& params, const DialogueSample& sample,
                           std::span<const DialogueSample> exemplar_pool,
                           double temperature) {
  double total = 0.0;
  int used = 0;
  for (std::size_t i = 0; i < exemplar_pool.size(); ++i) {
    if (exemplar_pool[i].id == sample.id) continue;
    const PromptExemplar exemplar{static_cast<int>(i), &exemplar_pool[i]};
    const auto p = strategy_distribution(params, sample, temperature, &exemplar);
    total += p[static_cast<std::size_t>(sample.gold_strategy.id)];
    ++used;
  }
  if (used == 0) throw Error("exemplar pool has no entries besides '" + sample.id + "'");
  return total / used;
}

ConfidenceSpread confidence_spread(const PolicyParams& params,
                                   const StrategySet& strategies,
                                   std::span<const DialogueSample> probes,
                                   std::span<const DialogueSample> exemplar_pool,
                                   const DelineationConfig& config, int repetitions) {
  if (repetitions < 2) throw Error("confidence spread needs at least two repetitions");
  if (probes.empty()) throw Error("confidence spread needs probe samples");
  std::vector<double> sum(probes.size(), 0.0), sum_sq(probes.size(), 0.0);
  for (int rep = 0; rep < repetitions; ++rep) {
    DelineationConfig run = config;
    run.seed = derive_seed(config.seed, static_cast<std::uint64_t>(rep));
    const auto records = delineate(params, strategies, probes, exemplar_pool, run);
    for (std::size_t i = 0; i < records.size(); ++i) {
      sum[i] += records[i].confidence;
      sum_sq[i] += records[i].confidence * records[i].confidence;
    }
  }
  ConfidenceSpread spread;
  spread.k = config.k;
  const double r = repetitions;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const double mean = sum[i] / r;
    spread.empirical_variance += std::max(0.0, (sum_sq[i] - r * mean * mean) / (r - 1.0));
    const double c = expected_confidence(params, probes[i], exemplar_pool, config.temperature);
    spread.binomial_variance += c * (1.0 - c) / config.k;
  }
  spread.empirical_variance /= static_cast<double>(probes.size());
  spread.binomial_variance /= static_cast<double>(probes.size());
  return spread;
}

std::array<int, 3> region_counts(std::span<const BoundaryRecord> records) {
  std::array<int, 3> counts{0, 0, 0};
  for (const auto& r : records) ++counts[static_cast<std::size_t>(r.region)];
  return counts;
}

RecordIndex index_records(std::span<const BoundaryRecord> records) {
  RecordIndex index;
  for (const auto& r : records) {
    if (!index.emplace(r.sample_id, &r).second) {
      throw Error("duplicate boundary record for '" + r.sample_id + "'");
    }
  }
  return index;
}

void write_records(std::ostream& out, std::span<const BoundaryRecord> records) {
  for (const auto& r : records) {
    json j = {{"sample_id", r.sample_id},
              {"correct_count", r.correct_count},
              {"k", r.k},
              {"confidence", r.confidence},
              {"entropy", r.entropy},
              {"region", region_name(r.region)},
              {"strategy_counts", r.strategy_counts}};
    out << j.dump() << '\n';
  }
}

void write_records(const std::filesystem::path& path,
                   std::span<const BoundaryRecord> records) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write boundary records: " + path.string());
  write_records(out, records);
}

std::vector<BoundaryRecord> read_records(std::istream& in) {
  std::vector<BoundaryRecord> records;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    BoundaryRecord r;
    try {
      const json j = json::parse(line);
      r.sample_id = j.at("sample_id").get<std::string>();
      r.correct_count = j.at("correct_count").get<int>();
      r.k = j.at("k").get<int>();
      r.entropy = j.at("entropy").get<double>();
      r.strategy_counts = j.at("strategy_counts").get<std::vector<int>>();
      r.region = parse_region(j.at("region").get<std::string>());
    } catch (const json::exception& e) {
      throw ParseError(e.what(), line_no);
    } catch (const Error& e) {
      throw ParseError(e.what(), line_no);
    }
    if (r.k < 1 || r.correct_count < 0 || r.correct_count > r.k) {
      throw ParseError("correct_count out of range", line_no);
    }
    r.confidence = static_cast<double>(r.correct_count) / static_cast<double>(r.k);
    if (r.region != region_from_count(r.correct_count, r.k)) {
      throw ParseError("region disagrees with correct_count", line_no);
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<BoundaryRecord> load_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open boundary records: " + path.string());
  return read_records(in);
}

}  // namespace kbrl
