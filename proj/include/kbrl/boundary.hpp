#ifndef KBRL_BOUNDARY_HPP_
#define KBRL_BOUNDARY_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kbrl/corpus.hpp"
#include "kbrl/policy.hpp"
#include "kbrl/rng.hpp"
#include "kbrl/strategy.hpp"

namespace kbrl {

enum class Region { kUnknown, kWeaklyKnown, kHighlyKnown };

std::string_view region_name(Region region);
Region parse_region(std::string_view name);

// K sampled responses for one dialogue and their correctness labels.
struct SampleSet {
  std::string sample_id;
  std::vector<ResponseDraft> drafts;
  std::vector<bool> correct_flags;

  int k() const { return static_cast<int>(drafts.size()); }
};

struct BoundaryRecord {
  std::string sample_id;
  int correct_count = 0;
  int k = 0;
  double confidence = 0.0;
  double entropy = 0.0;  // nats
  Region region = Region::kUnknown;
  std::vector<int> strategy_counts;

  friend bool operator==(const BoundaryRecord&, const BoundaryRecord&) = default;
};

// Draws K responses, draft k conditioned on exemplars[k]. Throws when the
// exemplar count differs from K or indices repeat.
SampleSet harvest(const PolicyParams& params, const StrategySet& strategies,
                  const DialogueSample& sample, int k, double temperature,
                  std::span<const PromptExemplar> exemplars, RngStream& rng);

int correct_count(const SampleSet& set);
double confidence(const SampleSet& set);
std::vector<int> strategy_counts(const SampleSet& set, int strategy_count);

// Shannon entropy (nats) of the empirical distribution counts / sum.
double entropy_from_counts(std::span<const int> counts);
double strategy_entropy(const SampleSet& set, const StrategySet& strategies);

Region region_from_count(int correct, int k);
Region categorize(const SampleSet& set);

BoundaryRecord make_record(const SampleSet& set, const StrategySet& strategies);

struct DelineationConfig {
  int k = 10;
  double temperature = 0.4;
  std::uint64_t seed = 0;
  // 0 selects the hardware concurrency.
  int workers = 0;
};

// One record per corpus sample, in corpus order. Each sample draws K distinct
// exemplars from the pool, excluding entries with its own id, from a stream
// seeded by (seed, sample id); output does not depend on `workers`.
std::vector<BoundaryRecord> delineate(const PolicyParams& params,
                                      const StrategySet& strategies,
                                      std::span<const DialogueSample> corpus,
                                      std::span<const DialogueSample> exemplar_pool,
                                      const DelineationConfig& config);

// Exact expected confidence of one draft: the probability of the gold
// strategy averaged over every pool exemplar other than the sample itself.
double expected_confidence(const PolicyParams& params, const DialogueSample& sample,
                           std::span<const DialogueSample> exemplar_pool,
                           double temperature);

struct ConfidenceSpread {
  int k = 0;
  // Per-sample variance of the confidence across repeated delineations,
  // averaged over probes.
  double empirical_variance = 0.0;
  // Mean of c (1 - c) / K with c from expected_confidence.
  double binomial_variance = 0.0;
};

// Repeats delineation of `probes` with seeds derived from config.seed.
ConfidenceSpread confidence_spread(const PolicyParams& params,
                                   const StrategySet& strategies,
                                   std::span<const DialogueSample> probes,
                                   std::span<const DialogueSample> exemplar_pool,
                                   const DelineationConfig& config, int repetitions);

// Index 0 = Unknown, 1 = WeaklyKnown, 2 = HighlyKnown.
std::array<int, 3> region_counts(std::span<const BoundaryRecord> records);

using RecordIndex = std::unordered_map<std::string, const BoundaryRecord*>;
RecordIndex index_records(std::span<const BoundaryRecord> records);

void write_records(std::ostream& out, std::span<const BoundaryRecord> records);
void write_records(const std::filesystem::path& path,
                   std::span<const BoundaryRecord> records);
std::vector<BoundaryRecord> read_records(std::istream& in);
std::vector<BoundaryRecord> load_records(const std::filesystem::path& path);

}  // namespace kbrl

#endif  // KBRL_BOUNDARY_HPP_
