#ifndef KBRL_CORPUS_HPP_
#define KBRL_CORPUS_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kbrl/strategy.hpp"

namespace kbrl {

enum class Speaker { kSeeker, kSupporter };

std::string_view speaker_name(Speaker speaker);
Speaker parse_speaker(std::string_view name);

struct Turn {
  Speaker speaker = Speaker::kSeeker;
  std::string text;

  friend bool operator==(const Turn&, const Turn&) = default;
};

// One dialogue history with its gold response (strategy + utterance).
struct DialogueSample {
  std::string id;
  std::string background;
  std::vector<Turn> history;
  Strategy gold_strategy;
  std::string gold_utterance;
  // Synthetic context slots; empty for ingested corpora. Slot 0 carries the
  // (possibly corrupted) gold strategy index.
  std::vector<int> features;

  // Text of the most recent seeker turn, or "" when there is none.
  std::string_view last_seeker_utterance() const;

  friend bool operator==(const DialogueSample& a, const DialogueSample& b) {
    return a.id == b.id && a.background == b.background &&
           a.history == b.history && a.gold_strategy.id == b.gold_strategy.id &&
           a.gold_utterance == b.gold_utterance && a.features == b.features;
  }
};

struct SyntheticCorpusSpec {
  int strategy_count = 8;
  int sample_count = 1000;
  // Empty means uniform.
  std::vector<double> gold_distribution;
  double feature_noise = 0.0;
  std::uint64_t seed = 0;

  // Throws kbrl::Error when an invariant is violated.
  void validate() const;
};

struct Corpus {
  StrategySet strategies;
  std::vector<DialogueSample> samples;
};

// Index of the feature slot that encodes the gold strategy.
inline constexpr std::size_t kSignalSlot = 0;
// Total slots carried by synthetic samples (signal + distractors).
inline constexpr std::size_t kSyntheticSlots = 3;

// Reads a JSON-lines corpus. Records keep file order.
std::vector<DialogueSample> load_corpus(const std::filesystem::path& path,
                                        const StrategySet& strategies);
std::vector<DialogueSample> read_corpus(std::istream& in,
                                        const StrategySet& strategies);

void write_corpus(std::ostream& out, std::span<const DialogueSample> samples);
void write_corpus(const std::filesystem::path& path,
                  std::span<const DialogueSample> samples);

Corpus generate_synthetic(const SyntheticCorpusSpec& spec);

// Frequency of each gold strategy; entry s = count(gold = s) / |corpus|.
std::vector<double> gold_strategy_distribution(
    std::span<const DialogueSample> corpus, const StrategySet& strategies);

// Template text for a strategy. variant selects one of several canned
// sentences; the result ends with an echo of the seeker's last utterance.
std::string canned_sentence(const Strategy& strategy, std::size_t variant);
std::string render_utterance(const Strategy& strategy,
                             std::string_view last_seeker, std::size_t variant);

}  // namespace kbrl

#endif  // KBRL_CORPUS_HPP_
