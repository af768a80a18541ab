#ifndef KBRL_METRICS_HPP_
#define KBRL_METRICS_HPP_

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kbrl/corpus.hpp"
#include "kbrl/policy.hpp"
#include "kbrl/strategy.hpp"

namespace kbrl {

struct EvalPair {
  Strategy predicted_strategy;
  Strategy gold_strategy;
  std::string predicted_utterance;
  std::string gold_utterance;
};

struct StrategyStats {
  std::string label;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int support = 0;
  double selected_frequency = 0.0;
  double gold_frequency = 0.0;
};

struct MetricsReport {
  double macro_f1 = 0.0;
  double weighted_f1 = 0.0;
  double preference_bias = 0.0;
  double rouge_l = 0.0;
  std::size_t sample_count = 0;
  std::vector<StrategyStats> per_strategy;
};

// Per-class table over the full strategy set. Classes with no true positives
// have F1 = 0.
std::vector<StrategyStats> strategy_stats(std::span<const EvalPair> pairs,
                                          const StrategySet& strategies);

double macro_f1(std::span<const EvalPair> pairs, const StrategySet& strategies);
double weighted_f1(std::span<const EvalPair> pairs, const StrategySet& strategies);

// sqrt(mean_s ln((p_model(s) + 1e-6) / (p_gold(s) + 1e-6))^2).
double preference_bias(std::span<const EvalPair> pairs, const StrategySet& strategies);
double preference_bias(std::span<const double> model_frequency,
                       std::span<const double> gold_frequency);

// Lower-cased whitespace tokens.
std::vector<std::string> rouge_tokens(std::string_view text);
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);
// LCS-based F1 over tokens; 0 when either side is empty.
double rouge_l(std::string_view candidate, std::string_view reference);

MetricsReport summarize(std::span<const EvalPair> pairs, const StrategySet& strategies);

// Greedy strategy per sample, utterance from the response template.
std::vector<EvalPair> predict(const PolicyParams& params, const StrategySet& strategies,
                              std::span<const DialogueSample> test_corpus);
MetricsReport evaluate(const PolicyParams& params, const StrategySet& strategies,
                       std::span<const DialogueSample> test_corpus);

std::string report_to_json(const MetricsReport& report);
std::string metrics_csv_header();
std::string metrics_csv_row(std::string_view run_id, std::string_view method,
                            const MetricsReport& report);

}  // namespace kbrl

#endif  // KBRL_METRICS_HPP_
