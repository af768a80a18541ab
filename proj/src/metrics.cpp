#include "kbrl/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "kbrl/error.hpp"

namespace kbrl {
namespace {

constexpr double kBiasSmoothing = 1e-6;

void require_pairs(std::span<const EvalPair> pairs) {
  if (pairs.empty()) throw Error("metrics need at least one evaluation pair");
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::vector<StrategyStats> strategy_stats(std::span<const EvalPair> pairs,
                                          const StrategySet& strategies) {
  require_pairs(pairs);
  const std::size_t n = strategies.size();
  std::vector<int> tp(n, 0), predicted(n, 0), gold(n, 0);
  for (const auto& p : pairs) {
    const auto pi = static_cast<std::size_t>(p.predicted_strategy.id);
    const auto gi = static_cast<std::size_t>(p.gold_strategy.id);
    if (pi >= n || gi >= n) throw Error("evaluation strategy outside the strategy set");
    ++predicted[pi];
    ++gold[gi];
    if (pi == gi) ++tp[pi];
  }
  const double total = static_cast<double>(pairs.size());
  std::vector<StrategyStats> stats(n);
  for (std::size_t s = 0; s < n; ++s) {
    auto& st = stats[s];
    st.label = strategies.at(static_cast<int>(s)).label;
    st.support = gold[s];
    st.precision = predicted[s] > 0 ? static_cast<double>(tp[s]) / predicted[s] : 0.0;
    st.recall = gold[s] > 0 ? static_cast<double>(tp[s]) / gold[s] : 0.0;
    st.f1 = tp[s] > 0 ? 2.0 * tp[s] / static_cast<double>(predicted[s] + gold[s]) : 0.0;
    st.selected_frequency = predicted[s] / total;
    st.gold_frequency = gold[s] / total;
  }
  return stats;
}

double macro_f1(std::span<const EvalPair> pairs, const StrategySet& strategies) {
  const auto stats = strategy_stats(pairs, strategies);
  double sum = 0.0;
  for (const auto& st : stats) sum += st.f1;
  return sum / static_cast<double>(stats.size());
}

double weighted_f1(std::span<const EvalPair> pairs, const StrategySet& strategies) {
  const auto stats = strategy_stats(pairs, strategies);
  double sum = 0.0;
  for (const auto& st : stats) sum += st.support * st.f1;
  return sum / static_cast<double>(pairs.size());
}

double preference_bias(std::span<const double> model_frequency,
                       std::span<const double> gold_frequency) {
  if (model_frequency.size() != gold_frequency.size() || model_frequency.empty()) {
    throw Error("preference bias needs equal-length frequency vectors");
  }
  double sum = 0.0;
  for (std::size_t s = 0; s < model_frequency.size(); ++s) {
    const double d = std::log((model_frequency[s] + kBiasSmoothing) /
                              (gold_frequency[s] + kBiasSmoothing));
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(model_frequency.size()));
}

double preference_bias(std::span<const EvalPair> pairs, const StrategySet& strategies) {
  const auto stats = strategy_stats(pairs, strategies);
  std::vector<double> model, gold;
  for (const auto& st : stats) {
    model.push_back(st.selected_frequency);
    gold.push_back(st.gold_frequency);
  }
  return preference_bias(model, gold);
}

std::vector<std::string> rouge_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> row(b.size() + 1, 0);
  for (const auto& x : a) {
    std::size_t diag = 0;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = x == b[j - 1] ? diag + 1 : std::max(row[j], row[j - 1]);
      diag = up;
    }
  }
  return row[b.size()];
}

double rouge_l(std::string_view candidate, std::string_view reference) {
  const auto c = rouge_tokens(candidate);
  const auto r = rouge_tokens(reference);
  if (c.empty() || r.empty()) return 0.0;
  const auto l = static_cast<double>(lcs_length(c, r));
  if (l == 0.0) return 0.0;
  const double p = l / static_cast<double>(c.size());
  const double rec = l / static_cast<double>(r.size());
  return 2.0 * p * rec / (p + rec);
}

MetricsReport summarize(std::span<const EvalPair> pairs, const StrategySet& strategies) {
  MetricsReport report;
  report.per_strategy = strategy_stats(pairs, strategies);
  report.sample_count = pairs.size();
  std::vector<double> model, gold;
  for (const auto& st : report.per_strategy) {
    report.macro_f1 += st.f1;
    report.weighted_f1 += st.support * st.f1;
    model.push_back(st.selected_frequency);
    gold.push_back(st.gold_frequency);
  }
  report.macro_f1 /= static_cast<double>(report.per_strategy.size());
  report.weighted_f1 /= static_cast<double>(pairs.size());
  report.preference_bias = preference_bias(model, gold);
  double rouge = 0.0;
  for (const auto& p : pairs) rouge += rouge_l(p.predicted_utterance, p.gold_utterance);
  report.rouge_l = rouge / static_cast<double>(pairs.size());
  return report;
}

std::vector<EvalPair> predict(const PolicyParams& params, const StrategySet& strategies,
                              std::span<const DialogueSample> test_corpus) {
  if (test_corpus.empty()) throw Error("evaluation corpus is empty");
  std::vector<EvalPair> pairs;
  pairs.reserve(test_corpus.size());
  for (const auto& sample : test_corpus) {
    EvalPair p;
    p.predicted_strategy = greedy_strategy(params, strategies, sample);
    p.gold_strategy = sample.gold_strategy;
    p.predicted_utterance = emit_utterance(p.predicted_strategy, sample);
    p.gold_utterance = sample.gold_utterance;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

MetricsReport evaluate(const PolicyParams& params, const StrategySet& strategies,
                       std::span<const DialogueSample> test_corpus) {
  return summarize(predict(params, strategies, test_corpus), strategies);
}

std::string report_to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["Q"] = report.macro_f1;
  j["B"] = report.preference_bias;
  j["Q_W"] = report.weighted_f1;
  j["R-L"] = report.rouge_l;
  j["sample_count"] = report.sample_count;
  j["metadata"] = {{"decoding", "greedy"},
                   {"rouge_l", "f1 over lower-cased whitespace tokens"},
                   {"f1_classes", "full strategy set"},
                   {"bias_smoothing", kBiasSmoothing}};
  auto rows = nlohmann::ordered_json::array();
  for (const auto& st : report.per_strategy) {
    nlohmann::ordered_json row;
    row["label"] = st.label;
    row["precision"] = st.precision;
    row["recall"] = st.recall;
    row["f1"] = st.f1;
    row["support"] = st.support;
    row["selected_frequency"] = st.selected_frequency;
    row["gold_frequency"] = st.gold_frequency;
    rows.push_back(std::move(row));
  }
  j["per_strategy"] = std::move(rows);
  return j.dump(2);
}

std::string metrics_csv_header() { return "run_id,method,Q,B,Q_W,R-L"; }

std::string metrics_csv_row(std::string_view run_id, std::string_view method,
                            const MetricsReport& report) {
  std::string row(run_id);
  row += ',';
  row += method;
  for (double v : {report.macro_f1, report.preference_bias, report.weighted_f1, report.rouge_l}) {
    row += ',';
    row += fixed(v);
  }
  return row;
}

}  // namespace kbrl
