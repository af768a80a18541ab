#include <algorithm>
#include <cmath>
#include <functional>

#include "doctest.h"
#include "kbrl/error.hpp"
#include "kbrl/metrics.hpp"
#include "test_util.hpp"

using namespace kbrl;
using kbrl::testing::letters;
using kbrl::testing::make_sample;

namespace {

std::vector<EvalPair> pairs_of(const StrategySet& set, const std::vector<int>& predicted,
                               const std::vector<int>& gold) {
  std::vector<EvalPair> out;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    out.push_back({set.at(predicted[i]), set.at(gold[i]), "x", "x"});
  }
  return out;
}

// LCS by enumerating every subsequence of `a` and testing it against `b`.
std::size_t brute_lcs(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::size_t best = 0;
  for (unsigned mask = 0; mask < (1u << a.size()); ++mask) {
    std::vector<std::string> sub;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (mask & (1u << i)) sub.push_back(a[i]);
    }
    std::size_t j = 0;
    for (const auto& tok : b) {
      if (j < sub.size() && sub[j] == tok) ++j;
    }
    if (j == sub.size()) best = std::max(best, sub.size());
  }
  return best;
}

std::string join(const std::vector<std::string>& t) {
  std::string out;
  for (const auto& s : t) out += (out.empty() ? "" : " ") + s;
  return out;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("F1 hand-computed example") {
  const auto set = letters(2);
  const auto pairs = pairs_of(set, {0, 0, 1}, {0, 1, 1});
  CHECK(macro_f1(pairs, set) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(weighted_f1(pairs, set) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("perfect predictions score 1 and zero bias") {
  const auto set = letters(3);
  const auto pairs = pairs_of(set, {0, 1, 2, 2}, {0, 1, 2, 2});
  CHECK(macro_f1(pairs, set) == 1.0);
  CHECK(weighted_f1(pairs, set) == 1.0);
  CHECK(preference_bias(pairs, set) == 0.0);
}

TEST_CASE("macro F1 counts unseen classes as zero") {
  const auto set = letters(3);
  const auto pairs = pairs_of(set, {0, 1}, {0, 1});
  CHECK(macro_f1(pairs, set) == doctest::Approx(2.0 / 3.0));
  CHECK(weighted_f1(pairs, set) == 1.0);
}

TEST_CASE("constant predictions on a dominant class") {
  const auto set = letters(2);
  const auto pairs = pairs_of(set, {0, 0, 0, 0}, {0, 0, 0, 1});
  // Class 0: P 3/4, R 1, F1 6/7. Class 1: F1 0.
  CHECK(macro_f1(pairs, set) == doctest::Approx(3.0 / 7.0));
  CHECK(weighted_f1(pairs, set) == doctest::Approx(0.75 * 6.0 / 7.0));
  CHECK(macro_f1(pairs, set) < weighted_f1(pairs, set));
  const auto single = pairs_of(set, {0, 1, 0}, {0, 0, 0});
  const auto stats = strategy_stats(single, set);
  CHECK(weighted_f1(single, set) == doctest::Approx(stats[0].f1));
}

TEST_CASE("preference bias formula") {
  const auto set = letters(8);
  std::vector<int> predicted(80, 0), gold;
  for (int i = 0; i < 80; ++i) gold.push_back(i % 8);
  const auto pairs = pairs_of(set, predicted, gold);
  const double eps = 1e-6;
  double sum = std::pow(std::log((1.0 + eps) / (0.125 + eps)), 2);
  sum += 7 * std::pow(std::log(eps / (0.125 + eps)), 2);
  CHECK(preference_bias(pairs, set) == doctest::Approx(std::sqrt(sum / 8)).epsilon(1e-14));
  CHECK(preference_bias(pairs, set) > 0.0);
  const auto two = letters(2);
  const auto a = pairs_of(two, {0, 0, 0, 1}, {0, 1, 0, 1});
  const auto b = pairs_of(two, {1, 1, 1, 0}, {1, 0, 1, 0});
  CHECK(preference_bias(a, two) == doctest::Approx(preference_bias(b, two)).epsilon(1e-15));
  CHECK_THROWS_AS(preference_bias(std::vector<EvalPair>{}, two), Error);
}

TEST_CASE("ROUGE-L examples") {
  CHECK(rouge_l("the cat sat", "the cat") == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(rouge_l("The  CAT", "the cat") == 1.0);
  CHECK(rouge_l("a b", "c d") == 0.0);
  CHECK(rouge_l("", "a") == 0.0);
  CHECK(rouge_l("", "") == 0.0);
}

TEST_CASE("ROUGE-L matches a brute-force LCS on short strings") {
  const std::vector<std::string> alphabet = {"a", "b", "c"};
  std::vector<std::vector<std::string>> strings = {{}};
  for (std::size_t len = 1; len <= 3; ++len) {
    std::vector<std::vector<std::string>> next;
    for (const auto& s : strings) {
      if (s.size() != len - 1) continue;
      for (const auto& t : alphabet) {
        auto x = s;
        x.push_back(t);
        next.push_back(x);
      }
    }
    strings.insert(strings.end(), next.begin(), next.end());
  }
  CHECK(strings.size() == 40);
  for (const auto& a : strings) {
    for (const auto& b : strings) {
      const std::size_t l = brute_lcs(a, b);
      CHECK(lcs_length(a, b) == l);
      double expected = 0.0;
      if (l > 0) {
        const double p = double(l) / a.size(), r = double(l) / b.size();
        expected = 2 * p * r / (p + r);
      }
      CHECK(rouge_l(join(a), join(b)) == doctest::Approx(expected).epsilon(1e-15));
      CHECK(rouge_l(join(a), join(b)) == rouge_l(join(b), join(a)));
    }
  }
}

TEST_CASE("summaries keep table invariants") {
  const auto set = letters(4);
  const auto pairs = pairs_of(set, {0, 1, 1, 3, 2, 0}, {0, 1, 2, 3, 3, 1});
  const auto report = summarize(pairs, set);
  int support = 0;
  double selected = 0.0, gold = 0.0;
  for (const auto& st : report.per_strategy) {
    support += st.support;
    selected += st.selected_frequency;
    gold += st.gold_frequency;
  }
  CHECK(support == 6);
  CHECK(selected == doctest::Approx(1.0));
  CHECK(gold == doctest::Approx(1.0));
  CHECK(report.macro_f1 == doctest::Approx(macro_f1(pairs, set)));
  CHECK(report.weighted_f1 == doctest::Approx(weighted_f1(pairs, set)));
  CHECK(metrics_csv_row("r1", "sft", report).rfind("r1,sft,", 0) == 0);
  CHECK(metrics_csv_header() == "run_id,method,Q,B,Q_W,R-L");
}

TEST_CASE("evaluate with an oracle and a constant policy") {
  SyntheticCorpusSpec spec;
  spec.sample_count = 200;
  spec.seed = 2;
  const auto corpus = generate_synthetic(spec);
  auto oracle = PolicyParams::zeros(1 << 14, 8);
  for (int s = 0; s < 8; ++s) {
    auto probe = corpus.samples[0];
    probe.features = {s};
    auto bare = probe;
    bare.features.clear();
    const auto with = featurize(probe, nullptr, oracle.feature_dim);
    const auto without = featurize(bare, nullptr, oracle.feature_dim);
    for (auto idx : with) {
      if (!std::binary_search(without.begin(), without.end(), idx)) oracle.weight(idx, s) = 100.0;
    }
  }
  const auto report = evaluate(oracle, corpus.strategies, corpus.samples);
  CHECK(report.macro_f1 == 1.0);
  CHECK(report.weighted_f1 == 1.0);
  CHECK(report.preference_bias == 0.0);

  auto constant = PolicyParams::zeros(64, 8);
  constant.bias[5] = 1.0;
  const auto flat = evaluate(constant, corpus.strategies, corpus.samples);
  for (std::size_t s = 0; s < 8; ++s) {
    CHECK(flat.per_strategy[s].selected_frequency == (s == 5 ? 1.0 : 0.0));
  }
  CHECK_THROWS_AS(evaluate(constant, corpus.strategies, {}), Error);
}

TEST_CASE("uniform-random predictions have low bias but chance-level F1") {
  const auto set = letters(8);
  RngStream rng(1);
  std::vector<int> predicted, gold;
  for (int i = 0; i < 40000; ++i) {
    predicted.push_back(static_cast<int>(rng.below(8)));
    gold.push_back(static_cast<int>(rng.below(8)));
  }
  const auto pairs = pairs_of(set, predicted, gold);
  CHECK(preference_bias(pairs, set) < 0.05);
  CHECK(std::abs(macro_f1(pairs, set) - 0.125) < 0.01);
}

}
