#ifndef KBRL_POLICY_HPP_
#define KBRL_POLICY_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kbrl/corpus.hpp"
#include "kbrl/rng.hpp"
#include "kbrl/strategy.hpp"

namespace kbrl {

// Linear softmax strategy planner: logits = bias + sum of weight rows for the
// active hashed features.
struct PolicyParams {
  int feature_dim = 0;
  int strategy_count = 0;
  std::vector<double> weights;  // feature_dim x strategy_count, row-major
  std::vector<double> bias;     // strategy_count
  // Logit added to the exemplar's gold strategy when a one-shot exemplar is
  // part of the prompt. Not trained.
  double exemplar_pull = 0.0;
  std::int64_t version = 0;
  // Stage history, e.g. {"init", "sft(seed=...)"}.
  std::vector<std::string> lineage;

  static PolicyParams zeros(int feature_dim, int strategy_count,
                            double exemplar_pull = 0.0);

  double weight(std::uint32_t feature, int strategy) const {
    return weights[static_cast<std::size_t>(feature) * strategy_count + strategy];
  }
  double& weight(std::uint32_t feature, int strategy) {
    return weights[static_cast<std::size_t>(feature) * strategy_count + strategy];
  }

  // Throws kbrl::Error on inconsistent dimensions or non-finite entries.
  void validate() const;

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;
};

// Dense gradient with the same layout as PolicyParams.
struct ParamGradient {
  std::vector<double> weights;
  std::vector<double> bias;

  static ParamGradient zeros_like(const PolicyParams& params);
};

// A one-shot prompt example; `sample` must outlive the exemplar.
struct PromptExemplar {
  int index = 0;
  const DialogueSample* sample = nullptr;
};

// Sorted, de-duplicated active feature indices (each has value 1).
using FeatureVector = std::vector<std::uint32_t>;

// Hashed bag of: background tokens, tokens of the last two history turns,
// synthetic feature slots and the exemplar index.
FeatureVector featurize(const DialogueSample& sample,
                        const PromptExemplar* exemplar, int feature_dim);

std::vector<double> policy_logits(const PolicyParams& params,
                                  const FeatureVector& features);

// softmax(logits / temperature). Throws on temperature <= 0 or non-finite
// logits.
std::vector<double> softmax(std::span<const double> logits, double temperature);
std::vector<double> log_softmax(std::span<const double> logits);

std::vector<double> strategy_distribution(const PolicyParams& params,
                                          const DialogueSample& sample,
                                          double temperature,
                                          const PromptExemplar* exemplar = nullptr);

// ỹ = s ⊕ y: a sampled strategy followed by its utterance.
struct ResponseDraft {
  Strategy strategy;
  std::string utterance;
  // Natural log of the temperature-1 policy probability of `strategy`.
  double strategy_logprob = 0.0;
  double sampled_temperature = 1.0;
};

ResponseDraft sample_response(const PolicyParams& params,
                              const StrategySet& strategies,
                              const DialogueSample& sample, double temperature,
                              const PromptExemplar* exemplar, RngStream& rng);

// Greedy decision; independent of temperature.
Strategy greedy_strategy(const PolicyParams& params, const StrategySet& strategies,
                         const DialogueSample& sample);

// Template response for a strategy in a given dialogue.
std::string emit_utterance(const Strategy& strategy, const DialogueSample& sample);

// Training view of a corpus: precomputed features and gold ids.
struct LabeledBatch {
  std::vector<FeatureVector> features;
  std::vector<int> gold;

  static LabeledBatch from_corpus(std::span<const DialogueSample> corpus,
                                  int feature_dim);
  std::size_t size() const { return gold.size(); }
};

// Mean negative log-likelihood of the gold strategies at temperature 1.
double mean_nll(const PolicyParams& params, const LabeledBatch& batch);
double mean_nll(const PolicyParams& params, const LabeledBatch& batch,
                ParamGradient& gradient);

struct SftResult {
  PolicyParams params;
  // Mean NLL of each epoch's full-batch pass, taken before its update.
  std::vector<double> loss_trace;
};

// Full-batch gradient descent on the mean NLL.
SftResult sft_train(PolicyParams params, std::span<const DialogueSample> corpus,
                    int epochs, double learning_rate,
                    const std::function<void(int, double)>& on_epoch = {});

void apply_gradient(PolicyParams& params, const ParamGradient& gradient,
                    double learning_rate);

// Immutable copy of a policy, used as the KL reference.
class FrozenPolicy {
 public:
  const PolicyParams& params() const { return *params_; }
  const PolicyParams* operator->() const { return params_.get(); }

 private:
  friend FrozenPolicy snapshot_reference(const PolicyParams& params);
  explicit FrozenPolicy(std::shared_ptr<const PolicyParams> p)
      : params_(std::move(p)) {}
  std::shared_ptr<const PolicyParams> params_;
};

FrozenPolicy snapshot_reference(const PolicyParams& params);
// Snapshots are immutable, so this shares the underlying parameters.
inline FrozenPolicy snapshot_reference(const FrozenPolicy& frozen) { return frozen; }

// KL(live || reference) of the temperature-1 strategy distributions.
double policy_kl(const PolicyParams& live, const PolicyParams& reference,
                 const FeatureVector& features);

// Structured-text serialization; doubles round-trip bit-exactly.
std::string params_to_json(const PolicyParams& params);
PolicyParams params_from_json(const std::string& text);
void save_params(const std::filesystem::path& path, const PolicyParams& params);
PolicyParams load_params(const std::filesystem::path& path);

}  // namespace kbrl

#endif  // KBRL_POLICY_HPP_
