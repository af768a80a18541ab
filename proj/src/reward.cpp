#include "kbrl/reward.hpp"

#include <algorithm>
#include <cmath>

#include "kbrl/error.hpp"

namespace kbrl {
namespace {

constexpr double kEntropySlack = 1e-9;

double normalized_entropy(double entropy, int strategy_count) {
  if (strategy_count < 2) throw Error("region reward needs at least two strategies");
  const double max_entropy = std::log(static_cast<double>(strategy_count));
  if (!std::isfinite(entropy) || entropy < -kEntropySlack ||
      entropy > max_entropy + kEntropySlack) {
    throw Error("entropy " + std::to_string(entropy) + " outside [0, ln|S|]");
  }
  return entropy / max_entropy;
}

}  // namespace

void RewardConfig::validate() const {
  if (strategy_count < 2) throw Error("reward config needs at least two strategies");
  if (!std::isfinite(beta) || beta < 0.0) throw Error("beta must be finite and >= 0");
}

double known_region_reward(double entropy, int strategy_count) {
  return std::clamp(1.0 - normalized_entropy(entropy, strategy_count), 0.0, 1.0);
}

double unknown_region_reward(double entropy, int strategy_count) {
  return std::clamp(normalized_entropy(entropy, strategy_count), 0.0, 1.0);
}

double kl_term(double live_logprob, double ref_logprob, double beta) {
  if (!std::isfinite(live_logprob) || !std::isfinite(ref_logprob) || !std::isfinite(beta)) {
    throw Error("non-finite input to the KL term");
  }
  if (beta == 0.0) return 0.0;
  return beta * (live_logprob - ref_logprob);
}

double region_reward(Region region, double entropy, int strategy_count) {
  return region == Region::kUnknown ? unknown_region_reward(entropy, strategy_count)
                                    : known_region_reward(entropy, strategy_count);
}

RewardBreakdown composite_reward(const ResponseDraft& rollout, const Strategy& gold,
                                 std::span<const ResponseDraft> group, Region region,
                                 double ref_logprob, const RewardConfig& config) {
  if (group.empty()) throw Error("composite reward of an empty group");
  config.validate();
  std::vector<int> counts(static_cast<std::size_t>(config.strategy_count), 0);
  int correct = 0;
  for (const auto& draft : group) {
    if (draft.strategy.id < 0 || draft.strategy.id >= config.strategy_count) {
      throw Error("rollout strategy outside the strategy set");
    }
    ++counts[static_cast<std::size_t>(draft.strategy.id)];
    if (draft.strategy == gold) ++correct;
  }
  const int own = counts[static_cast<std::size_t>(rollout.strategy.id)];
  if (own == 0) throw Error("rollout is not part of its group");

  const double g = static_cast<double>(group.size());
  RewardBreakdown r;
  r.correctness = rollout.strategy == gold ? 1.0 : 0.0;
  r.group_confidence = static_cast<double>(correct) / g;
  r.group_entropy = entropy_from_counts(counts);
  r.region_term = region_reward(region, r.group_entropy, config.strategy_count);
  if (config.attribution == RegionAttribution::kPerRollout) {
    const double surprisal = -std::log(static_cast<double>(own) / g);
    const double shift =
        (r.group_entropy - surprisal) / std::log(static_cast<double>(config.strategy_count));
    r.region_term += region == Region::kUnknown ? -shift : shift;
  }
  r.kl_term = kl_term(rollout.strategy_logprob, ref_logprob, config.beta);
  r.total = r.correctness + r.region_term - r.kl_term;
  return r;
}

}  // namespace kbrl
