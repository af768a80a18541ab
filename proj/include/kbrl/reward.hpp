#ifndef KBRL_REWARD_HPP_
#define KBRL_REWARD_HPP_

#include <span>

#include "kbrl/boundary.hpp"
#include "kbrl/policy.hpp"
#include "kbrl/strategy.hpp"

namespace kbrl {

// How the group entropy reaches individual rollouts.
enum class RegionAttribution {
  // Every rollout receives the group's region reward. Constant within a
  // group, so it has no effect on group-normalized advantages.
  kGroupShared,
  // Each rollout's share is its strategy's surprisal -ln p(s_k) in place of
  // the group entropy. The group mean is exactly the group region reward.
  kPerRollout,
};

struct RewardConfig {
  double beta = 0.001;
  int strategy_count = 8;
  RegionAttribution attribution = RegionAttribution::kPerRollout;

  void validate() const;
};

struct RewardBreakdown {
  double correctness = 0.0;
  double group_confidence = 0.0;
  double group_entropy = 0.0;
  double region_term = 0.0;
  double kl_term = 0.0;
  double total = 0.0;
};

// 1 - e / ln|S|, clamped to [0, 1]. Throws when e lies outside
// [0, ln|S|] by more than 1e-9.
double known_region_reward(double entropy, int strategy_count);
// e / ln|S|, clamped to [0, 1].
double unknown_region_reward(double entropy, int strategy_count);
// beta * (live - ref).
double kl_term(double live_logprob, double ref_logprob, double beta);

double region_reward(Region region, double entropy, int strategy_count);

// `group` must contain `rollout` (matched by strategy). With per-rollout
// attribution and more rollouts than strategies, region_term can leave [0, 1].
RewardBreakdown composite_reward(const ResponseDraft& rollout, const Strategy& gold,
                                 std::span<const ResponseDraft> group, Region region,
                                 double ref_logprob, const RewardConfig& config);

}  // namespace kbrl

#endif  // KBRL_REWARD_HPP_
