#ifndef KBRL_GRPO_HPP_
#define KBRL_GRPO_HPP_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kbrl/boundary.hpp"
#include "kbrl/policy.hpp"
#include "kbrl/reward.hpp"

namespace kbrl {

enum class RewardMode {
  kRegionAware,         // correctness + region term - KL
  kUniformCorrectness,  // correctness + format validity - KL
  kAccuracyOnly,        // correctness - KL
  kEntropyOnly,         // region term - KL
};

std::string_view reward_mode_name(RewardMode mode);
RewardMode parse_reward_mode(std::string_view name);

struct GrpoConfig {
  int group_size = 8;
  double clip_epsilon = 0.2;
  double learning_rate = 0.5;
  int episodes = 300;
  int batch_size = 32;
  RewardMode reward_mode = RewardMode::kRegionAware;
  std::uint64_t seed = 0;
  // Rollout sampling temperature; delineation uses RunConfig::temperature.
  double temperature = 0.3;

  void validate() const;
};

// One sampled decision prepared for the surrogate objective.
struct RolloutStep {
  const FeatureVector* features = nullptr;
  int strategy = 0;
  double old_logprob = 0.0;
  double advantage = 0.0;
};

struct GroupTrace {
  std::string sample_id;
  std::vector<ResponseDraft> rollouts;
  std::vector<RewardBreakdown> rewards;
  std::vector<double> advantages;
  double surrogate_loss = 0.0;
};

struct EpisodeLog {
  int episode = 0;
  double mean_total = 0.0;
  double mean_correctness = 0.0;
  double mean_region = 0.0;
  // Mean of live - reference log-probabilities of the sampled strategies.
  double mean_kl = 0.0;
  double surrogate_loss = 0.0;
  // Selection frequency of each strategy among this episode's rollouts.
  std::vector<double> strategy_frequency;
};

std::string episode_log_to_json(const EpisodeLog& log);
EpisodeLog episode_log_from_json(const std::string& line);

// G independent draws at `temperature`; logprobs are recorded at T = 1.
std::vector<ResponseDraft> group_rollout(const PolicyParams& params,
                                         const StrategySet& strategies,
                                         const DialogueSample& sample, int group_size,
                                         double temperature, RngStream& rng);

// (r - mean) / population std; all zeros when the rewards are (numerically)
// identical.
std::vector<double> group_advantages(std::span<const double> rewards);

// Mean over steps of -min(rho * a, clip(rho, 1 - eps, 1 + eps) * a) with
// rho = exp(live - old).
double surrogate_loss(const PolicyParams& params, std::span<const RolloutStep> steps,
                      double clip_epsilon);
double surrogate_loss(const PolicyParams& params, std::span<const RolloutStep> steps,
                      double clip_epsilon, ParamGradient& gradient);

// 1 when the utterance carries a "[label]" tag from the set followed by text.
double format_reward(const ResponseDraft& draft, const StrategySet& strategies);

double mean_policy_kl(const PolicyParams& live, const PolicyParams& reference,
                      std::span<const DialogueSample> corpus);

struct TrainResult {
  PolicyParams params;
  std::vector<EpisodeLog> logs;
};

// Called after each episode's update.
using EpisodeObserver = std::function<void(const EpisodeLog&, const PolicyParams&)>;

// Throws kbrl::Error on a missing boundary record (only in modes that use the
// region term) and DivergenceError on a non-finite loss.
TrainResult train(PolicyParams params, const StrategySet& strategies,
                  std::span<const DialogueSample> corpus,
                  std::span<const BoundaryRecord> records,
                  const RewardConfig& reward_config, const GrpoConfig& config,
                  const FrozenPolicy& reference, const EpisodeObserver& observer = {});

}  // namespace kbrl

#endif  // KBRL_GRPO_HPP_
