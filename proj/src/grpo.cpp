#include "kbrl/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "kbrl/error.hpp"

namespace kbrl {
namespace {

using nlohmann::json;

bool uses_region(RewardMode mode) {
  return mode == RewardMode::kRegionAware || mode == RewardMode::kEntropyOnly;
}

double step_loss(double rho, double advantage, double clip_epsilon, bool* unclipped) {
  const double clipped = std::clamp(rho, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
  const double a = rho * advantage;
  const double b = clipped * advantage;
  if (unclipped != nullptr) *unclipped = a <= b;
  return -std::min(a, b);
}

}  // namespace

std::string_view reward_mode_name(RewardMode mode) {
  switch (mode) {
    case RewardMode::kRegionAware: return "region_aware";
    case RewardMode::kUniformCorrectness: return "uniform_correctness";
    case RewardMode::kAccuracyOnly: return "accuracy_only";
    case RewardMode::kEntropyOnly: return "entropy_only";
  }
  return "region_aware";
}

RewardMode parse_reward_mode(std::string_view name) {
  for (auto mode : {RewardMode::kRegionAware, RewardMode::kUniformCorrectness,
                    RewardMode::kAccuracyOnly, RewardMode::kEntropyOnly}) {
    if (reward_mode_name(mode) == name) return mode;
  }
  throw Error("unknown reward mode: " + std::string(name));
}

void GrpoConfig::validate() const {
  if (group_size < 2) throw Error("group size must be >= 2");
  if (!(clip_epsilon > 0.0)) throw Error("clip epsilon must be > 0");
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) {
    throw Error("learning rate must be finite and >= 0");
  }
  if (episodes < 0) throw Error("episodes must be >= 0");
  if (batch_size < 1) throw Error("batch size must be >= 1");
  if (!(temperature > 0.0)) throw Error("rollout temperature must be > 0");
}

std::string episode_log_to_json(const EpisodeLog& log) {
  json j = {{"episode", log.episode},
            {"mean_total", log.mean_total},
            {"mean_correctness", log.mean_correctness},
            {"mean_region", log.mean_region},
            {"mean_kl", log.mean_kl},
            {"surrogate_loss", log.surrogate_loss},
            {"strategy_frequency", log.strategy_frequency}};
  return j.dump();
}

EpisodeLog episode_log_from_json(const std::string& line) {
  EpisodeLog log;
  try {
    const json j = json::parse(line);
    log.episode = j.at("episode").get<int>();
    log.mean_total = j.at("mean_total").get<double>();
    log.mean_correctness = j.at("mean_correctness").get<double>();
    log.mean_region = j.at("mean_region").get<double>();
    log.mean_kl = j.at("mean_kl").get<double>();
    log.surrogate_loss = j.at("surrogate_loss").get<double>();
    log.strategy_frequency = j.at("strategy_frequency").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ParseError(e.what(), 0);
  }
  return log;
}

std::vector<ResponseDraft> group_rollout(const PolicyParams& params,
                                         const StrategySet& strategies,
                                         const DialogueSample& sample, int group_size,
                                         double temperature, RngStream& rng) {
  if (group_size < 2) throw Error("group rollout needs G >= 2");
  std::vector<ResponseDraft> drafts;
  drafts.reserve(static_cast<std::size_t>(group_size));
  for (int k = 0; k < group_size; ++k) {
    drafts.push_back(sample_response(params, strategies, sample, temperature, nullptr, rng));
  }
  return drafts;
}

std::vector<double> group_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw Error("advantages need at least two rewards");
  double scale = 0.0;
  for (double r : rewards) {
    if (!std::isfinite(r)) throw Error("non-finite reward");
    scale = std::max(scale, std::abs(r));
  }
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out(rewards.size(), 0.0);
  // Identical rewards can leave a rounding-level spread.
  if (sd <= 1e-12 * std::max(1.0, scale)) return out;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / sd;
  return out;
}

double surrogate_loss(const PolicyParams& params, std::span<const RolloutStep> steps,
                      double clip_epsilon) {
  if (steps.empty()) throw Error("surrogate loss of no steps");
  double total = 0.0;
  for (const auto& step : steps) {
    const auto logp = log_softmax(policy_logits(params, *step.features));
    const double rho = std::exp(logp[static_cast<std::size_t>(step.strategy)] - step.old_logprob);
    if (!std::isfinite(rho)) throw Error("non-finite importance ratio");
    total += step_loss(rho, step.advantage, clip_epsilon, nullptr);
  }
  return total / static_cast<double>(steps.size());
}

double surrogate_loss(const PolicyParams& params, std::span<const RolloutStep> steps,
                      double clip_epsilon, ParamGradient& gradient) {
  if (steps.empty()) throw Error("surrogate loss of no steps");
  gradient = ParamGradient::zeros_like(params);
  const auto s_count = static_cast<std::size_t>(params.strategy_count);
  const double inv_n = 1.0 / static_cast<double>(steps.size());
  std::vector<double> delta(s_count);
  double total = 0.0;
  for (const auto& step : steps) {
    const auto logp = log_softmax(policy_logits(params, *step.features));
    const auto chosen = static_cast<std::size_t>(step.strategy);
    const double rho = std::exp(logp[chosen] - step.old_logprob);
    if (!std::isfinite(rho)) throw Error("non-finite importance ratio");
    bool unclipped = false;
    total += step_loss(rho, step.advantage, clip_epsilon, &unclipped);
    if (!unclipped || step.advantage == 0.0) continue;
    // d(-rho a)/dz_s = -rho a ([s == chosen] - p_s)
    const double coef = -rho * step.advantage * inv_n;
    for (std::size_t s = 0; s < s_count; ++s) {
      delta[s] = coef * ((s == chosen ? 1.0 : 0.0) - std::exp(logp[s]));
      gradient.bias[s] += delta[s];
    }
    for (std::uint32_t f : *step.features) {
      double* row = gradient.weights.data() + static_cast<std::size_t>(f) * s_count;
      for (std::size_t s = 0; s < s_count; ++s) row[s] += delta[s];
    }
  }
  return total * inv_n;
}

double format_reward(const ResponseDraft& draft, const StrategySet& strategies) {
  const std::string& u = draft.utterance;
  if (u.empty() || u.front() != '[') return 0.0;
  const auto close = u.find(']');
  if (close == std::string::npos) return 0.0;
  const auto found = strategies.find(std::string_view(u).substr(1, close - 1));
  if (!found) return 0.0;
  const auto rest = u.find_first_not_of(' ', close + 1);
  return rest == std::string::npos ? 0.0 : 1.0;
}

double mean_policy_kl(const PolicyParams& live, const PolicyParams& reference,
                      std::span<const DialogueSample> corpus) {
  if (corpus.empty()) throw Error("KL over an empty corpus");
  double total = 0.0;
  for (const auto& s : corpus) {
    total += policy_kl(live, reference, featurize(s, nullptr, live.feature_dim));
  }
  return total / static_cast<double>(corpus.size());
}

TrainResult train(PolicyParams params, const StrategySet& strategies,
                  std::span<const DialogueSample> corpus,
                  std::span<const BoundaryRecord> records,
                  const RewardConfig& reward_config, const GrpoConfig& config,
                  const FrozenPolicy& reference, const EpisodeObserver& observer) {
  config.validate();
  reward_config.validate();
  params.validate();
  if (corpus.empty()) throw Error("GRPO corpus is empty");
  const auto s_count = strategies.size();
  if (static_cast<std::size_t>(reward_config.strategy_count) != s_count ||
      static_cast<std::size_t>(params.strategy_count) != s_count) {
    throw Error("strategy count mismatch between policy, reward and strategy set");
  }
  if (reference->feature_dim != params.feature_dim ||
      reference->strategy_count != params.strategy_count) {
    throw Error("reference policy dimensions differ from the live policy");
  }

  const auto index = index_records(records);
  std::vector<Region> regions(corpus.size(), Region::kWeaklyKnown);
  if (uses_region(config.reward_mode)) {
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto it = index.find(corpus[i].id);
      if (it == index.end()) {
        throw Error("missing boundary record for sample '" + corpus[i].id + "'");
      }
      regions[i] = it->second->region;
    }
  }
  std::vector<FeatureVector> features;
  features.reserve(corpus.size());
  for (const auto& s : corpus) features.push_back(featurize(s, nullptr, params.feature_dim));
  std::vector<std::vector<double>> ref_logprobs;
  ref_logprobs.reserve(corpus.size());
  for (const auto& f : features) ref_logprobs.push_back(log_softmax(policy_logits(reference.params(), f)));

  RngStream batch_rng(derive_seed(config.seed, "grpo-batch"));
  const std::uint64_t rollout_seed = derive_seed(config.seed, "grpo-rollout");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::min(order.size(), static_cast<std::size_t>(config.batch_size));

  TrainResult result;
  result.logs.reserve(static_cast<std::size_t>(config.episodes));
  std::vector<RolloutStep> steps;
  std::vector<double> totals;
  ParamGradient gradient;
  for (int episode = 0; episode < config.episodes; ++episode) {
    EpisodeLog log;
    try {
      for (std::size_t i = 0; i < batch; ++i) {
        std::swap(order[i], order[i + batch_rng.below(order.size() - i)]);
      }
      const std::uint64_t episode_seed =
          derive_seed(rollout_seed, static_cast<std::uint64_t>(episode));
      log.episode = episode;
      log.strategy_frequency.assign(s_count, 0.0);
      steps.clear();
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t i = order[b];
        const auto& sample = corpus[i];
        RngStream rng(derive_seed(episode_seed, static_cast<std::uint64_t>(b)));
        const auto group = group_rollout(params, strategies, sample, config.group_size,
                                         config.temperature, rng);
        totals.clear();
        for (const auto& draft : group) {
          const auto id = static_cast<std::size_t>(draft.strategy.id);
          const double ref_lp = ref_logprobs[i][id];
          auto r = composite_reward(draft, sample.gold_strategy, group, regions[i], ref_lp,
                                    reward_config);
          double total = 0.0;
          switch (config.reward_mode) {
            case RewardMode::kRegionAware:
              total = r.total;
              break;
            case RewardMode::kUniformCorrectness:
              total = r.correctness + format_reward(draft, strategies) - r.kl_term;
              break;
            case RewardMode::kAccuracyOnly:
              total = r.correctness - r.kl_term;
              break;
            case RewardMode::kEntropyOnly:
              total = r.region_term - r.kl_term;
              break;
          }
          totals.push_back(total);
          log.mean_total += total;
          log.mean_correctness += r.correctness;
          log.mean_region += uses_region(config.reward_mode) ? r.region_term : 0.0;
          log.mean_kl += draft.strategy_logprob - ref_lp;
          log.strategy_frequency[id] += 1.0;
        }
        const auto advantages = group_advantages(totals);
        for (std::size_t k = 0; k < group.size(); ++k) {
          steps.push_back({&features[i], group[k].strategy.id, group[k].strategy_logprob,
                           advantages[k]});
        }
      }
      const double n = static_cast<double>(steps.size());
      log.mean_total /= n;
      log.mean_correctness /= n;
      log.mean_region /= n;
      log.mean_kl /= n;
      for (double& f : log.strategy_frequency) f /= n;

      log.surrogate_loss = surrogate_loss(params, steps, config.clip_epsilon, gradient);
      if (!std::isfinite(log.surrogate_loss)) {
        throw DivergenceError("non-finite surrogate loss", episode);
      }
      apply_gradient(params, gradient, config.learning_rate);
      const bool finite =
          std::all_of(params.weights.begin(), params.weights.end(),
                      [](double v) { return std::isfinite(v); }) &&
          std::all_of(params.bias.begin(), params.bias.end(),
                      [](double v) { return std::isfinite(v); });
      if (!finite) throw DivergenceError("non-finite parameters after update", episode);
    } catch (const DivergenceError&) {
      throw;
    } catch (const Error& e) {
      // Inputs were validated up front, so failures here are numerical.
      throw DivergenceError(e.what(), episode);
    }
    if (observer) observer(log, params);
    result.logs.push_back(std::move(log));
  }
  std::ostringstream tag;
  tag << "grpo(mode=" << reward_mode_name(config.reward_mode)
      << ",episodes=" << config.episodes << ",lr=" << config.learning_rate << ")";
  params.lineage.push_back(tag.str());
  result.params = std::move(params);
  return result;
}

}  // namespace kbrl
