#include "kbrl/policy.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "kbrl/error.hpp"

namespace kbrl {
namespace {

using nlohmann::json;

void add_tokens(std::string_view prefix, std::string_view text, int dim,
                FeatureVector& out) {
  std::string key(prefix);
  const std::size_t base = key.size();
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) {
      key.resize(base);
      for (std::size_t k = i; k < j; ++k) {
        key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[k]))));
      }
      out.push_back(static_cast<std::uint32_t>(fnv1a64(key) % static_cast<std::uint64_t>(dim)));
    }
    i = j;
  }
}

void add_feature(const std::string& key, int dim, FeatureVector& out) {
  out.push_back(static_cast<std::uint32_t>(fnv1a64(key) % static_cast<std::uint64_t>(dim)));
}

std::vector<double> logits_for(const PolicyParams& params,
                               const DialogueSample& sample,
                               const PromptExemplar* exemplar) {
  auto logits = policy_logits(params, featurize(sample, exemplar, params.feature_dim));
  if (exemplar != nullptr && exemplar->sample != nullptr) {
    const int pulled = exemplar->sample->gold_strategy.id;
    if (pulled >= 0 && pulled < params.strategy_count) {
      logits[static_cast<std::size_t>(pulled)] += params.exemplar_pull;
    }
  }
  return logits;
}

void check_dims(const PolicyParams& params, const ParamGradient& gradient) {
  if (gradient.weights.size() != params.weights.size() ||
      gradient.bias.size() != params.bias.size()) {
    throw Error("gradient dimensions do not match parameters");
  }
}

}  // namespace

PolicyParams PolicyParams::zeros(int feature_dim, int strategy_count,
                                 double exemplar_pull) {
  if (feature_dim <= 0 || strategy_count < 2) {
    throw Error("policy needs feature_dim > 0 and at least two strategies");
  }
  PolicyParams p;
  p.feature_dim = feature_dim;
  p.strategy_count = strategy_count;
  p.weights.assign(static_cast<std::size_t>(feature_dim) * strategy_count, 0.0);
  p.bias.assign(static_cast<std::size_t>(strategy_count), 0.0);
  p.exemplar_pull = exemplar_pull;
  p.lineage.push_back("init(zeros)");
  return p;
}

void PolicyParams::validate() const {
  if (feature_dim <= 0 || strategy_count < 2) throw Error("bad policy dimensions");
  if (weights.size() != static_cast<std::size_t>(feature_dim) * strategy_count ||
      bias.size() != static_cast<std::size_t>(strategy_count)) {
    throw Error("policy parameter sizes do not match dimensions");
  }
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(weights.begin(), weights.end(), finite) ||
      !std::all_of(bias.begin(), bias.end(), finite) || !std::isfinite(exemplar_pull)) {
    throw Error("policy parameters contain non-finite values");
  }
}

ParamGradient ParamGradient::zeros_like(const PolicyParams& params) {
  return {std::vector<double>(params.weights.size(), 0.0),
          std::vector<double>(params.bias.size(), 0.0)};
}

FeatureVector featurize(const DialogueSample& sample,
                        const PromptExemplar* exemplar, int feature_dim) {
  FeatureVector out;
  add_tokens("bg:", sample.background, feature_dim, out);
  const std::size_t n = sample.history.size();
  for (std::size_t t = n > 2 ? n - 2 : 0; t < n; ++t) {
    add_tokens("h:", sample.history[t].text, feature_dim, out);
  }
  for (std::size_t slot = 0; slot < sample.features.size(); ++slot) {
    add_feature("slot" + std::to_string(slot) + ":" + std::to_string(sample.features[slot]),
                feature_dim, out);
  }
  if (exemplar != nullptr) {
    add_feature("exemplar:" + std::to_string(exemplar->index), feature_dim, out);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<double> policy_logits(const PolicyParams& params,
                                  const FeatureVector& features) {
  std::vector<double> logits(params.bias);
  const auto s_count = static_cast<std::size_t>(params.strategy_count);
  for (std::uint32_t f : features) {
    const double* row = params.weights.data() + static_cast<std::size_t>(f) * s_count;
    for (std::size_t s = 0; s < s_count; ++s) logits[s] += row[s];
  }
  return logits;
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw Error("temperature must be > 0");
  double max_logit = -INFINITY;
  for (double z : logits) {
    if (!std::isfinite(z)) throw Error("non-finite logit");
    max_logit = std::max(max_logit, z);
  }
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - max_logit) / temperature);
    total += out[i];
  }
  for (double& p : out) p /= total;
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  double max_logit = -INFINITY;
  for (double z : logits) {
    if (!std::isfinite(z)) throw Error("non-finite logit");
    max_logit = std::max(max_logit, z);
  }
  double total = 0.0;
  for (double z : logits) total += std::exp(z - max_logit);
  const double log_norm = max_logit + std::log(total);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_norm;
  return out;
}

std::vector<double> strategy_distribution(const PolicyParams& params,
                                          const DialogueSample& sample,
                                          double temperature,
                                          const PromptExemplar* exemplar) {
  return softmax(logits_for(params, sample, exemplar), temperature);
}

std::string emit_utterance(const Strategy& strategy, const DialogueSample& sample) {
  return render_utterance(strategy, sample.last_seeker_utterance(), 0);
}

ResponseDraft sample_response(const PolicyParams& params,
                              const StrategySet& strategies,
                              const DialogueSample& sample, double temperature,
                              const PromptExemplar* exemplar, RngStream& rng) {
  const auto logits = logits_for(params, sample, exemplar);
  const auto probs = softmax(logits, temperature);
  const auto drawn = static_cast<int>(rng.categorical(probs));
  const auto base_logprobs = log_softmax(logits);
  ResponseDraft draft;
  draft.strategy = strategies.at(drawn);
  draft.utterance = emit_utterance(draft.strategy, sample);
  draft.strategy_logprob = base_logprobs[static_cast<std::size_t>(drawn)];
  draft.sampled_temperature = temperature;
  return draft;
}

Strategy greedy_strategy(const PolicyParams& params, const StrategySet& strategies,
                         const DialogueSample& sample) {
  const auto logits =
      policy_logits(params, featurize(sample, nullptr, params.feature_dim));
  const auto best = std::max_element(logits.begin(), logits.end()) - logits.begin();
  return strategies.at(static_cast<int>(best));
}

LabeledBatch LabeledBatch::from_corpus(std::span<const DialogueSample> corpus,
                                       int feature_dim) {
  LabeledBatch batch;
  batch.features.reserve(corpus.size());
  batch.gold.reserve(corpus.size());
  for (const auto& s : corpus) {
    batch.features.push_back(featurize(s, nullptr, feature_dim));
    batch.gold.push_back(s.gold_strategy.id);
  }
  return batch;
}

double mean_nll(const PolicyParams& params, const LabeledBatch& batch) {
  if (batch.size() == 0) throw Error("NLL of an empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto logp = log_softmax(policy_logits(params, batch.features[i]));
    total -= logp[static_cast<std::size_t>(batch.gold[i])];
  }
  return total / static_cast<double>(batch.size());
}

double mean_nll(const PolicyParams& params, const LabeledBatch& batch,
                ParamGradient& gradient) {
  if (batch.size() == 0) throw Error("NLL of an empty batch");
  gradient = ParamGradient::zeros_like(params);
  const auto s_count = static_cast<std::size_t>(params.strategy_count);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  std::vector<double> delta(s_count);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto logits = policy_logits(params, batch.features[i]);
    const auto logp = log_softmax(logits);
    const auto gold = static_cast<std::size_t>(batch.gold[i]);
    total -= logp[gold];
    // d(-log p_gold)/dz_s = p_s - [s == gold]
    for (std::size_t s = 0; s < s_count; ++s) {
      delta[s] = (std::exp(logp[s]) - (s == gold ? 1.0 : 0.0)) * inv_n;
      gradient.bias[s] += delta[s];
    }
    for (std::uint32_t f : batch.features[i]) {
      double* row = gradient.weights.data() + static_cast<std::size_t>(f) * s_count;
      for (std::size_t s = 0; s < s_count; ++s) row[s] += delta[s];
    }
  }
  return total * inv_n;
}

void apply_gradient(PolicyParams& params, const ParamGradient& gradient,
                    double learning_rate) {
  check_dims(params, gradient);
  if (learning_rate == 0.0) return;
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    params.weights[i] -= learning_rate * gradient.weights[i];
  }
  for (std::size_t i = 0; i < params.bias.size(); ++i) {
    params.bias[i] -= learning_rate * gradient.bias[i];
  }
  ++params.version;
}

SftResult sft_train(PolicyParams params, std::span<const DialogueSample> corpus,
                    int epochs, double learning_rate,
                    const std::function<void(int, double)>& on_epoch) {
  if (corpus.empty()) throw Error("SFT corpus is empty");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw Error("SFT learning rate must be finite and >= 0");
  }
  if (epochs < 0) throw Error("SFT epochs must be >= 0");
  params.validate();
  const auto batch = LabeledBatch::from_corpus(corpus, params.feature_dim);
  SftResult result;
  ParamGradient gradient;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const double loss = mean_nll(params, batch, gradient);
    if (!std::isfinite(loss)) throw DivergenceError("non-finite SFT loss", epoch);
    result.loss_trace.push_back(loss);
    if (on_epoch) on_epoch(epoch, loss);
    apply_gradient(params, gradient, learning_rate);
  }
  std::ostringstream tag;
  tag << "sft(epochs=" << epochs << ",lr=" << learning_rate << ",n=" << corpus.size() << ")";
  params.lineage.push_back(tag.str());
  result.params = std::move(params);
  return result;
}

FrozenPolicy snapshot_reference(const PolicyParams& params) {
  return FrozenPolicy(std::make_shared<const PolicyParams>(params));
}

double policy_kl(const PolicyParams& live, const PolicyParams& reference,
                 const FeatureVector& features) {
  const auto lp = log_softmax(policy_logits(live, features));
  const auto lq = log_softmax(policy_logits(reference, features));
  double kl = 0.0;
  for (std::size_t s = 0; s < lp.size(); ++s) kl += std::exp(lp[s]) * (lp[s] - lq[s]);
  return std::max(kl, 0.0);
}

std::string params_to_json(const PolicyParams& params) {
  json j = {{"format", "kbrl-policy-v1"},
            {"feature_dim", params.feature_dim},
            {"strategy_count", params.strategy_count},
            {"exemplar_pull", params.exemplar_pull},
            {"version", params.version},
            {"lineage", params.lineage},
            {"bias", params.bias},
            {"weights", params.weights}};
  return j.dump();
}

PolicyParams params_from_json(const std::string& text) {
  PolicyParams p;
  try {
    const json j = json::parse(text);
    if (j.value("format", "") != "kbrl-policy-v1") throw Error("unknown params format");
    p.feature_dim = j.at("feature_dim").get<int>();
    p.strategy_count = j.at("strategy_count").get<int>();
    p.exemplar_pull = j.at("exemplar_pull").get<double>();
    p.version = j.at("version").get<std::int64_t>();
    p.lineage = j.at("lineage").get<std::vector<std::string>>();
    p.bias = j.at("bias").get<std::vector<double>>();
    p.weights = j.at("weights").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad params file: ") + e.what(), 0);
  }
  p.validate();
  return p;
}

void save_params(const std::filesystem::path& path, const PolicyParams& params) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write params: " + path.string());
  out << params_to_json(params) << '\n';
}

PolicyParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open params: " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return params_from_json(buffer.str());
}

}  // namespace kbrl
