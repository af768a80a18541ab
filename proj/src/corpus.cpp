#include "kbrl/corpus.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

#include "json.hpp"
#include "kbrl/error.hpp"
#include "kbrl/rng.hpp"

namespace kbrl {
namespace {

using nlohmann::json;

constexpr std::array<std::string_view, 12> kProblems = {
    "job loss",          "breakup with partner", "exam pressure",
    "conflict with boss", "moving to a new city", "ongoing health issues",
    "financial debt",    "loneliness during lockdown",
    "argument with a friend", "grief after a loss", "school bullying",
    "academic failure"};
constexpr std::array<std::string_view, 8> kEmotions = {
    "anxiety", "sadness", "anger", "fear",
    "shame",   "depression", "disgust", "frustration"};
constexpr std::array<std::string_view, 16> kSeekerLines = {
    "i have not been sleeping well lately",
    "everything feels like too much right now",
    "i do not know who to talk to about this",
    "my family does not understand me",
    "i keep thinking about what happened",
    "work has been really stressful this month",
    "i feel stuck and i can not move forward",
    "sometimes i just want to give up",
    "i tried talking to them but it went badly",
    "i am worried it will happen again",
    "nobody seems to notice how i feel",
    "i can not focus on anything at all",
    "it has been weeks and nothing changed",
    "i feel like i let everyone down",
    "i miss how things used to be",
    "i am not sure what to do next"};
constexpr std::array<std::string_view, 8> kSupporterLines = {
    "hello , how are you feeling today",
    "thank you for sharing that with me",
    "i am here to listen",
    "that sounds really hard",
    "can you tell me more about it",
    "i see what you mean",
    "take your time",
    "i understand"};

struct Canned {
  std::string_view key;
  std::array<std::string_view, 3> sentences;
};

constexpr std::array<Canned, 8> kCanned = {{
    {"question",
     {"could you tell me more about how this started ?",
      "what do you think is making this hardest for you ?",
      "how long have you been feeling this way ?"}},
    {"restatement or paraphrasing",
     {"so what i hear is that this has been weighing on you .",
      "it sounds like you are saying things have piled up .",
      "if i understand you right , this keeps coming back ."}},
    {"reflection of feelings",
     {"you seem to be feeling really overwhelmed .",
      "it sounds like you feel hurt and alone .",
      "i can sense how frustrated and tired you are ."}},
    {"self-disclosure",
     {"i went through something similar once and it was hard .",
      "i have felt that way before too .",
      "when this happened to me i also struggled ."}},
    {"affirmation and reassurance",
     {"you are doing the best you can and that matters .",
      "it is okay to feel this way , you are not alone .",
      "you have shown a lot of strength by reaching out ."}},
    {"providing suggestions",
     {"maybe you could try writing down your thoughts each evening .",
      "perhaps talking to someone you trust could help .",
      "you might try taking small breaks during the day ."}},
    {"information",
     {"many people experience this and it often improves with time .",
      "research shows regular sleep can ease stress a lot .",
      "counselling services are often free for students ."}},
    {"others",
     {"i am glad we are talking about this .",
      "thank you for trusting me with this .",
      "let us keep talking whenever you need ."}},
}};

constexpr std::array<std::string_view, 3> kGenericSentences = {
    "let us work through this together .",
    "i want to help you with this .",
    "we can take this one step at a time ."};

template <std::size_t N>
std::string_view pick(const std::array<std::string_view, N>& pool,
                      RngStream& rng) {
  return pool[rng.below(N)];
}

std::string with_echo(std::string sentence, std::string_view last_seeker) {
  if (!last_seeker.empty()) {
    sentence += " you said ";
    sentence += last_seeker;
  }
  return sentence;
}

std::string synthetic_label(int id) {
  static const StrategySet base = StrategySet::emotional_support();
  if (static_cast<std::size_t>(id) < base.size()) return base.at(id).label;
  return "Strategy " + std::to_string(id + 1);
}

DialogueSample parse_record(const json& j, const StrategySet& strategies,
                            std::size_t line) {
  if (!j.is_object()) throw ParseError("record is not an object", line);
  DialogueSample s;
  s.id = j.contains("id") ? j.at("id").get<std::string>()
                          : "line-" + std::to_string(line);
  s.background = j.value("background", "");
  if (!j.contains("history") || !j.at("history").is_array()) {
    throw ParseError("missing history array", line);
  }
  for (const auto& t : j.at("history")) {
    s.history.push_back(
        {parse_speaker(t.at("role").get<std::string>()), t.at("text").get<std::string>()});
  }
  if (s.history.empty()) throw ParseError("empty history", line);
  if (!j.contains("strategy")) throw ParseError("missing strategy", line);
  if (!j.contains("utterance")) throw ParseError("missing utterance", line);
  s.gold_strategy = strategies.resolve(j.at("strategy").get<std::string>());
  s.gold_utterance = j.at("utterance").get<std::string>();
  if (j.contains("features")) s.features = j.at("features").get<std::vector<int>>();
  return s;
}

}  // namespace

std::string_view speaker_name(Speaker speaker) {
  return speaker == Speaker::kSeeker ? "seeker" : "supporter";
}

Speaker parse_speaker(std::string_view name) {
  const std::string key = normalize_label(name);
  if (key == "seeker") return Speaker::kSeeker;
  if (key == "supporter") return Speaker::kSupporter;
  throw Error("unknown speaker role: \"" + std::string(name) + "\"");
}

std::string_view DialogueSample::last_seeker_utterance() const {
  for (auto it = history.rbegin(); it != history.rend(); ++it) {
    if (it->speaker == Speaker::kSeeker) return it->text;
  }
  return {};
}

void SyntheticCorpusSpec::validate() const {
  if (strategy_count < 2) throw Error("strategy_count must be >= 2");
  if (sample_count <= 0) throw Error("sample_count must be > 0");
  if (!(feature_noise >= 0.0 && feature_noise <= 1.0)) {
    throw Error("feature_noise must lie in [0, 1]");
  }
  if (gold_distribution.empty()) return;
  if (gold_distribution.size() != static_cast<std::size_t>(strategy_count)) {
    throw Error("gold_distribution length must equal strategy_count");
  }
  double total = 0.0;
  for (double p : gold_distribution) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw Error("gold_distribution entries must be finite and >= 0");
    }
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error("gold_distribution must sum to 1");
  }
}

std::vector<DialogueSample> read_corpus(std::istream& in,
                                        const StrategySet& strategies) {
  std::vector<DialogueSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
    }
    try {
      out.push_back(parse_record(j, strategies, line_no));
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad record: ") + e.what(), line_no);
    }
  }
  if (out.empty()) throw ParseError("corpus is empty", 0);
  return out;
}

std::vector<DialogueSample> load_corpus(const std::filesystem::path& path,
                                        const StrategySet& strategies) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus: " + path.string());
  return read_corpus(in, strategies);
}

void write_corpus(std::ostream& out, std::span<const DialogueSample> samples) {
  for (const auto& s : samples) {
    json history = json::array();
    for (const auto& t : s.history) {
      history.push_back({{"role", speaker_name(t.speaker)}, {"text", t.text}});
    }
    json j = {{"id", s.id},
              {"background", s.background},
              {"history", std::move(history)},
              {"strategy", s.gold_strategy.label},
              {"utterance", s.gold_utterance}};
    if (!s.features.empty()) j["features"] = s.features;
    out << j.dump() << '\n';
  }
}

void write_corpus(const std::filesystem::path& path,
                  std::span<const DialogueSample> samples) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write corpus: " + path.string());
  write_corpus(out, samples);
}

Corpus generate_synthetic(const SyntheticCorpusSpec& spec) {
  spec.validate();
  std::vector<std::string> labels;
  for (int i = 0; i < spec.strategy_count; ++i) labels.push_back(synthetic_label(i));
  Corpus corpus{StrategySet(std::move(labels)), {}};

  std::vector<double> gold = spec.gold_distribution;
  if (gold.empty()) gold.assign(spec.strategy_count, 1.0 / spec.strategy_count);

  const auto count = static_cast<std::uint64_t>(spec.strategy_count);
  RngStream rng(derive_seed(spec.seed, "synthetic-corpus"));
  corpus.samples.reserve(static_cast<std::size_t>(spec.sample_count));
  for (int i = 0; i < spec.sample_count; ++i) {
    DialogueSample s;
    char id[32];
    std::snprintf(id, sizeof id, "syn-%06d", i);
    s.id = id;
    const int gold_id = static_cast<int>(rng.categorical(gold));
    s.gold_strategy = corpus.strategies.at(gold_id);

    int signal = gold_id;
    if (rng.uniform() < spec.feature_noise) {
      const int wrong = static_cast<int>(rng.below(count - 1));
      signal = wrong < gold_id ? wrong : wrong + 1;
    }
    s.features.push_back(signal);
    for (std::size_t slot = 1; slot < kSyntheticSlots; ++slot) {
      s.features.push_back(static_cast<int>(rng.below(count)));
    }

    s.background = "problem: " + std::string(pick(kProblems, rng)) +
                   " . emotion: " + std::string(pick(kEmotions, rng)) + " .";
    const auto exchanges = 1 + rng.below(3);
    for (std::uint64_t e = 0; e < exchanges; ++e) {
      s.history.push_back({Speaker::kSeeker, std::string(pick(kSeekerLines, rng))});
      if (e + 1 < exchanges) {
        s.history.push_back(
            {Speaker::kSupporter, std::string(pick(kSupporterLines, rng))});
      }
    }
    // Gold responses carry no strategy tag; the tag is only emitted by policies.
    s.gold_utterance = with_echo(canned_sentence(s.gold_strategy, rng.below(3)),
                                 s.last_seeker_utterance());
    corpus.samples.push_back(std::move(s));
  }
  return corpus;
}

std::vector<double> gold_strategy_distribution(
    std::span<const DialogueSample> corpus, const StrategySet& strategies) {
  if (corpus.empty()) throw Error("gold distribution of an empty corpus");
  std::vector<std::size_t> counts(strategies.size(), 0);
  for (const auto& s : corpus) {
    ++counts.at(static_cast<std::size_t>(s.gold_strategy.id));
  }
  std::vector<double> out(counts.size());
  const double n = static_cast<double>(corpus.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    out[i] = static_cast<double>(counts[i]) / n;
  }
  return out;
}

std::string canned_sentence(const Strategy& strategy, std::size_t variant) {
  const std::string key = normalize_label(strategy.label);
  for (const auto& c : kCanned) {
    if (c.key == key) return std::string(c.sentences[variant % c.sentences.size()]);
  }
  return std::string(kGenericSentences[variant % kGenericSentences.size()]);
}

std::string render_utterance(const Strategy& strategy,
                             std::string_view last_seeker, std::size_t variant) {
  return with_echo("[" + strategy.label + "] " + canned_sentence(strategy, variant),
                   last_seeker);
}

}  // namespace kbrl
