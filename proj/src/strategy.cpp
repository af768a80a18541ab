#include "kbrl/strategy.hpp"

#include <cctype>

#include "kbrl/error.hpp"

namespace kbrl {

std::string normalize_label(std::string_view label) {
  std::string out;
  out.reserve(label.size());
  bool pending_space = false;
  for (unsigned char c : label) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

StrategySet::StrategySet(std::vector<std::string> labels) {
  if (labels.size() < 2) {
    throw Error("strategy set needs at least two strategies");
  }
  strategies_.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::string key = normalize_label(labels[i]);
    if (key.empty()) throw Error("empty strategy label");
    const int id = static_cast<int>(i);
    if (!index_.emplace(key, id).second) {
      throw Error("duplicate strategy label: \"" + labels[i] + "\"");
    }
    strategies_.push_back({id, std::move(labels[i])});
  }
}

StrategySet StrategySet::emotional_support() {
  return StrategySet({"Question", "Restatement or Paraphrasing",
                      "Reflection of Feelings", "Self-disclosure",
                      "Affirmation and Reassurance", "Providing Suggestions",
                      "Information", "Others"});
}

const Strategy& StrategySet::at(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= strategies_.size()) {
    throw Error("strategy id out of range: " + std::to_string(id));
  }
  return strategies_[static_cast<std::size_t>(id)];
}

std::vector<std::string> StrategySet::labels() const {
  std::vector<std::string> out;
  out.reserve(strategies_.size());
  for (const auto& s : strategies_) out.push_back(s.label);
  return out;
}

std::optional<Strategy> StrategySet::find(std::string_view label) const {
  auto it = index_.find(normalize_label(label));
  if (it == index_.end()) return std::nullopt;
  return strategies_[static_cast<std::size_t>(it->second)];
}

const Strategy& StrategySet::resolve(std::string_view label) const {
  auto it = index_.find(normalize_label(label));
  if (it == index_.end()) throw UnknownStrategyError(std::string(label));
  return strategies_[static_cast<std::size_t>(it->second)];
}

}  // namespace kbrl
