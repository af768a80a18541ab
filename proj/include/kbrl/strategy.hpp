#ifndef KBRL_STRATEGY_HPP_
#define KBRL_STRATEGY_HPP_

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kbrl {

// Trim, case-fold (ASCII) and collapse internal whitespace runs to one space.
std::string normalize_label(std::string_view label);

struct Strategy {
  int id = 0;
  std::string label;

  friend bool operator==(const Strategy& a, const Strategy& b) {
    return a.id == b.id;
  }
};

// Ordered, finite strategy vocabulary. Ids are positions in the list.
class StrategySet {
 public:
  StrategySet() = default;
  // Throws kbrl::Error if fewer than two labels or a normalized duplicate.
  explicit StrategySet(std::vector<std::string> labels);

  // The eight support strategies used by emotional-support corpora.
  static StrategySet emotional_support();

  std::size_t size() const { return strategies_.size(); }
  const Strategy& at(int id) const;
  const std::vector<Strategy>& strategies() const { return strategies_; }
  std::vector<std::string> labels() const;

  std::optional<Strategy> find(std::string_view label) const;
  // Like find(), but throws UnknownStrategyError.
  const Strategy& resolve(std::string_view label) const;

  friend bool operator==(const StrategySet& a, const StrategySet& b) {
    return a.labels() == b.labels();
  }

 private:
  std::vector<Strategy> strategies_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace kbrl

#endif  // KBRL_STRATEGY_HPP_
