#ifndef KBRL_ERROR_HPP_
#define KBRL_ERROR_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kbrl {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed corpus/records file. line() is 1-based, 0 when not line-specific.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class UnknownStrategyError : public Error {
 public:
  explicit UnknownStrategyError(std::string label)
      : Error("unknown strategy label: \"" + label + "\""),
        label_(std::move(label)) {}
  const std::string& label() const { return label_; }

 private:
  std::string label_;
};

// Non-finite loss or ratio during optimization.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long step)
      : Error(what + " at step " + std::to_string(step)), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

// Wraps an error raised inside a pipeline stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("[" + stage + "] " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace kbrl

#endif  // KBRL_ERROR_HPP_
