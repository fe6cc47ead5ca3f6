#pragma once

#include <stdexcept>
#include <string>

namespace fader {

// Bad configuration: unreadable vocabulary, unknown profile, invalid flags.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller violated an operation's precondition.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class LookupError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class TemplateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed persisted artifact. line() is 1-based, 0 when not line-oriented.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line == 0 ? what
                                     : "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Transport-level failure talking to an LLM backend.
class BackendError : public std::runtime_error {
 public:
  BackendError(const std::string& what, bool retryable, int attempts = 1)
      : std::runtime_error(what), retryable_(retryable), attempts_(attempts) {}

  bool retryable() const noexcept { return retryable_; }
  int attempts() const noexcept { return attempts_; }

 private:
  bool retryable_;
  int attempts_;
};

class ProviderError : public std::runtime_error {
 public:
  ProviderError(const std::string& what, std::size_t batch_index)
      : std::runtime_error("embedding batch " + std::to_string(batch_index) + ": " + what),
        batch_index_(batch_index) {}

  std::size_t batch_index() const noexcept { return batch_index_; }

 private:
  std::size_t batch_index_;
};

class UndefinedSimilarityError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A pipeline stage ran before the stage that produces its input.
class PrerequisiteError : public std::runtime_error {
 public:
  PrerequisiteError(const std::string& what, std::string command)
      : std::runtime_error(what), command_(std::move(command)) {}

  const std::string& command() const noexcept { return command_; }

 private:
  std::string command_;
};

// An upstream artifact changed since the stage that produced it recorded it.
class StaleArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fader
