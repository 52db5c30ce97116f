#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace swimvg {

enum class ErrorKind {
  MissingKey,
  InvalidValue,
  ShapeMismatch,
  VocabOverflow,
  ScheduleMismatch,
  EmptyContext,
  DegenerateBox,
  EmptyList,
  GenerationExhausted,
  UntaggedParameter,
  NonFiniteLoss,
  EmptyDataset,
  VersionMismatch,
  CorruptFile,
  ConfigMismatch,
  Io,
};

std::string_view to_string(ErrorKind kind);

// Every failure in the library surfaces as this exception. `subject` names the
// offending key / tensor / file so callers can report it without parsing text.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string subject, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& subject() const noexcept { return subject_; }

 private:
  ErrorKind kind_;
  std::string subject_;
};

}  // namespace swimvg
