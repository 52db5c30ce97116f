#include "swimvg/error.hpp"

namespace swimvg {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingKey: return "MissingKey";
    case ErrorKind::InvalidValue: return "InvalidValue";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::VocabOverflow: return "VocabOverflow";
    case ErrorKind::ScheduleMismatch: return "ScheduleMismatch";
    case ErrorKind::EmptyContext: return "EmptyContext";
    case ErrorKind::DegenerateBox: return "DegenerateBox";
    case ErrorKind::EmptyList: return "EmptyList";
    case ErrorKind::GenerationExhausted: return "GenerationExhausted";
    case ErrorKind::UntaggedParameter: return "UntaggedParameter";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::CorruptFile: return "CorruptFile";
    case ErrorKind::ConfigMismatch: return "ConfigMismatch";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

namespace {

std::string format_what(ErrorKind kind, const std::string& subject, const std::string& message) {
  std::string out{to_string(kind)};
  out += "(";
  out += subject;
  out += "): ";
  out += message;
  return out;
}

}  // namespace

Error::Error(ErrorKind kind, std::string subject, const std::string& message)
    : std::runtime_error(format_what(kind, subject, message)), kind_(kind), subject_(std::move(subject)) {}

}  // namespace swimvg
