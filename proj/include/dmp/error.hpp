#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dmp {

/// Failure categories surfaced by the library. The CLI prints them verbatim
/// in its machine-readable error lines.
enum class ErrorKind {
  ZeroExposure,
  InvalidSplit,
  InvalidRate,
  InvalidParams,
  DomainError,
  IndexOutOfRange,
  TooShort,
  NonFinite,
  LayoutMismatch,
  InitializationFailure,
  TooFewDraws,
  ConfigMismatch,
  MissingExposure,
  EmptyDraws,
  DegenerateMatrix,
  ZeroDeaths,
  NonPositiveInput,
  RankDeficient,
  EmptyIndexSet,
  ParseError,
  MissingCell,
  UnknownCause,
  IoError,
  ConfigError,
};

constexpr std::string_view to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::ZeroExposure: return "ZeroExposure";
    case ErrorKind::InvalidSplit: return "InvalidSplit";
    case ErrorKind::InvalidRate: return "InvalidRate";
    case ErrorKind::InvalidParams: return "InvalidParams";
    case ErrorKind::DomainError: return "DomainError";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::TooShort: return "TooShort";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::LayoutMismatch: return "LayoutMismatch";
    case ErrorKind::InitializationFailure: return "InitializationFailure";
    case ErrorKind::TooFewDraws: return "TooFewDraws";
    case ErrorKind::ConfigMismatch: return "ConfigMismatch";
    case ErrorKind::MissingExposure: return "MissingExposure";
    case ErrorKind::EmptyDraws: return "EmptyDraws";
    case ErrorKind::DegenerateMatrix: return "DegenerateMatrix";
    case ErrorKind::ZeroDeaths: return "ZeroDeaths";
    case ErrorKind::NonPositiveInput: return "NonPositiveInput";
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::EmptyIndexSet: return "EmptyIndexSet";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::MissingCell: return "MissingCell";
    case ErrorKind::UnknownCause: return "UnknownCause";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace dmp
