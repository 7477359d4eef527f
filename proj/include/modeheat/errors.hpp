#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace modeheat {

enum class ErrorCode {
  ConfigError,
  UnknownLabel,
  UnknownPair,
  NonPositiveStiffness,
  UnstableFeedback,
  ZeroDamping,
  NotHurwitz,
  IllConditioned,
  StepTooLarge,
  NonFiniteState,
  FingerprintMismatch,
  RecordTooShort,
  BandOutOfRange,
  DegenerateBand,
  UnresolvedSplitting,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::UnknownPair: return "UnknownPair";
    case ErrorCode::NonPositiveStiffness: return "NonPositiveStiffness";
    case ErrorCode::UnstableFeedback: return "UnstableFeedback";
    case ErrorCode::ZeroDamping: return "ZeroDamping";
    case ErrorCode::NotHurwitz: return "NotHurwitz";
    case ErrorCode::IllConditioned: return "IllConditioned";
    case ErrorCode::StepTooLarge: return "StepTooLarge";
    case ErrorCode::NonFiniteState: return "NonFiniteState";
    case ErrorCode::FingerprintMismatch: return "FingerprintMismatch";
    case ErrorCode::RecordTooShort: return "RecordTooShort";
    case ErrorCode::BandOutOfRange: return "BandOutOfRange";
    case ErrorCode::DegenerateBand: return "DegenerateBand";
    case ErrorCode::UnresolvedSplitting: return "UnresolvedSplitting";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so the
/// CLI can map it to an exit status and a `code=` prefix.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  /// Config-type errors map to exit 2, everything else is numerical (exit 3).
  bool is_config_error() const noexcept {
    return code_ == ErrorCode::ConfigError || code_ == ErrorCode::UnknownLabel ||
           code_ == ErrorCode::UnknownPair || code_ == ErrorCode::UnstableFeedback ||
           code_ == ErrorCode::NonPositiveStiffness || code_ == ErrorCode::StepTooLarge;
  }

 private:
  ErrorCode code_;
};

}  // namespace modeheat
