#pragma once

#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace srb {

enum class ErrorCode {
  MissingColumn,
  NonPositiveSrb,
  UnknownSourceType,
  UnknownCountry,
  MissingTfr,
  MissingBirths,
  ZeroTotalVariance,
  MissingTheta,
  MissingFixedInput,
  RhoOutOfRange,
  NoData,
  NonFiniteDensity,
  SupportViolation,
  TooFewChains,
  ZeroVariance,
  NumericalOverflow,
  DegenerateObjective,
  MissingPsi,
  MissingFit,
  DrawCountMismatch,
  NonPositiveTheta,
  EmptyTest,
  NoTestRows,
  MissingYear,
  MissingHyperDraws,
  SpecOutOfSupport,
  MissingPrerequisite,
  InvalidArgument,
  Io,
  Parse,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::NonPositiveSrb: return "NonPositiveSrb";
    case ErrorCode::UnknownSourceType: return "UnknownSourceType";
    case ErrorCode::UnknownCountry: return "UnknownCountry";
    case ErrorCode::MissingTfr: return "MissingTfr";
    case ErrorCode::MissingBirths: return "MissingBirths";
    case ErrorCode::ZeroTotalVariance: return "ZeroTotalVariance";
    case ErrorCode::MissingTheta: return "MissingTheta";
    case ErrorCode::MissingFixedInput: return "MissingFixedInput";
    case ErrorCode::RhoOutOfRange: return "RhoOutOfRange";
    case ErrorCode::NoData: return "NoData";
    case ErrorCode::NonFiniteDensity: return "NonFiniteDensity";
    case ErrorCode::SupportViolation: return "SupportViolation";
    case ErrorCode::TooFewChains: return "TooFewChains";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::NumericalOverflow: return "NumericalOverflow";
    case ErrorCode::DegenerateObjective: return "DegenerateObjective";
    case ErrorCode::MissingPsi: return "MissingPsi";
    case ErrorCode::MissingFit: return "MissingFit";
    case ErrorCode::DrawCountMismatch: return "DrawCountMismatch";
    case ErrorCode::NonPositiveTheta: return "NonPositiveTheta";
    case ErrorCode::EmptyTest: return "EmptyTest";
    case ErrorCode::NoTestRows: return "NoTestRows";
    case ErrorCode::MissingYear: return "MissingYear";
    case ErrorCode::MissingHyperDraws: return "MissingHyperDraws";
    case ErrorCode::SpecOutOfSupport: return "SpecOutOfSupport";
    case ErrorCode::MissingPrerequisite: return "MissingPrerequisite";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Parse: return "Parse";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Warnings go to stderr unless a sink is installed (tests capture them).
inline std::function<void(std::string_view)>& warning_sink() {
  static std::function<void(std::string_view)> sink;
  return sink;
}

inline void warn(std::string_view message) {
  if (auto& sink = warning_sink()) {
    sink(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

}  // namespace srb
