#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace votacast {

enum class ErrorKind {
  invalid_input,
  out_of_simplex,
  no_eligible_party,
  configuration,
  init,
  insufficient_chains,
  singular_design,
  lookup,
  numerical,
  model_misconfiguration,
  missing_census,
  undefined_weight,
  alignment,
  validation,
  io,
  dependency,
  diagnostic,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_input: return "invalid input";
    case ErrorKind::out_of_simplex: return "out of simplex";
    case ErrorKind::no_eligible_party: return "no eligible party";
    case ErrorKind::configuration: return "configuration";
    case ErrorKind::init: return "initialization";
    case ErrorKind::insufficient_chains: return "insufficient chains";
    case ErrorKind::singular_design: return "singular design";
    case ErrorKind::lookup: return "lookup";
    case ErrorKind::numerical: return "numerical";
    case ErrorKind::model_misconfiguration: return "model misconfiguration";
    case ErrorKind::missing_census: return "missing census";
    case ErrorKind::undefined_weight: return "undefined weight";
    case ErrorKind::alignment: return "alignment";
    case ErrorKind::validation: return "validation";
    case ErrorKind::io: return "io";
    case ErrorKind::dependency: return "dependency";
    case ErrorKind::diagnostic: return "diagnostic";
  }
  return "unknown";
}

/// Every failure raised by the library carries a kind so callers (and the
/// CLI exit-code mapping) can branch on it without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace votacast
