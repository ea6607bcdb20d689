#pragma once

#include <stdexcept>
#include <string>

namespace spinlab {

// Base of every error the library raises. Callers that only need a message
// can catch this; the CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Input outside the mathematical domain of an operation (coincident spins,
// nonpositive fit data, ...).
class DomainError : public Error {
public:
  using Error::Error;
};

// Request exceeds a configured resource cap (Hilbert-space size).
class ResourceError : public Error {
public:
  using Error::Error;
};

// Pulse-sequence timing that cannot be realized.
class TimingError : public Error {
public:
  using Error::Error;
};

// Floating-point failure or non-finite data inside a numerical routine.
class NumericalError : public Error {
public:
  using Error::Error;
};

// Spectral analysis could not find what it was asked to measure.
class AnalysisError : public Error {
public:
  enum class Reason { no_peak_in_window, center_peak_only, bad_input };

  AnalysisError(Reason reason, const std::string& what) : Error(what), reason_(reason) {}

  [[nodiscard]] Reason reason() const noexcept { return reason_; }

private:
  Reason reason_;
};

// Experiment configuration rejected by schema validation. `key_path` is a
// JSON-pointer-like path ("/sequence/tau_us").
class ConfigError : public Error {
public:
  ConfigError(std::string key_path, const std::string& what)
      : Error(key_path + ": " + what), key_path_(std::move(key_path)) {}

  [[nodiscard]] const std::string& key_path() const noexcept { return key_path_; }

private:
  std::string key_path_;
};

} // namespace spinlab
