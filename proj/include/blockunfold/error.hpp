#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace blockunfold {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an iteration produces non-finite or diverging values.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, long iteration)
      : Error(what + " (iteration " + std::to_string(iteration) + ")"), iteration_(iteration) {}

  long iteration() const noexcept { return iteration_; }

 private:
  long iteration_;
};

/// Short %g rendering for error messages; std::to_string prints tiny residuals as 0.000000.
inline std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace blockunfold
