#ifndef PATTN_ERRORS_HPP
#define PATTN_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pattn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, std::size_t iterations)
      : Error(what + " (after " + std::to_string(iterations) + " sweeps)"),
        iterations_(iterations) {}
  std::size_t iterations() const noexcept { return iterations_; }

 private:
  std::size_t iterations_;
};

/// Non-finite values detected; the message names the offending tensor.
class NumericError : public Error {
 public:
  using Error::Error;
};

class DegenerateNormalizerError : public Error {
 public:
  using Error::Error;
};

class IllConditionedError : public Error {
 public:
  using Error::Error;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require_shape(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace detail
}  // namespace pattn

#endif  // PATTN_ERRORS_HPP
