#pragma once

#include <stdexcept>
#include <string>

namespace cmwm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or model dimension mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Input data or configuration violates a documented invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

// Raised by embedding providers. Network failures are retriable.
class ProviderError : public Error {
 public:
  ProviderError(const std::string& what, bool retriable)
      : Error(what), retriable_(retriable) {}
  bool retriable() const noexcept { return retriable_; }

 private:
  bool retriable_;
};

// Training produced a non-finite loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace cmwm
