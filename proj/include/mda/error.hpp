#pragma once

#include <stdexcept>
#include <string>

namespace mda {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or image dimensions do not satisfy an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Archive payload is truncated, corrupted or does not match its manifest.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

class EmptyManifestError : public Error {
 public:
  using Error::Error;
};

/// Raised by the trainer when a loss term turns NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

#define MDA_REQUIRE(cond, ExcType, msg) \
  do {                                  \
    if (!(cond)) throw ExcType(msg);    \
  } while (0)

}  // namespace mda
