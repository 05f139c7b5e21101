#pragma once

#include <stdexcept>
#include <string>

namespace p4net {

/// Base class for all p4net errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Operand shapes do not line up (vector lengths, matrix dims, channel counts).
class ShapeError : public Error {
public:
  using Error::Error;
};

/// Input is outside the numeric domain of the operation (NaN/Inf, bad index).
class DomainError : public Error {
public:
  using Error::Error;
};

/// A parameter violates the operation's contract (negative sigma, H > m-1, ...).
class ParamError : public Error {
public:
  using Error::Error;
};

/// Malformed bytes or text while decoding a file or message.
class ParseError : public Error {
public:
  using Error::Error;
};

/// Invalid or incomplete experiment configuration; message names the field.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Privacy budget violation: an exhausted ledger was charged.
class BudgetError : public Error {
public:
  using Error::Error;
};

/// Filesystem failure; message carries the path.
class IoError : public Error {
public:
  using Error::Error;
};

}  // namespace p4net
