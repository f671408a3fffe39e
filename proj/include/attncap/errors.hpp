#pragma once

#include <stdexcept>
#include <string>

namespace attncap {

// Base of every error the library throws. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Shape or extent disagreement between operands.
class DimensionError : public Error {
  public:
    using Error::Error;
};

// Argument outside a function's mathematical domain (e.g. log of a nonpositive entry).
class DomainError : public Error {
  public:
    using Error::Error;
};

// Out-of-range token id or row index.
class IndexError : public Error {
  public:
    using Error::Error;
};

// Violated precondition that is not a shape problem (empty loss, zero fan, ...).
class ContractError : public Error {
  public:
    using Error::Error;
};

// Malformed or unsupported file contents (checkpoint, PPM/PGM, manifest).
class FormatError : public Error {
  public:
    using Error::Error;
};

// I/O failures: unreadable or unwritable paths.
class DataError : public Error {
  public:
    using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
  public:
    using Error::Error;
};

} // namespace attncap
