#pragma once

#include <stdexcept>
#include <string>

namespace kvmn {

// Failure categories. The C API maps each one onto a status code.
enum class ErrorKind {
  Shape,     // operand dimensions disagree
  Numeric,   // NaN/Inf produced or consumed
  State,     // object used out of protocol order
  Contract,  // caller violated a documented precondition
  Data,      // malformed input file or record
  Usage,     // bad configuration or command-line input
  Io,        // filesystem failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define KVMN_DEFINE_ERROR(Name, Kind)                                        \
  class Name : public Error {                                                \
   public:                                                                   \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

KVMN_DEFINE_ERROR(ShapeError, Shape)
KVMN_DEFINE_ERROR(NumericError, Numeric)
KVMN_DEFINE_ERROR(StateError, State)
KVMN_DEFINE_ERROR(ContractError, Contract)
KVMN_DEFINE_ERROR(DataError, Data)
KVMN_DEFINE_ERROR(UsageError, Usage)
KVMN_DEFINE_ERROR(IoError, Io)

#undef KVMN_DEFINE_ERROR

}  // namespace kvmn
