#pragma once

#include <stdexcept>
#include <string>

namespace koopcon {

enum class ErrorKind {
  dimension,
  format,
  length,
  consistency,
  data,
  config,
  numeric,
  contract,
  compatibility,
  checksum,
  io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension error";
    case ErrorKind::format: return "format error";
    case ErrorKind::length: return "length error";
    case ErrorKind::consistency: return "consistency error";
    case ErrorKind::data: return "data error";
    case ErrorKind::config: return "config error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::contract: return "contract error";
    case ErrorKind::compatibility: return "compatibility error";
    case ErrorKind::checksum: return "checksum error";
    case ErrorKind::io: return "io error";
  }
  return "error";
}

// Every failure the library reports carries a kind so callers (the CLI in
// particular) can map it onto an exit category without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define KOOPCON_DEFINE_ERROR(Name, Kind)                                  \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

KOOPCON_DEFINE_ERROR(DimensionError, dimension)
KOOPCON_DEFINE_ERROR(FormatError, format)
KOOPCON_DEFINE_ERROR(LengthError, length)
KOOPCON_DEFINE_ERROR(ConsistencyError, consistency)
KOOPCON_DEFINE_ERROR(DataError, data)
KOOPCON_DEFINE_ERROR(ConfigError, config)
KOOPCON_DEFINE_ERROR(NumericError, numeric)
KOOPCON_DEFINE_ERROR(ContractError, contract)
KOOPCON_DEFINE_ERROR(CompatibilityError, compatibility)
KOOPCON_DEFINE_ERROR(ChecksumError, checksum)
KOOPCON_DEFINE_ERROR(IoError, io)

#undef KOOPCON_DEFINE_ERROR

}  // namespace koopcon
