#pragma once

#include <stdexcept>
#include <string>

namespace svmix {

// Error taxonomy mirrored by the CLI exit codes:
//   contract/dimension/parameter violations -> 1
//   configuration problems                  -> 2
//   file IO / format problems               -> 3
enum class ErrorKind { Contract, Config, Io };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& msg)
      : Error(ErrorKind::Contract, msg) {}
};

// Shape mismatches; message names both offending shapes.
class DimensionError : public ContractError {
 public:
  explicit DimensionError(const std::string& msg) : ContractError(msg) {}
};

// Invalid numeric arguments (e.g. alpha <= 0, lambda outside (0,1)).
class ParamError : public ContractError {
 public:
  explicit ParamError(const std::string& msg) : ContractError(msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg)
      : Error(ErrorKind::Config, msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(ErrorKind::Io, msg) {}
};

// Corrupt on-disk artifacts; message carries the byte offset of the problem.
class FormatError : public IoError {
 public:
  explicit FormatError(const std::string& msg) : IoError(msg) {}
};

}  // namespace svmix
