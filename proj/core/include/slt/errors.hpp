#pragma once

#include <stdexcept>
#include <string>

namespace slt {

// Error categories map 1:1 onto CLI exit codes (config=2, data=3, numeric=4).
enum class ErrorKind { config, data, numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(ErrorKind::config, msg) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(ErrorKind::data, msg) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(ErrorKind::numeric, msg) {}
};

struct CorpusTooSmall : DataError {
  explicit CorpusTooSmall(const std::string& msg) : DataError("CorpusTooSmall: " + msg) {}
};
struct UnknownId : DataError {
  explicit UnknownId(const std::string& msg) : DataError("UnknownId: " + msg) {}
};
struct LengthMismatch : DataError {
  explicit LengthMismatch(const std::string& msg) : DataError("LengthMismatch: " + msg) {}
};
struct EmptyCorpus : DataError {
  explicit EmptyCorpus(const std::string& msg) : DataError("EmptyCorpus: " + msg) {}
};
struct BadHeader : DataError {
  explicit BadHeader(const std::string& msg) : DataError("BadHeader: " + msg) {}
};
struct DuplicateId : DataError {
  explicit DuplicateId(const std::string& msg) : DataError("DuplicateId: " + msg) {}
};
struct MissingFile : DataError {
  explicit MissingFile(const std::string& msg) : DataError("MissingFile: " + msg) {}
};
struct BadMagic : DataError {
  explicit BadMagic(const std::string& msg) : DataError("BadMagic: " + msg) {}
};
struct TruncatedFile : DataError {
  explicit TruncatedFile(const std::string& msg) : DataError("TruncatedFile: " + msg) {}
};
struct NonFiniteValue : DataError {
  explicit NonFiniteValue(const std::string& msg) : DataError("NonFiniteValue: " + msg) {}
};
struct EmptyDataset : DataError {
  explicit EmptyDataset(const std::string& msg) : DataError("EmptyDataset: " + msg) {}
};
struct IoError : DataError {
  explicit IoError(const std::string& msg) : DataError("IoError: " + msg) {}
};
struct BadTarget : DataError {
  explicit BadTarget(const std::string& msg) : DataError("BadTarget: " + msg) {}
};
struct NoValidations : DataError {
  explicit NoValidations(const std::string& msg) : DataError("NoValidations: " + msg) {}
};

struct InvalidConfig : ConfigError {
  explicit InvalidConfig(const std::string& msg) : ConfigError("InvalidConfig: " + msg) {}
};

struct ShapeMismatch : NumericError {
  explicit ShapeMismatch(const std::string& msg) : NumericError("ShapeMismatch: " + msg) {}
};
struct FeatureDimMismatch : NumericError {
  explicit FeatureDimMismatch(const std::string& msg) : NumericError("FeatureDimMismatch: " + msg) {}
};
struct SequenceTooLong : NumericError {
  explicit SequenceTooLong(const std::string& msg) : NumericError("SequenceTooLong: " + msg) {}
};
struct NotScalar : NumericError {
  explicit NotScalar(const std::string& msg) : NumericError("NotScalar: " + msg) {}
};
struct NonFiniteLoss : NumericError {
  explicit NonFiniteLoss(const std::string& msg) : NumericError("NonFiniteLoss: " + msg) {}
};

}  // namespace slt
