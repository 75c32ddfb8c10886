#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace embalign {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid model, corpus, attack or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A violated precondition on an operation's arguments.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Token id outside the vocabulary.
class VocabularyError : public Error {
 public:
  using Error::Error;
};

// Normalizing a zero (or non-finite) vector.
class DegenerateEmbeddingError : public Error {
 public:
  using Error::Error;
};

// Non-finite gradient during an attack step.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::size_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

// Training loss became non-finite.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::size_t epoch)
      : Error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

// Malformed or truncated file. Offset is the byte position where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace embalign
