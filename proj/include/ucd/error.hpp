#pragma once

#include <stdexcept>
#include <string>

namespace ucd {

// Base for every error raised by the library. `kind()` is a stable,
// machine-readable tag used by the CLI error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class GeometryError : public Error {
 public:
  explicit GeometryError(const std::string& message) : Error("geometry", message) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& message) : Error("parse", message) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& message) : Error("data", message) {}
};

class MetricError : public Error {
 public:
  explicit MetricError(const std::string& message) : Error("metric", message) {}
};

class FitError : public Error {
 public:
  explicit FitError(const std::string& message) : Error("fit", message) {}
};

class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& message) : Error("schema", message) {}
};

class IoError : public Error {
 public:
  IoError(const std::string& message, std::string path)
      : Error("io", message), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace ucd
