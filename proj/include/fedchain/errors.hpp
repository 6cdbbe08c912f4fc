#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace fedchain {

// Named error carried to the CLI boundary; the name doubles as the process
// exit diagnostic.
class ModuleError : public std::runtime_error {
 public:
  ModuleError(std::string name, const std::string& message)
      : std::runtime_error(name + ": " + message), name_(std::move(name)) {}

  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

struct ShapeMismatchError : ModuleError {
  explicit ShapeMismatchError(const std::string& msg) : ModuleError("ShapeMismatch", msg) {}
};

struct EmptyBatchError : ModuleError {
  explicit EmptyBatchError(const std::string& msg) : ModuleError("EmptyBatch", msg) {}
};

struct EmptyDatasetError : ModuleError {
  explicit EmptyDatasetError(const std::string& msg) : ModuleError("EmptyDataset", msg) {}
};

struct IoError : ModuleError {
  explicit IoError(const std::string& msg) : ModuleError("IoError", msg) {}
};

}  // namespace fedchain
