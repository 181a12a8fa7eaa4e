#pragma once

#include <stdexcept>
#include <string>

namespace cpn {

// Malformed or unreadable input: files, configs, annotations, checkpoints.
struct data_error : std::runtime_error {
  explicit data_error(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure: non-finite values where finite ones are required,
// degenerate geometry, diverged optimization.
struct numerical_error : std::runtime_error {
  explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cpn
