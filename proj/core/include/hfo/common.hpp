#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hfo {

// Bad user input: malformed files, broken references, invalid configuration.
// The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Internal failure at run time (I/O, numerical divergence). Exit code 2.
class PipelineError : public std::runtime_error {
 public:
  explicit PipelineError(const std::string& what) : std::runtime_error(what) {}
};

// Number of worker threads used inside heavy kernels (conv/matmul/scalograms).
// 1 == fully serial. Results are deterministic for any fixed value.
void set_num_threads(int n);
int num_threads();

}  // namespace hfo
