#pragma once

#include <stdexcept>

namespace bsrn {

// Tensor shapes that violate an operation's contract.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid model or run configuration (bad recursion split, unknown scale, ...).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input files (images, checkpoints).
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Metric input unusable (crop smaller than the filter window, size mismatch).
struct MetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dataset cannot satisfy a sampling request (patch larger than an image).
struct SamplingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace bsrn
