#pragma once

#include <stdexcept>
#include <string>

namespace defo {

/// Shape or rank disagreement between operands.
struct dimension_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf produced or consumed, or a degenerate numeric configuration.
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct degenerate_vector_error : numeric_error {
  using numeric_error::numeric_error;
};

/// Malformed, truncated, corrupted or mismatched persisted artifact.
struct format_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct checksum_error : format_error {
  using format_error::format_error;
};

struct version_error : format_error {
  using format_error::format_error;
};

/// A precondition on user-supplied configuration or data failed.
struct config_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Filesystem failure: missing, unreadable or unwritable path.
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace defo
