#pragma once

#include <stdexcept>
#include <string>

namespace mtfc {

// Error families. Each maps onto one CLI exit code (see exit_code_for).

/// Missing or unreadable files.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input documents that do not match the expected schema (missing columns,
/// bad config fields, checkpoint/config mismatches, corrupt blobs).
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (shape mismatch, out-of-range
/// label index, provider returning the wrong dimension).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Input that is well-formed but carries nothing to compute on
/// (all-masked rows, all-zero confusion matrix, all-NEI gold labels).
class DegenerateInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A loader produced zero surviving records.
class EmptyDatasetError : public DegenerateInputError {
 public:
  using DegenerateInputError::DegenerateInputError;
};

/// Non-finite values during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ExitCode : int {
  kOk = 0,
  kInput = 2,
  kRuntime = 3,
  kDegenerate = 4,
};

}  // namespace mtfc
