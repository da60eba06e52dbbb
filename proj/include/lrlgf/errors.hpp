#pragma once

#include <stdexcept>
#include <string>

namespace lrlgf {

// Violated precondition (dimension mismatch, invalid argument): a caller bug.
class contract_violation : public std::logic_error {
 public:
  explicit contract_violation(const std::string& what) : std::logic_error(what) {}
};

// A factorization or inversion failed beyond recovery.
class numerical_error : public std::runtime_error {
 public:
  explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

// Optimization diverged (non-finite loss).
class training_error : public std::runtime_error {
 public:
  explicit training_error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed input file (bad magic, truncated payload, missing file).
class parse_error : public std::runtime_error {
 public:
  explicit parse_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace lrlgf
