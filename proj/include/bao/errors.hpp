#pragma once

#include <stdexcept>
#include <string>

namespace bao {

// Malformed input file (bad cell, wrong column count, missing header).
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Data violates a dataset invariant (non-binary treatment, broken monotone
// censoring, missing outcome for an uncensored unit).
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// A balance/feature specification references columns or times that do not
// exist, or is internally inconsistent.
struct SpecError : std::runtime_error {
  explicit SpecError(const std::string& msg) : std::runtime_error(msg) {}
};

// The data lacks the structure an operation needs (empty stratum on a
// realized prefix, missing projection fit, length mismatches).
struct StructuralError : std::runtime_error {
  explicit StructuralError(const std::string& msg) : std::runtime_error(msg) {}
};

// A regression could not be fit (singular information matrix, rank
// deficiency in an MSM design).
struct FitError : std::runtime_error {
  explicit FitError(const std::string& msg) : std::runtime_error(msg) {}
};

// Tolerance tuning failed outright (every candidate infeasible too often).
struct TuningError : std::runtime_error {
  explicit TuningError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace bao
