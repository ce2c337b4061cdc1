#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ivtf {

/// Shapes that cannot be combined (non-square, mismatched rows, ...).
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Symmetric input that is not symmetric enough.
class AsymmetryError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A covariance or Gram argument with a clearly negative eigenvalue.
class NotPsdError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a value that must be finite is NaN or infinite.
class NonFiniteError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Sample size below the smallest n for which the MSE envelope is stated.
class ThresholdNotMetError : public std::domain_error {
public:
    ThresholdNotMetError(std::size_t n, std::size_t n_min)
        : std::domain_error("sample size " + std::to_string(n) + " is below the required minimum " +
                            std::to_string(n_min)),
          n_min_(n_min) {}

    std::size_t n_min() const noexcept { return n_min_; }

private:
    std::size_t n_min_;
};

/// Embedded optimizer state rows are no longer replicated across columns.
class CorruptedStateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// CSV or config input that cannot be parsed. Row and column are 1-based; 0 means "not applicable".
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t row, std::size_t col)
        : std::runtime_error(what + " (row " + std::to_string(row) + ", column " + std::to_string(col) + ")"),
          row_(row),
          col_(col) {}

    std::size_t row() const noexcept { return row_; }
    std::size_t col() const noexcept { return col_; }

private:
    std::size_t row_;
    std::size_t col_;
};

}  // namespace ivtf
