#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace labelclean {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration: dimension mismatch, bad label, bad option value.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed CSV / JSON input. Row and column are 1-based; 0 means unknown.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t row, std::string column)
        : Error(what), row_(row), column_(std::move(column)) {}

    std::size_t row() const noexcept { return row_; }
    const std::string& column() const noexcept { return column_; }

private:
    std::size_t row_;
    std::string column_;
};

/// Training produced a non-finite loss.
class NumericDivergence : public Error {
public:
    NumericDivergence(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

/// The requested operation would build a matrix larger than the configured cap.
class SizeError : public Error {
public:
    using Error::Error;
};

/// LISSA recursion produced non-finite values.
class LissaDiverged : public Error {
public:
    LissaDiverged(const std::string& what, int iteration) : Error(what), iteration_(iteration) {}
    int iteration() const noexcept { return iteration_; }

private:
    int iteration_;
};

/// No candidate counter-example was available for scoring.
class NoCandidates : public Error {
public:
    using Error::Error;
};

/// An interactive session was driven out of order.
class StateError : public Error {
public:
    enum class Kind { DecisionPending, StreamExhausted, StaleQuery, NoPendingQuery };
    StateError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

}  // namespace labelclean
