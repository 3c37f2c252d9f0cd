#pragma once

#include <stdexcept>
#include <string>

namespace mixdiff {

// Base class for every error raised by the library. `kind()` is a short
// machine-readable tag used by the CLI's JSON error output.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

struct SchemaError : Error {
    explicit SchemaError(const std::string& w) : Error("schema", w) {}
};

struct LengthError : Error {
    explicit LengthError(const std::string& w) : Error("length", w) {}
};

struct DegenerateRangeError : Error {
    explicit DegenerateRangeError(const std::string& w) : Error("degenerate_range", w) {}
};

struct DecodeError : Error {
    explicit DecodeError(const std::string& w) : Error("decode", w) {}
};

struct ParseError : Error {
    ParseError(const std::string& w, long row = -1)
        : Error("parse", row >= 0 ? w + " (row " + std::to_string(row) + ")" : w), row_(row) {}
    long row() const noexcept { return row_; }

private:
    long row_;
};

struct ParameterError : Error {
    explicit ParameterError(const std::string& w) : Error("parameter", w) {}
};

struct StepError : Error {
    explicit StepError(const std::string& w) : Error("step", w) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& w) : Error("shape", w) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& w) : Error("numeric", w) {}
};

struct UsageError : Error {
    explicit UsageError(const std::string& w) : Error("usage", w) {}
};

struct DegenerateVarianceError : Error {
    explicit DegenerateVarianceError(const std::string& w) : Error("degenerate_variance", w) {}
};

struct NotApplicableError : Error {
    explicit NotApplicableError(const std::string& w) : Error("not_applicable", w) {}
};

struct IoError : Error {
    explicit IoError(const std::string& w) : Error("io", w) {}
};

}  // namespace mixdiff
