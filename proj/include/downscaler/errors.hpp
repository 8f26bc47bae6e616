#pragma once

#include <stdexcept>
#include <string>

namespace downscaler {

/// Base class of every error raised by the library. `kind()` is a stable
/// machine-readable tag that the CLI prints on stderr.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    [[nodiscard]] const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define DOWNSCALER_ERROR(Name)                                                  \
    class Name : public Error {                                                 \
    public:                                                                     \
        explicit Name(const std::string& message) : Error(#Name, message) {}   \
    }

// core data
DOWNSCALER_ERROR(OutOfDomain);
DOWNSCALER_ERROR(DomainError);
DOWNSCALER_ERROR(DuplicateRecord);
DOWNSCALER_ERROR(MissingGridOutput);
DOWNSCALER_ERROR(MissingFile);
DOWNSCALER_ERROR(ConfigError);

// numerics
DOWNSCALER_ERROR(NotPositiveDefinite);
DOWNSCALER_ERROR(DimensionMismatch);
DOWNSCALER_ERROR(UnsupportedVariant);
DOWNSCALER_ERROR(NonFiniteLikelihood);
DOWNSCALER_ERROR(NonStationary);
DOWNSCALER_ERROR(SingularSystem);
DOWNSCALER_ERROR(RankDeficient);

// inference / prediction / evaluation
DOWNSCALER_ERROR(InsufficientDraws);
DOWNSCALER_ERROR(EmptyRegion);
DOWNSCALER_ERROR(DrawCountMismatch);
DOWNSCALER_ERROR(TooFewSites);
DOWNSCALER_ERROR(EmptyMask);
DOWNSCALER_ERROR(InvalidInterval);
DOWNSCALER_ERROR(InvalidSpec);

#undef DOWNSCALER_ERROR

/// Parse failure in an input file; carries the 1-based line number.
class ParseError : public Error {
public:
    ParseError(const std::string& path, std::size_t line, const std::string& what)
        : Error("ParseError", path + ":" + std::to_string(line) + ": " + what), line_(line) {}

    [[nodiscard]] std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace downscaler
