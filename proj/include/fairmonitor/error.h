#pragma once

#include <stdexcept>
#include <string>

namespace fairmonitor {

/// Base class for every domain failure raised by the library.
///
/// The CLI maps anything derived from this to exit code 1; usage problems
/// are reported separately by the argument parser.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DatasetError : public Error {
public:
    using Error::Error;
};

class TemplateError : public Error {
public:
    using Error::Error;
};

class StatsError : public Error {
public:
    using Error::Error;
};

class StoreError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Raised when a model output cannot be turned into structured data.
/// The verbatim output is kept so callers can log or persist it.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::string raw)
        : Error(what), raw_(std::move(raw)) {}

    const std::string& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

} // namespace fairmonitor
