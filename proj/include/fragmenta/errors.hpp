#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fragmenta {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidGeometry : public Error {
public:
    using Error::Error;
};

class InvalidInput : public Error {
public:
    using Error::Error;
};

class DegenerateConfiguration : public Error {
public:
    using Error::Error;
};

class InvalidMask : public Error {
public:
    using Error::Error;
};

class InvalidCut : public Error {
public:
    using Error::Error;
};

/// Raised when endpoint sampling exhausts its rejection budget; the caller retries.
class GenerationRetry : public Error {
public:
    using Error::Error;
};

class NoModel : public Error {
public:
    using Error::Error;
};

class InvalidBatch : public Error {
public:
    using Error::Error;
};

class TrainingDiverged : public Error {
public:
    TrainingDiverged(const std::string& what, std::vector<double> trace = {})
        : Error(what), partial_trace(std::move(trace)) {}

    std::vector<double> partial_trace; ///< losses recorded before the abort
};

/// A metric with nothing to average over (e.g. no ground-truth pairs).
class UndefinedMetric : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent files on disk (bad magic, version, shapes, ids).
class DataError : public Error {
public:
    using Error::Error;
};

} // namespace fragmenta
