#pragma once

#include <stdexcept>
#include <string>

namespace icl {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file (dataset line, template file, cache entry, ...).
class ParseError : public Error {
public:
    using Error::Error;
};

/// A label string or id that is not part of the task's label space.
class LabelError : public Error {
public:
    using Error::Error;
};

/// Two verbalizers map to the same first scoring token under a backend.
class LabelCollisionError : public Error {
public:
    using Error::Error;
};

/// Template placeholder problems: missing field, duplicate slot, no {label}.
class TemplateError : public Error {
public:
    using Error::Error;
};

/// Invalid or inconsistent run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Backend unreachable or persistent non-2xx after retries.
class TransportError : public Error {
public:
    using Error::Error;
};

/// A label first-token was missing from the returned logprob set.
class DepthError : public Error {
public:
    using Error::Error;
};

/// Cache corruption or an offline miss.
class CacheError : public Error {
public:
    using Error::Error;
};

/// An operation required state (e.g. calibrated entropies) that is absent.
class StateError : public Error {
public:
    using Error::Error;
};

/// Vector length / label-space mismatch.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Requested sample larger than the available population.
class SizeError : public Error {
public:
    using Error::Error;
};

/// Missing gold label or otherwise unusable evaluation data.
class DataError : public Error {
public:
    using Error::Error;
};

/// A pattern slot could not be filled from the remaining pool.
class PoolCoverageError : public Error {
public:
    using Error::Error;
};

}  // namespace icl
