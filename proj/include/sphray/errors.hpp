#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sphray {

/// Base class for all errors thrown by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad user-facing configuration (flags, config file, parameter ranges).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// File parsing / serialization problems.
class IoError : public Error {
public:
    using Error::Error;
};

/// A refined quadrature estimate failed to meet its relative tolerance.
class QuadratureError : public Error {
public:
    using Error::Error;
};

/// Orthogonalization collapsed: some basis function lost far more norm than
/// its degree warrants, i.e. the knots are (nearly) coincident.
class DegenerateKnotError : public Error {
public:
    using Error::Error;
};

/// Knot optimization exhausted its iteration budget. Carries the best
/// candidate seen so callers can decide whether it is usable.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& msg, std::vector<double> best_knots, double best_error)
        : Error(msg), best_knots(std::move(best_knots)), best_error(best_error) {}

    std::vector<double> best_knots;
    double best_error;
};

/// A checked integer operation left the representable range. Never wraps.
class OverflowError : public Error {
public:
    explicit OverflowError(const std::string& msg,
                           std::int64_t particle_index = -1,
                           std::uint64_t ray_id = 0)
        : Error(msg), particle_index(particle_index), ray_id(ray_id) {}

    std::int64_t particle_index;
    std::uint64_t ray_id;
};

/// Internal numeric invariant violated (e.g. a squared error far below zero).
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace sphray
