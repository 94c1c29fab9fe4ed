#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace semid {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class InsufficientDataError : public Error {
public:
    using Error::Error;
};

class DegenerateReferenceError : public Error {
public:
    explicit DegenerateReferenceError(std::size_t channel)
        : Error("reference channel " + std::to_string(channel) + " is constant; BFR is undefined"),
          channel_(channel) {}
    std::size_t channel() const noexcept { return channel_; }

private:
    std::size_t channel_;
};

/// A rollout produced a non-finite value. `index` is the first offending
/// time step (0-based).
class DivergedSimulationError : public Error {
public:
    explicit DivergedSimulationError(std::size_t index)
        : Error("simulation diverged at time step " + std::to_string(index)), index_(index) {}
    DivergedSimulationError(std::size_t index, const std::string& what) : Error(what), index_(index) {}
    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

/// Factorization hit a (numerically) zero pivot in column `column`.
class RankBreakdownError : public Error {
public:
    RankBreakdownError(std::size_t column, const std::string& what)
        : Error(what), column_(column) {}
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t column_;
};

/// The solver produced a non-finite iterate.
class DivergenceError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

} // namespace semid
