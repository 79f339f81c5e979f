#pragma once

#include <stdexcept>
#include <string>

namespace ghme {

enum class ErrorKind {
    domain,
    non_finite,
    dimension,
    optim_failed,
    degenerate_skew,
    no_solution,
    inversion_failed,
    singular_hessian,
    indefinite_info,
    max_iter_exceeded,
    infeasible_moments,
    config,
    data,
    io,
};

const char* to_string(ErrorKind kind);

// Every library failure is reported through this type; `kind` lets callers
// (the CLI, the Monte Carlo harness) map failures onto exit codes and
// exclusion reasons without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

}  // namespace ghme
