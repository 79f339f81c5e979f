#include "ghme/errors.hpp"

namespace ghme {

const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::domain: return "DomainError";
    case ErrorKind::non_finite: return "NonFinite";
    case ErrorKind::dimension: return "DimensionMismatch";
    case ErrorKind::optim_failed: return "OptimFailed";
    case ErrorKind::degenerate_skew: return "DegenerateSkew";
    case ErrorKind::no_solution: return "NoSolution";
    case ErrorKind::inversion_failed: return "InversionFailed";
    case ErrorKind::singular_hessian: return "SingularHessian";
    case ErrorKind::indefinite_info: return "IndefiniteInfo";
    case ErrorKind::max_iter_exceeded: return "MaxIterExceeded";
    case ErrorKind::infeasible_moments: return "InfeasibleMoments";
    case ErrorKind::config: return "ConfigError";
    case ErrorKind::data: return "DataError";
    case ErrorKind::io: return "IoError";
    }
    return "Error";
}

void fail(ErrorKind kind, const std::string& what) {
    throw Error(kind, std::string(to_string(kind)) + ": " + what);
}

}  // namespace ghme
