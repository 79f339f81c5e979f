#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace ghme::detail {

// Residual vector and (optionally) its Jacobian at u.
using ResidualFn = std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&, Eigen::MatrixXd*)>;

struct LsOutcome {
    Eigen::VectorXd u;
    double objective = std::numeric_limits<double>::infinity();
    bool converged = false;
    int iterations = 0;
};

// Box-constrained Levenberg-Marquardt for min ||r(u)||^2.
inline LsOutcome levenberg_marquardt(const ResidualFn& fn, Eigen::VectorXd u, const Eigen::VectorXd& lo,
                                     const Eigen::VectorXd& hi, int max_iter) {
    LsOutcome out;
    auto clamp = [&](Eigen::VectorXd v) { return Eigen::VectorXd(v.cwiseMax(lo).cwiseMin(hi)); };
    u = clamp(u);
    Eigen::VectorXd r;
    Eigen::MatrixXd jac;
    fn(u, r, &jac);
    double obj = r.squaredNorm();
    if (!std::isfinite(obj)) {
        out.u = u;
        return out;
    }
    double damping = 1e-3;
    for (int it = 0; it < max_iter; ++it) {
        out.iterations = it + 1;
        const Eigen::MatrixXd jtj = jac.transpose() * jac;
        Eigen::VectorXd grad = jac.transpose() * r;
        // Coordinates held at a bound by the gradient are frozen for this step.
        std::vector<bool> active(static_cast<std::size_t>(u.size()), false);
        for (Eigen::Index k = 0; k < u.size(); ++k) {
            if ((u[k] <= lo[k] && grad[k] > 0.0) || (u[k] >= hi[k] && grad[k] < 0.0)) {
                active[static_cast<std::size_t>(k)] = true;
                grad[k] = 0.0;
            }
        }
        if (grad.lpNorm<Eigen::Infinity>() <= 1e-12 * std::max(1.0, obj)) {
            out.converged = true;
            break;
        }
        bool accepted = false;
        Eigen::VectorXd r_new;
        Eigen::MatrixXd j_new;
        for (int tries = 0; tries < 40; ++tries) {
            Eigen::MatrixXd a = jtj;
            a.diagonal() += damping * (jtj.diagonal().array() + 1e-12 * (1.0 + jtj.diagonal().maxCoeff())).matrix();
            for (Eigen::Index k = 0; k < u.size(); ++k) {
                if (!active[static_cast<std::size_t>(k)]) continue;
                a.row(k).setZero();
                a.col(k).setZero();
                a(k, k) = 1.0;
            }
            const Eigen::VectorXd cand = clamp(u + a.ldlt().solve(-grad));
            const double step = (cand - u).lpNorm<Eigen::Infinity>();
            if (step <= 1e-13 * (1.0 + u.lpNorm<Eigen::Infinity>())) break;
            fn(cand, r_new, nullptr);
            const double obj_new = r_new.squaredNorm();
            if (std::isfinite(obj_new) && obj_new <= obj) {
                const double rel = (obj - obj_new) / std::max(obj, 1e-300);
                u = cand;
                fn(u, r, &jac);
                obj = obj_new;
                damping = std::max(damping * 0.3, 1e-10);
                accepted = true;
                if (rel <= 1e-13 || step <= 1e-11 * (1.0 + u.lpNorm<Eigen::Infinity>())) out.converged = true;
                break;
            }
            damping *= 8.0;
        }
        if (!accepted) {
            // No decrease is possible from here: a (box-)stationary point.
            out.converged = true;
            break;
        }
        if (out.converged) break;
    }
    out.u = u;
    out.objective = obj;
    return out;
}

inline LsOutcome levenberg_marquardt(const ResidualFn& fn, const Eigen::VectorXd& u, double bound, int max_iter) {
    return levenberg_marquardt(fn, u, Eigen::VectorXd::Constant(u.size(), -bound),
                               Eigen::VectorXd::Constant(u.size(), bound), max_iter);
}

}  // namespace ghme::detail
