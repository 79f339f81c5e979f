#include "ghme/dist.hpp"

#include "ghme/errors.hpp"
#include "ghme/specfun.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace ghme::dist {

namespace {

using specfun::log_bessel_k;

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

void require_interior(const GigParams& p, const char* who) {
    if (!p.interior()) {
        std::ostringstream os;
        os << who << ": GIG parameters outside the admissible interior (lambda=" << p.lambda
           << ", delta=" << p.delta << ", gamma=" << p.gamma << ")";
        fail(ErrorKind::domain, os.str());
    }
}

// Uniform on the open interval (0, 1).
double unif(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double x = 0.0;
    while (x <= 0.0) x = u(rng);
    return x;
}

// Mode of the standardized density x^(lambda-1) exp(-omega/2 (x + 1/x)).
double std_mode(double lambda, double omega) {
    if (lambda >= 1.0) return (std::sqrt((lambda - 1.0) * (lambda - 1.0) + omega * omega) + (lambda - 1.0)) / omega;
    return omega / (std::sqrt((1.0 - lambda) * (1.0 - lambda) + omega * omega) + (1.0 - lambda));
}

// Hoermann & Leydold (2014) generators for the standardized GIG with lambda >= 0.

double rou_shift(double lambda, double omega, std::mt19937_64& rng) {
    const double t = 0.5 * (lambda - 1.0);
    const double s = 0.25 * omega;
    const double xm = std_mode(lambda, omega);
    const double nc = t * std::log(xm) - s * (xm + 1.0 / xm);

    // Extremes of (x - xm) sqrt(f(x)) are roots of a cubic; Cardano, trigonometric form.
    const double a = -(2.0 * (lambda + 1.0) / omega + xm);
    const double b = 2.0 * (lambda - 1.0) * xm / omega - 1.0;
    const double c = xm;
    const double p = b - a * a / 3.0;
    const double q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    const double fi = std::acos(-q / (2.0 * std::sqrt(-(p * p * p) / 27.0)));
    const double fak = 2.0 * std::sqrt(-p / 3.0);
    const double y1 = fak * std::cos(fi / 3.0) - a / 3.0;
    const double y2 = fak * std::cos(fi / 3.0 + 4.0 / 3.0 * std::numbers::pi) - a / 3.0;
    const double uplus = (y1 - xm) * std::exp(t * std::log(y1) - s * (y1 + 1.0 / y1) - nc);
    const double uminus = (y2 - xm) * std::exp(t * std::log(y2) - s * (y2 + 1.0 / y2) - nc);

    for (;;) {
        const double u = uminus + unif(rng) * (uplus - uminus);
        const double v = unif(rng);
        const double x = u / v + xm;
        if (x > 0.0 && std::log(v) <= t * std::log(x) - s * (x + 1.0 / x) - nc) return x;
    }
}

double rou_noshift(double lambda, double omega, std::mt19937_64& rng) {
    const double t = 0.5 * (lambda - 1.0);
    const double s = 0.25 * omega;
    const double xm = std_mode(lambda, omega);
    const double nc = t * std::log(xm) - s * (xm + 1.0 / xm);
    const double ym = ((lambda + 1.0) + std::sqrt((lambda + 1.0) * (lambda + 1.0) + omega * omega)) / omega;
    const double um = std::exp(0.5 * (lambda + 1.0) * std::log(ym) - s * (ym + 1.0 / ym) - nc);
    for (;;) {
        const double u = um * unif(rng);
        const double v = unif(rng);
        const double x = u / v;
        if (std::log(v) <= t * std::log(x) - s * (x + 1.0 / x) - nc) return x;
    }
}

// Rejection from a three-piece hat; for lambda < 1 and small omega, where the
// density is not T-concave near the origin.
double small_omega(double lambda, double omega, std::mt19937_64& rng) {
    const double xm = std_mode(lambda, omega);
    const double x0 = omega / (1.0 - lambda);
    const double k0 = std::exp((lambda - 1.0) * std::log(xm) - 0.5 * omega * (xm + 1.0 / xm));
    std::array<double, 3> area{};
    area[0] = k0 * x0;
    double k1 = 0.0;
    double k2 = 0.0;
    if (x0 >= 2.0 / omega) {
        k2 = std::pow(x0, lambda - 1.0);
        area[2] = k2 * 2.0 * std::exp(-omega * x0 / 2.0) / omega;
    } else {
        k1 = std::exp(-omega);
        area[1] = lambda == 0.0 ? k1 * std::log(2.0 / (omega * omega))
                                : k1 / lambda * (std::pow(2.0 / omega, lambda) - std::pow(x0, lambda));
        k2 = std::pow(2.0 / omega, lambda - 1.0);
        area[2] = k2 * 2.0 * std::exp(-1.0) / omega;
    }
    const double total = area[0] + area[1] + area[2];
    for (;;) {
        double v = total * unif(rng);
        double x = 0.0;
        double hx = 0.0;
        if (v <= area[0]) {
            x = x0 * v / area[0];
            hx = k0;
        } else if ((v -= area[0]) <= area[1]) {
            if (lambda == 0.0) {
                x = omega * std::exp(std::exp(omega) * v);
                hx = k1 / x;
            } else {
                x = std::pow(std::pow(x0, lambda) + lambda / k1 * v, 1.0 / lambda);
                hx = k1 * std::pow(x, lambda - 1.0);
            }
        } else {
            v -= area[1];
            const double a = std::max(x0, 2.0 / omega);
            x = -2.0 / omega * std::log(std::exp(-omega / 2.0 * a) - omega / (2.0 * k2) * v);
            hx = k2 * std::exp(-omega / 2.0 * x);
        }
        const double u = unif(rng) * hx;
        if (std::log(u) <= (lambda - 1.0) * std::log(x) - omega / 2.0 * (x + 1.0 / x)) return x;
    }
}

// log K_{lambda+k}(w) - log K_lambda(w)
double log_bessel_shift(double lambda, double k, double w) {
    return log_bessel_k(lambda + k, w) - log_bessel_k(lambda, w);
}

}  // namespace

bool GigParams::admissible() const {
    if (!std::isfinite(lambda) || !std::isfinite(delta) || !std::isfinite(gamma)) return false;
    if (lambda > 0.0) return delta >= 0.0 && gamma > 0.0;
    if (lambda == 0.0) return delta > 0.0 && gamma > 0.0;
    return delta > 0.0 && gamma >= 0.0;
}

bool GigParams::interior() const { return admissible() && delta > 0.0 && gamma > 0.0; }

bool GhParams::admissible() const {
    if (!std::isfinite(lambda) || !std::isfinite(alpha) || !std::isfinite(beta) ||
        !std::isfinite(delta) || !std::isfinite(mu))
        return false;
    if (lambda > 0.0) return delta >= 0.0 && alpha > std::fabs(beta);
    if (lambda == 0.0) return delta > 0.0 && alpha > std::fabs(beta);
    return delta > 0.0 && alpha >= std::fabs(beta);
}

double GhParams::gamma() const { return std::sqrt(std::max(0.0, alpha * alpha - beta * beta)); }

double gig_logpdf(double x, const GigParams& p) {
    require_interior(p, "gig_logpdf");
    if (!(x > 0.0) || !std::isfinite(x)) fail(ErrorKind::domain, "gig_logpdf: x must be positive");
    const double w = p.delta * p.gamma;
    return p.lambda * std::log(p.gamma / p.delta) - std::log(2.0) - log_bessel_k(p.lambda, w) +
           (p.lambda - 1.0) * std::log(x) - 0.5 * (p.delta * p.delta / x + p.gamma * p.gamma * x);
}

double gig_raw_moment(const GigParams& p, double k) {
    require_interior(p, "gig_raw_moment");
    const double w = p.delta * p.gamma;
    return std::exp(k * std::log(p.delta / p.gamma) + log_bessel_shift(p.lambda, k, w));
}

double gig_mean(const GigParams& p) { return gig_raw_moment(p, 1.0); }

MomentTriple gig_moments(const GigParams& p) {
    require_interior(p, "gig_moments");
    const double w = p.delta * p.gamma;
    const double eta = p.delta / p.gamma;
    // q_k = K_{lambda+k}/K_lambda; higher ratios by the three-term recurrence
    const double q1 = std::exp(log_bessel_shift(p.lambda, 1.0, w));
    const double q2 = 1.0 + 2.0 * (p.lambda + 1.0) / w * q1;
    const double q3 = q1 + 2.0 * (p.lambda + 2.0) / w * q2;
    MomentTriple m;
    m.mu_v = eta * q1;
    m.c_v = eta * eta * (q2 - q1 * q1);
    m.rho_v = eta * eta * eta * (q3 - 3.0 * q1 * q2 + 2.0 * q1 * q1 * q1);
    return m;
}

double gig_draw(const GigParams& p, std::mt19937_64& rng) {
    require_interior(p, "gig_draw");
    const double lam = std::fabs(p.lambda);
    const double omega = p.delta * p.gamma;
    const double scale = p.delta / p.gamma;
    double x = 0.0;
    if (lam > 2.0 || omega > 3.0) {
        x = rou_shift(lam, omega, rng);
    } else if (lam >= 1.0 - 2.25 * omega * omega || omega > 0.2) {
        x = rou_noshift(lam, omega, rng);
    } else {
        x = small_omega(lam, omega, rng);
    }
    return p.lambda < 0.0 ? scale / x : scale * x;
}

std::vector<double> gig_sample(const GigParams& p, std::size_t n, std::uint64_t seed) {
    require_interior(p, "gig_sample");
    if (n == 0) fail(ErrorKind::domain, "gig_sample: n must be at least 1");
    std::mt19937_64 rng(seed);
    std::vector<double> out(n);
    for (auto& v : out) v = gig_draw(p, rng);
    return out;
}

namespace {

// Levenberg-Marquardt on a square residual system; returns the sup-norm of the
// final residual. `clamp` keeps iterates inside the search box.
template <class Residual, class Clamp>
double levenberg_marquardt(Eigen::VectorXd& u, const Residual& residual, const Clamp& clamp,
                           const InvertOptions& opt) {
    Eigen::VectorXd r;
    try {
        r = residual(u);
    } catch (const Error&) {
        return std::numeric_limits<double>::infinity();
    }
    if (!r.allFinite()) return std::numeric_limits<double>::infinity();
    const Eigen::Index k = u.size();
    double damping = 1e-3;
    for (int it = 0; it < opt.max_iter && r.lpNorm<Eigen::Infinity>() > opt.tol; ++it) {
        Eigen::MatrixXd jac(r.size(), k);
        try {
            for (Eigen::Index c = 0; c < k; ++c) {
                const double h = 1e-6 * std::max(1.0, std::fabs(u[c]));
                Eigen::VectorXd up = u, dn = u;
                up[c] += h;
                dn[c] -= h;
                jac.col(c) = (residual(up) - residual(dn)) / (2.0 * h);
            }
        } catch (const Error&) {
            break;
        }
        const Eigen::MatrixXd jtj = jac.transpose() * jac;
        const Eigen::VectorXd jtr = jac.transpose() * r;
        bool improved = false;
        for (int tries = 0; tries < 30; ++tries) {
            Eigen::MatrixXd a = jtj;
            a.diagonal() += damping * (jtj.diagonal().array() + 1e-12).matrix();
            const Eigen::VectorXd cand = clamp(u + a.ldlt().solve(-jtr));
            Eigen::VectorXd rc;
            bool ok = true;
            try {
                rc = residual(cand);
                ok = rc.allFinite();
            } catch (const Error&) {
                ok = false;
            }
            if (ok && rc.squaredNorm() < r.squaredNorm()) {
                u = cand;
                r = rc;
                damping = std::max(damping * 0.2, 1e-12);
                improved = true;
                break;
            }
            damping *= 10.0;
        }
        if (!improved) break;
    }
    return r.lpNorm<Eigen::Infinity>();
}

void require_mean_var(const MomentTriple& m) {
    if (!(m.mu_v > 0.0) || !(m.c_v > 0.0) || !std::isfinite(m.mu_v) || !std::isfinite(m.c_v)) {
        std::ostringstream os;
        os << "gig_mom_invert: need mu > 0 and c > 0 (mu=" << m.mu_v << ", c=" << m.c_v << ")";
        fail(ErrorKind::no_solution, os.str());
    }
}

}  // namespace

GigParams gig_mom_invert(const MomentTriple& m, InvertMode mode, const InvertOptions& opt) {
    require_mean_var(m);
    const double gamma_ig = std::sqrt(m.mu_v / m.c_v);
    const double delta_ig = std::sqrt(m.mu_v * m.mu_v * m.mu_v / m.c_v);
    if (mode == InvertMode::ig_fixed_lambda) return {-0.5, delta_ig, gamma_ig};

    if (!std::isfinite(m.rho_v)) fail(ErrorKind::no_solution, "gig_mom_invert: third moment is not finite");

    const Eigen::Vector3d target(m.mu_v, m.c_v, m.rho_v);
    const Eigen::Vector3d scale(m.mu_v, m.c_v, std::pow(m.c_v, 1.5));
    const double log_lo = std::log(opt.scale_lo);
    const double log_hi = std::log(opt.scale_hi);

    auto clamp = [&](Eigen::VectorXd u) {
        u[0] = std::clamp(u[0], opt.lambda_lo, opt.lambda_hi);
        u[1] = std::clamp(u[1], log_lo, log_hi);
        u[2] = std::clamp(u[2], log_lo, log_hi);
        return u;
    };
    auto residual = [&](const Eigen::VectorXd& u) {
        const MomentTriple t = gig_moments({u[0], std::exp(u[1]), std::exp(u[2])});
        return Eigen::VectorXd(((Eigen::Vector3d(t.mu_v, t.c_v, t.rho_v) - target).array() / scale.array()).matrix());
    };

    Eigen::VectorXd best_u = Eigen::Vector3d(-0.5, std::log(delta_ig), std::log(gamma_ig));
    double best_norm = std::numeric_limits<double>::infinity();
    // Several starting orders; the map is only locally invertible.
    for (const double lam0 : {-0.5, 0.5, 1.0, 2.0, -1.5, 4.0, -4.0, 8.0}) {
        Eigen::VectorXd u = clamp(Eigen::Vector3d(lam0, std::log(delta_ig), std::log(gamma_ig)));
        const double nrm = levenberg_marquardt(u, residual, clamp, opt);
        if (nrm < best_norm) {
            best_norm = nrm;
            best_u = u;
        }
        if (best_norm <= opt.tol) break;
    }

    if (!(best_norm <= 1e-9)) {
        std::ostringstream os;
        os << "gig_mom_invert: no GIG matches (mu, c, rho) = (" << m.mu_v << ", " << m.c_v << ", "
           << m.rho_v << "); best scaled residual " << best_norm;
        fail(ErrorKind::no_solution, os.str());
    }
    return {best_u[0], std::exp(best_u[1]), std::exp(best_u[2])};
}

GigParams gig_mom_invert_fixed(const MomentTriple& m, double lambda, const InvertOptions& opt) {
    require_mean_var(m);
    const double gamma_ig = std::sqrt(m.mu_v / m.c_v);
    const double delta_ig = std::sqrt(m.mu_v * m.mu_v * m.mu_v / m.c_v);
    if (lambda == -0.5) return {-0.5, delta_ig, gamma_ig};

    const double log_lo = std::log(opt.scale_lo);
    const double log_hi = std::log(opt.scale_hi);
    auto clamp = [&](Eigen::VectorXd u) { return Eigen::VectorXd(u.cwiseMax(log_lo).cwiseMin(log_hi)); };
    auto residual = [&](const Eigen::VectorXd& u) {
        const MomentTriple t = gig_moments({lambda, std::exp(u[0]), std::exp(u[1])});
        return Eigen::VectorXd(Eigen::Vector2d((t.mu_v - m.mu_v) / m.mu_v, (t.c_v - m.c_v) / m.c_v));
    };
    Eigen::VectorXd u = clamp(Eigen::Vector2d(std::log(delta_ig), std::log(gamma_ig)));
    const double nrm = levenberg_marquardt(u, residual, clamp, opt);
    if (!(nrm <= 1e-9)) {
        std::ostringstream os;
        os << "gig_mom_invert: no GIG with lambda = " << lambda << " matches (mu, c) = (" << m.mu_v << ", "
           << m.c_v << "); best scaled residual " << nrm;
        fail(ErrorKind::no_solution, os.str());
    }
    return {lambda, std::exp(u[0]), std::exp(u[1])};
}

double gh_logpdf(double y, const GhParams& p) {
    if (!p.admissible() || !std::isfinite(y)) fail(ErrorKind::domain, "gh_logpdf: inadmissible GH parameters");
    const double g = p.gamma();
    const double dy = y - p.mu;
    const double q = std::sqrt(p.delta * p.delta + dy * dy);
    if (!(q > 0.0)) fail(ErrorKind::domain, "gh_logpdf: density is unbounded at y = mu when delta = 0");
    const double lam = p.lambda;

    // log of (gamma/delta)^lambda / K_lambda(delta gamma), with the delta -> 0
    // and gamma -> 0 limits taken analytically.
    double log_norm = 0.0;
    if (p.delta == 0.0) {
        log_norm = 2.0 * lam * std::log(g) - std::lgamma(lam) - (lam - 1.0) * std::log(2.0);
    } else if (g == 0.0) {
        log_norm = -2.0 * lam * std::log(p.delta) - std::lgamma(-lam) + (lam + 1.0) * std::log(2.0);
    } else {
        log_norm = lam * std::log(g / p.delta) - log_bessel_k(lam, p.delta * g);
    }
    return log_norm - kLogSqrt2Pi - (lam - 0.5) * std::log(p.alpha) + (lam - 0.5) * std::log(q) +
           log_bessel_k(lam - 0.5, p.alpha * q) + p.beta * dy;
}

NigMoments nig_moments(const GhParams& p) {
    if (p.lambda != -0.5) fail(ErrorKind::domain, "nig_moments: requires lambda = -1/2");
    if (!p.admissible() || !(p.alpha > std::fabs(p.beta)))
        fail(ErrorKind::domain, "nig_moments: requires alpha > |beta| and delta > 0");
    const double a2 = p.alpha * p.alpha;
    const double b2 = p.beta * p.beta;
    const double g = std::sqrt(a2 - b2);
    NigMoments m;
    m.mean = p.mu + p.beta * p.delta / g;
    m.variance = p.delta * a2 / (g * g * g);
    m.skewness = 3.0 * p.beta / (p.alpha * std::sqrt(p.delta * g));
    m.kurtosis = 3.0 * (a2 + 4.0 * b2) / (a2 * p.delta * g);
    return m;
}

GhParams nig_from_moments(const NigMoments& m) {
    if (!(m.variance > 0.0)) fail(ErrorKind::infeasible_moments, "nig_from_moments: variance must be positive");
    const double disc = 3.0 * m.kurtosis - 5.0 * m.skewness * m.skewness;
    if (!(disc > 0.0)) {
        std::ostringstream os;
        os << "nig_from_moments: 3K - 5S^2 = " << disc << " is not positive";
        fail(ErrorKind::infeasible_moments, os.str());
    }
    const double sv = std::sqrt(m.variance);
    const double g = 3.0 / (sv * std::sqrt(disc));
    GhParams p;
    p.lambda = -0.5;
    p.beta = m.skewness * sv * g * g / 3.0;
    p.alpha = std::sqrt(g * g + p.beta * p.beta);
    p.delta = m.variance * g * g * g / (g * g + p.beta * p.beta);
    p.mu = m.mean - p.beta * p.delta / g;
    return p;
}

}  // namespace ghme::dist
