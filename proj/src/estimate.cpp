#include "ghme/estimate.hpp"

#include "ghme/errors.hpp"
#include "least_squares.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

namespace ghme {

namespace {

using detail::LsOutcome;
using detail::ResidualFn;
using detail::levenberg_marquardt;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Stacked {
    Eigen::VectorXd y;
    Eigen::MatrixXd x, z, w;
};

Stacked stack(const LongitudinalDataset& ds) {
    const auto n = static_cast<Eigen::Index>(ds.total_obs());
    Stacked st;
    st.y.resize(n);
    st.x.resize(n, ds.px());
    st.z.resize(n, ds.pz());
    st.w.resize(n, ds.pw());
    Eigen::Index row = 0;
    for (const auto& r : ds.records) {
        st.y.segment(row, r.n()) = r.y;
        st.x.middleRows(row, r.n()) = r.x;
        st.z.middleRows(row, r.n()) = r.z;
        st.w.middleRows(row, r.n()) = r.w;
        row += r.n();
    }
    return st;
}

bool odd_link(const Link& l) {
    return l.kind() == Link::Kind::tanh_linear || l.kind() == Link::Kind::linear;
}

std::string describe(const Eigen::VectorXd& v) {
    std::ostringstream os;
    os << "(";
    for (Eigen::Index k = 0; k < v.size(); ++k) os << (k ? ", " : "") << v[k];
    os << ")";
    return os.str();
}

// Transformed coordinates for the optimizer: log for delta and gamma.
Eigen::VectorXd to_work(const ParamLayout& lay, Eigen::VectorXd v) {
    v[lay.delta_at()] = std::log(v[lay.delta_at()]);
    v[lay.gamma_at()] = std::log(v[lay.gamma_at()]);
    return v;
}

Eigen::VectorXd from_work(const ParamLayout& lay, Eigen::VectorXd u) {
    u[lay.delta_at()] = std::exp(u[lay.delta_at()]);
    u[lay.gamma_at()] = std::exp(u[lay.gamma_at()]);
    return u;
}

bool near_boundary(const ParamLayout& lay, const Eigen::VectorXd& v, const Bounds& b) {
    const Eigen::VectorXd lo = lay.lower(b), hi = lay.upper(b);
    for (Eigen::Index k = 0; k < v.size(); ++k) {
        if (k == lay.delta_at() || k == lay.gamma_at()) {
            if (v[k] <= 10.0 * lo[k] || v[k] >= 0.99 * hi[k]) return true;
        } else {
            const double span = hi[k] - lo[k];
            if (v[k] - lo[k] <= 1e-3 * span || hi[k] - v[k] <= 1e-3 * span) return true;
        }
    }
    return false;
}

void fill_estimate(FitResult& fit, const ParamLayout& lay, const Eigen::VectorXd& v) {
    fit.estimate = v;
    fit.theta_hat = lay.unpack(v);
    fit.names = lay.names();
}

}  // namespace

const char* to_string(Method m) {
    switch (m) {
    case Method::initial: return "initial";
    case Method::one_step: return "one_step";
    case Method::mle: return "mle";
    }
    return "?";
}

const char* to_string(InfoVariant v) {
    return v == InfoVariant::outer_product ? "outer_product" : "observed_info";
}

InitialState initial_step1(const LongitudinalDataset& ds, const LinkSpec& links, const FitOptions& opt) {
    ds.validate();
    const Stacked st = stack(ds);
    const Eigen::Index n = st.y.size(), pb = st.x.cols(), pa = st.z.cols();
    if (n < pb + pa + 1) fail(ErrorKind::optim_failed, "step 1: fewer observations than mean parameters");

    Eigen::MatrixXd design(n, pb + 1);
    design.leftCols(pb) = st.x;
    Eigen::VectorXd grad_a(pa);

    // Variable projection: for fixed alpha, (beta, mu) solve a linear least
    // squares problem; the Jacobian drops the term orthogonal to the residual.
    const ResidualFn fn = [&](const Eigen::VectorXd& a, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
        Eigen::MatrixXd s1(jac ? n : 0, pa);
        for (Eigen::Index j = 0; j < n; ++j) {
            if (jac) {
                design(j, pb) = links.s.value_grad(st.z.row(j), a, grad_a);
                s1.row(j) = grad_a.transpose();
            } else {
                design(j, pb) = links.s.value(st.z.row(j), a);
            }
        }
        const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
        const Eigen::VectorXd coef = qr.solve(st.y);
        r = st.y - design * coef;
        if (jac) {
            const Eigen::MatrixXd dz = coef[pb] * s1;
            *jac = -(dz - design * qr.solve(dz));
        }
    };

    std::vector<Eigen::VectorXd> starts;
    Eigen::VectorXd alt(pa);
    for (Eigen::Index k = 0; k < pa; ++k) alt[k] = (k % 2 == 0) ? 1.0 : -1.0;
    starts.push_back(Eigen::VectorXd::Constant(pa, 0.3));
    starts.push_back(0.3 * alt);
    starts.push_back(Eigen::VectorXd::Constant(pa, 1.5));
    starts.push_back(1.5 * alt);
    starts.push_back(Eigen::VectorXd::Unit(pa, 0));

    LsOutcome best;
    bool any_converged = false;
    for (const auto& a0 : starts) {
        const LsOutcome o = levenberg_marquardt(fn, a0, opt.bounds.alpha, 300);
        if (!std::isfinite(o.objective)) continue;
        // ties keep the earlier start
        if (o.objective < best.objective) best = o;
        any_converged = any_converged || o.converged;
    }
    if (!std::isfinite(best.objective))
        fail(ErrorKind::optim_failed, "step 1: least-squares objective is not finite at any start");
    if (!any_converged)
        fail(ErrorKind::optim_failed, "step 1: no start converged; best alpha " + describe(best.u));

    InitialState out;
    Eigen::VectorXd r;
    fn(best.u, r, nullptr);
    const Eigen::VectorXd coef = design.colPivHouseholderQr().solve(st.y);
    out.alpha0 = best.u;
    out.beta0 = coef.head(pb);
    out.mu0 = coef[pb];
    if (out.mu0 < 0.0 && odd_link(links.s)) {
        // (alpha, mu) and (-alpha, -mu) fit identically; E[v] > 0 picks the sign.
        out.alpha0 = -out.alpha0;
        out.mu0 = -out.mu0;
    }
    out.e_hat = r;
    out.m1_value = r.squaredNorm();
    return out;
}

void initial_step2(const LongitudinalDataset& ds, const LinkSpec& links, InitialState& stt, const FitOptions& opt) {
    const Stacked st = stack(ds);
    const Eigen::Index n = st.y.size(), pt = st.w.cols();
    if (stt.e_hat.size() != n) fail(ErrorKind::dimension, "step 2: residual count does not match the data");
    if (!(stt.mu0 > 0.0)) {
        std::ostringstream os;
        os << "step 2: requires a positive mean estimate, got mu0 = " << stt.mu0;
        fail(ErrorKind::optim_failed, os.str());
    }
    constexpr double c_min = 1e-8;
    const Eigen::VectorXd e2 = stt.e_hat.cwiseAbs2();
    Eigen::VectorXd s2(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const double s = links.s.value(st.z.row(j), stt.alpha0);
        s2[j] = s * s;
    }
    const double s4 = s2.squaredNorm();
    const double mu = stt.mu0;
    Eigen::VectorXd grad_t(pt);

    auto target = [&](const Eigen::VectorXd& tau, Eigen::MatrixXd* dsig) {
        Eigen::VectorXd v(n);
        for (Eigen::Index j = 0; j < n; ++j) {
            if (dsig) {
                v[j] = e2[j] - mu * links.sigma2.value_grad(st.w.row(j), tau, grad_t);
                dsig->row(j) = grad_t.transpose();
            } else {
                v[j] = e2[j] - mu * links.sigma2.value(st.w.row(j), tau);
            }
        }
        return v;
    };
    auto project_out = [&](Eigen::VectorXd v) {
        if (s4 > 0.0) v -= s2 * (s2.dot(v) / s4);
        return v;
    };

    // c enters linearly and is profiled out: r(tau) = (I - P_s2)(e^2 - mu sigma2(tau)).
    const ResidualFn profiled = [&](const Eigen::VectorXd& tau, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
        Eigen::MatrixXd dsig(jac ? n : 0, pt);
        r = project_out(target(tau, jac ? &dsig : nullptr));
        if (jac) {
            jac->resize(n, pt);
            for (Eigen::Index k = 0; k < pt; ++k) jac->col(k) = project_out(-mu * dsig.col(k));
        }
    };
    LsOutcome o = levenberg_marquardt(profiled, Eigen::VectorXd::Zero(pt), opt.bounds.tau, 300);
    if (!std::isfinite(o.objective)) fail(ErrorKind::optim_failed, "step 2: objective is not finite");
    double c = s4 > 0.0 ? s2.dot(target(o.u, nullptr)) / s4 : 0.0;

    if (!(c >= c_min)) {
        // Constrained optimum sits on c = c_min: refit tau with c held there.
        stt.warnings.push_back("step 2: variance of v estimated below its floor; c clipped to 1e-8");
        c = c_min;
        const ResidualFn pinned = [&](const Eigen::VectorXd& tau, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
            Eigen::MatrixXd dsig(jac ? n : 0, pt);
            r = target(tau, jac ? &dsig : nullptr) - c_min * s2;
            if (jac) *jac = -mu * dsig;
        };
        o = levenberg_marquardt(pinned, o.u, opt.bounds.tau, 300);
        if (!std::isfinite(o.objective)) fail(ErrorKind::optim_failed, "step 2: objective is not finite");
    }
    if (!o.converged) fail(ErrorKind::optim_failed, "step 2: did not converge; best tau " + describe(o.u));
    stt.tau0 = o.u;
    stt.c0 = c;
    stt.m2_value = (target(o.u, nullptr) - c * s2).squaredNorm();
}

void initial_step3(const LongitudinalDataset& ds, const LinkSpec& links, InitialState& stt) {
    const Stacked st = stack(ds);
    const Eigen::Index n = st.y.size();
    if (stt.e_hat.size() != n) fail(ErrorKind::dimension, "step 3: residual count does not match the data");
    double num = 0.0, s6 = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        const double s = links.s.value(st.z.row(j), stt.alpha0);
        const double sig2 = links.sigma2.value(st.w.row(j), stt.tau0);
        const double s3 = s * s * s;
        const double e = stt.e_hat[j];
        num += (e * e * e - 3.0 * s * sig2 * stt.c0) * s3;
        s6 += s3 * s3;
    }
    if (!(s6 > 1e-12 * static_cast<double>(n))) {
        std::ostringstream os;
        os << "step 3: sum of s^6 = " << s6 << " is too small to identify the third moment of v";
        fail(ErrorKind::degenerate_skew, os.str());
    }
    stt.rho0 = num / s6;
}

namespace {

// Matches (mu, c) exactly and picks lambda so that the third central moment is
// as close as possible to rho; used when no GIG matches all three.
dist::GigParams nearest_third_moment(const dist::MomentTriple& m, const dist::InvertOptions& inv) {
    auto at = [&](double lam, dist::GigParams& out) {
        try {
            out = dist::gig_mom_invert_fixed(m, lam, inv);
            return std::abs(dist::gig_moments(out).rho_v - m.rho_v);
        } catch (const Error&) {
            return std::numeric_limits<double>::infinity();
        }
    };
    dist::GigParams best, cur;
    double best_gap = std::numeric_limits<double>::infinity(), best_lam = -0.5;
    const int grid = 80;
    for (int k = 0; k <= grid; ++k) {
        const double lam = inv.lambda_lo + (inv.lambda_hi - inv.lambda_lo) * k / grid;
        const double gap = at(lam, cur);
        if (gap < best_gap) {
            best_gap = gap;
            best_lam = lam;
            best = cur;
        }
    }
    if (!std::isfinite(best_gap)) fail(ErrorKind::no_solution, "no GIG matches the mean and variance of v");
    const double h = (inv.lambda_hi - inv.lambda_lo) / grid;
    double a = std::max(inv.lambda_lo, best_lam - h), b = std::min(inv.lambda_hi, best_lam + h);
    const double r = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int it = 0; it < 60; ++it) {
        const double c = b - r * (b - a), d = a + r * (b - a);
        if (at(c, cur) < at(d, cur)) b = d;
        else a = c;
    }
    if (at(0.5 * (a + b), cur) < best_gap) best = cur;
    return best;
}

}  // namespace

Theta initial_estimator(const LongitudinalDataset& ds, const LinkSpec& links, Family family, const FitOptions& opt,
                        InitialState* state) {
    InitialState st = initial_step1(ds, links, opt);
    initial_step2(ds, links, st, opt);
    if (!family.fixed_lambda) initial_step3(ds, links, st);

    dist::MomentTriple m{st.mu0, st.c0, st.rho0};
    if (!(m.mu_v > 0.0)) {
        st.warnings.push_back("step 4: mean of v estimated non-positive; raised to 1e-8");
        m.mu_v = 1e-8;
    }
    dist::InvertOptions inv;
    inv.lambda_lo = opt.bounds.lambda_lo;
    inv.lambda_hi = opt.bounds.lambda_hi;
    try {
        if (family.fixed_lambda) {
            st.theta_prime0 = dist::gig_mom_invert_fixed(m, family.lambda, inv);
        } else {
            try {
                st.theta_prime0 = dist::gig_mom_invert(m, dist::InvertMode::full, inv);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::no_solution) throw;
                st.theta_prime0 = nearest_third_moment(m, inv);
                std::ostringstream os;
                os << "step 4: third moment " << m.rho_v << " is outside the GIG range for (mu, c); lambda set to "
                   << st.theta_prime0.lambda << ", the nearest attainable value";
                st.warnings.push_back(os.str());
            }
        }
    } catch (const Error& e) {
        std::ostringstream os;
        os << "step 4: moment inversion failed for (mu, c, rho) = (" << m.mu_v << ", " << m.c_v << ", " << m.rho_v
           << "): " << e.what();
        fail(ErrorKind::inversion_failed, os.str());
    }

    Theta th;
    th.beta = st.beta0;
    th.alpha = st.alpha0;
    th.tau = st.tau0;
    th.lambda = st.theta_prime0.lambda;
    th.delta = st.theta_prime0.delta;
    th.gamma = st.theta_prime0.gamma;

    const ParamLayout lay = ParamLayout::of(ds, family);
    const Eigen::VectorXd v = lay.pack(th);
    const Eigen::VectorXd clipped = lay.clip(v, opt.bounds, opt.margin);
    if ((clipped - v).cwiseAbs().maxCoeff() > 0.0) {
        const auto names = lay.names();
        for (Eigen::Index k = 0; k < v.size(); ++k)
            if (clipped[k] != v[k])
                st.warnings.push_back("initial estimate of " + names[k] + " clipped to the parameter box");
    }
    th = lay.unpack(clipped);
    if (state) *state = std::move(st);
    return th;
}

FitResult initial_fit(const LongitudinalDataset& ds, const LinkSpec& links, Family family, const FitOptions& opt) {
    const auto t0 = Clock::now();
    InitialState st;
    const Theta th = initial_estimator(ds, links, family, opt, &st);
    FitResult fit;
    fit.method = Method::initial;
    fit.family = family;
    const ParamLayout lay = ParamLayout::of(ds, family);
    fill_estimate(fit, lay, lay.pack(th));
    fit.warnings = st.warnings;
    fit.loglik_value = evaluate(ds, th, links, family, 0).loglik;
    fit.at_boundary = near_boundary(lay, fit.estimate, opt.bounds);
    fit.wall_time = seconds_since(t0);
    return fit;
}

FitResult one_step(const LongitudinalDataset& ds, const LinkSpec& links, Family family, const Theta& theta0,
                   const FitOptions& opt) {
    const auto t0 = Clock::now();
    const ParamLayout lay = ParamLayout::of(ds, family);
    const Eigen::VectorXd v0 = lay.pack(theta0);
    if (!lay.inside(v0, opt.bounds)) fail(ErrorKind::domain, "one_step: starting point is outside the parameter box");

    const Evaluation ev = evaluate(ds, theta0, links, family, 2);
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(ev.hessian);
    const double rcond = lu.rcond();
    if (!(rcond >= opt.rcond_min) || !std::isfinite(rcond)) {
        std::ostringstream os;
        os << "one_step: Hessian at the initial estimate is singular (reciprocal condition " << rcond << ")";
        fail(ErrorKind::singular_hessian, os.str());
    }
    const Eigen::VectorXd step = lu.solve(ev.score);

    FitResult fit;
    fit.method = Method::one_step;
    fit.family = family;
    fit.hessian_rcond = rcond;
    Eigen::VectorXd v1 = v0 - step;
    int halvings = 0;
    while (!lay.inside(v1, opt.bounds) && halvings < 20) {
        ++halvings;
        v1 = v0 - std::ldexp(1.0, -halvings) * step;
    }
    if (halvings > 0) {
        std::ostringstream os;
        os << "one_step: Newton step left the parameter box; step halved " << halvings << " time(s)";
        fit.warnings.push_back(os.str());
    }
    if (!lay.inside(v1, opt.bounds)) {
        v1 = lay.clip(v1, opt.bounds, opt.margin);
        fit.warnings.push_back("one_step: estimate clipped to the parameter box");
    }
    fill_estimate(fit, lay, v1);
    fit.iterations = 1;
    fit.at_boundary = near_boundary(lay, v1, opt.bounds);
    // The log-likelihood at the estimate is a diagnostic, not part of the estimator's cost.
    fit.wall_time = seconds_since(t0);
    try {
        fit.loglik_value = evaluate(ds, fit.theta_hat, links, family, 0).loglik;
    } catch (const Error& e) {
        fit.loglik_value = std::numeric_limits<double>::quiet_NaN();
        fit.warnings.push_back(std::string("one_step: log-likelihood at the estimate: ") + e.what());
    }
    return fit;
}

FitResult mle(const LongitudinalDataset& ds, const LinkSpec& links, Family family, const Theta& theta_init,
              const FitOptions& opt) {
    const auto t0 = Clock::now();
    const ParamLayout lay = ParamLayout::of(ds, family);
    const Eigen::Index p = lay.size();
    const Eigen::Index id = lay.delta_at(), ig = lay.gamma_at();
    const Eigen::VectorXd v_init = lay.pack(theta_init);
    if (!lay.inside(v_init, opt.bounds)) fail(ErrorKind::domain, "mle: starting point is outside the parameter box");

    // Box in working coordinates, shrunk by the interior margin.
    const Eigen::VectorXd lo = to_work(lay, lay.clip(lay.lower(opt.bounds), opt.bounds, opt.margin));
    const Eigen::VectorXd hi = to_work(lay, lay.clip(lay.upper(opt.bounds), opt.bounds, opt.margin));

    // Negative log-likelihood with gradient and Hessian in working coordinates.
    struct Point {
        Eigen::VectorXd u;
        double f = 0.0;
        Eigen::VectorXd g;
        Eigen::MatrixXd h;
    };
    auto full_eval = [&](const Eigen::VectorXd& u) {
        const Eigen::VectorXd v = from_work(lay, u);
        const Evaluation ev = evaluate(ds, lay.unpack(v), links, family, 2);
        Eigen::VectorXd jac = Eigen::VectorXd::Ones(p);
        jac[id] = v[id];
        jac[ig] = v[ig];
        Point pt;
        pt.u = u;
        pt.f = -ev.loglik;
        pt.g = -(ev.score.cwiseProduct(jac));
        pt.h = -(jac.asDiagonal() * ev.hessian * jac.asDiagonal());
        pt.h(id, id) -= ev.score[id] * v[id];
        pt.h(ig, ig) -= ev.score[ig] * v[ig];
        return pt;
    };
    auto value_at = [&](const Eigen::VectorXd& u) {
        try {
            const double f = -evaluate(ds, lay.unpack(from_work(lay, u)), links, family, 0).loglik;
            return std::isfinite(f) ? f : std::numeric_limits<double>::infinity();
        } catch (const Error&) {
            return std::numeric_limits<double>::infinity();
        }
    };

    FitResult fit;
    fit.method = Method::mle;
    fit.family = family;
    Point cur = full_eval(to_work(lay, v_init));
    if (!std::isfinite(cur.f)) fail(ErrorKind::non_finite, "mle: log-likelihood is not finite at the start");

    Eigen::MatrixXd bfgs = cur.h.diagonal().cwiseAbs().cwiseMax(1e-6).asDiagonal();
    double radius = 1.0;
    bool converged = false;
    int it = 0;
    for (; it < opt.max_iter; ++it) {
        const double scaled_grad =
            (cur.g.array().abs() * cur.u.array().abs().max(1.0)).maxCoeff() / std::max(1.0, std::fabs(cur.f));

        const Eigen::LLT<Eigen::MatrixXd> llt(cur.h);
        const bool newton = llt.info() == Eigen::Success;
        const Eigen::MatrixXd& model = newton ? cur.h : bfgs;
        const Eigen::VectorXd p_newton = newton ? Eigen::VectorXd(llt.solve(-cur.g)) : Eigen::VectorXd(bfgs.ldlt().solve(-cur.g));
        const double u_scale = 1.0 + cur.u.lpNorm<Eigen::Infinity>();
        if (newton && scaled_grad <= opt.grad_tol && p_newton.lpNorm<Eigen::Infinity>() <= opt.step_tol * u_scale) {
            converged = true;
            break;
        }

        // Dogleg step inside the trust region.
        Eigen::VectorXd step;
        if (p_newton.norm() <= radius) {
            step = p_newton;
        } else {
            const double gbg = cur.g.dot(model * cur.g);
            const Eigen::VectorXd p_cauchy = -(cur.g.squaredNorm() / std::max(gbg, 1e-300)) * cur.g;
            if (gbg <= 0.0 || p_cauchy.norm() >= radius) {
                step = -(radius / cur.g.norm()) * cur.g;
            } else {
                const Eigen::VectorXd d = p_newton - p_cauchy;
                const double a = d.squaredNorm(), b = 2.0 * p_cauchy.dot(d),
                             c = p_cauchy.squaredNorm() - radius * radius;
                const double tau = (-b + std::sqrt(std::max(0.0, b * b - 4.0 * a * c))) / (2.0 * a);
                step = p_cauchy + tau * d;
            }
        }
        const Eigen::VectorXd trial = (cur.u + step).cwiseMax(lo).cwiseMin(hi);
        const Eigen::VectorXd taken = trial - cur.u;
        const double step_len = taken.norm();
        if (step_len <= opt.step_tol * u_scale) {
            // Pinned against the box or numerically stalled.
            converged = scaled_grad <= opt.grad_tol;
            if (!converged) fit.warnings.push_back("mle: stalled at the parameter box before convergence");
            break;
        }
        const double predicted = -(cur.g.dot(taken) + 0.5 * taken.dot(model * taken));
        const double f_trial = value_at(trial);
        const double actual = cur.f - f_trial;
        const double ratio = predicted > 0.0 ? actual / predicted : (actual > 0.0 ? 1.0 : -1.0);

        if (ratio < 0.25) {
            radius = 0.25 * std::min(radius, step_len);
        } else if (ratio > 0.75 && step_len >= 0.99 * radius) {
            radius = std::min(2.0 * radius, 1e4);
        }
        if (ratio > 1e-4 && std::isfinite(f_trial)) {
            Point next = full_eval(trial);
            const Eigen::VectorXd y = next.g - cur.g;
            const double ys = y.dot(taken);
            if (ys > 1e-12 * y.norm() * step_len) {
                const Eigen::VectorXd bs = bfgs * taken;
                bfgs += (y * y.transpose()) / ys - (bs * bs.transpose()) / taken.dot(bs);
            }
            cur = std::move(next);
        }
        if (radius < 1e-14 * u_scale) {
            converged = scaled_grad <= opt.grad_tol;
            if (!converged) fit.warnings.push_back("mle: trust region collapsed before convergence");
            break;
        }
    }
    if (it >= opt.max_iter) {
        std::ostringstream os;
        os << "MaxIterExceeded: mle stopped after " << opt.max_iter << " iterations; returning the best point";
        fit.warnings.push_back(os.str());
    }

    const Eigen::VectorXd v = from_work(lay, cur.u);
    fill_estimate(fit, lay, v);
    fit.loglik_value = -cur.f;
    fit.converged = converged;
    fit.iterations = it;
    fit.score_norm = cur.g.lpNorm<Eigen::Infinity>();
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(cur.h);
    fit.hessian_rcond = lu.rcond();
    const Eigen::LLT<Eigen::MatrixXd> llt(cur.h);
    fit.singular_hessian = !(fit.hessian_rcond >= opt.rcond_min) || llt.info() != Eigen::Success;
    if (fit.singular_hessian) fit.warnings.push_back("mle: Hessian at the solution is singular or indefinite");
    fit.at_boundary = near_boundary(lay, v, opt.bounds);
    if (fit.at_boundary) fit.warnings.push_back("mle: solution is at the boundary of the parameter box");
    fit.wall_time = seconds_since(t0);
    return fit;
}

void studentize(const LongitudinalDataset& ds, const LinkSpec& links, FitResult& fit, InfoVariant variant,
                double level) {
    if (!(level > 0.0 && level < 1.0)) fail(ErrorKind::domain, "studentize: level must lie in (0, 1)");
    const Evaluation ev = evaluate(ds, fit.theta_hat, links, fit.family, 2, true);
    fit.observed_info = -ev.hessian;
    fit.outer_product_info = ev.individual_scores.transpose() * ev.individual_scores;
    fit.info_variant = variant;
    const Eigen::MatrixXd& info = chosen_info(fit);

    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(info);
    const double lmin = es.eigenvalues().minCoeff();
    const double lmax = es.eigenvalues().maxCoeff();
    if (es.info() != Eigen::Success || !(lmin > 1e-12 * std::max(lmax, 1e-300))) {
        std::ostringstream os;
        os << "studentize: " << to_string(variant) << " information is not positive definite (smallest eigenvalue "
           << lmin << ")";
        fail(ErrorKind::indefinite_info, os.str());
    }
    const Eigen::MatrixXd inv = es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() *
                                es.eigenvectors().transpose();
    fit.level = level;
    fit.z_crit = boost::math::quantile(boost::math::normal(), 0.5 + 0.5 * level);
    fit.se = inv.diagonal().cwiseSqrt();
    fit.ci_low = fit.estimate - fit.z_crit * fit.se;
    fit.ci_high = fit.estimate + fit.z_crit * fit.se;
    fit.studentized = true;
}

const Eigen::MatrixXd& chosen_info(const FitResult& fit) {
    if (!fit.studentized && fit.observed_info.size() == 0 && fit.outer_product_info.size() == 0)
        fail(ErrorKind::domain, "fit has not been studentized");
    return fit.info_variant == InfoVariant::outer_product ? fit.outer_product_info : fit.observed_info;
}

double wald_statistic(const FitResult& fit, const Theta& theta0) {
    const ParamLayout lay(fit.theta_hat.beta.size(), fit.theta_hat.alpha.size(), fit.theta_hat.tau.size(),
                          fit.family);
    const Eigen::VectorXd d = fit.estimate - lay.pack(theta0);
    return d.dot(chosen_info(fit) * d);
}

Eigen::VectorXd standardized_estimate(const FitResult& fit, const Theta& theta0) {
    const ParamLayout lay(fit.theta_hat.beta.size(), fit.theta_hat.alpha.size(), fit.theta_hat.tau.size(),
                          fit.family);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(chosen_info(fit));
    const Eigen::MatrixXd root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                                 es.eigenvectors().transpose();
    return root * (fit.estimate - lay.pack(theta0));
}

IdentifiabilityReport identifiability_diag(const LongitudinalDataset& ds, const LinkSpec& links,
                                           const std::vector<Eigen::VectorXd>& alpha_grid,
                                           const std::vector<Eigen::VectorXd>& tau_grid, double mu0,
                                           const Eigen::VectorXd& alpha0) {
    const Stacked st = stack(ds);
    const Eigen::Index n = st.y.size(), pb = st.x.cols(), pa = st.z.cols(), pt = st.w.cols();
    const double inv_n = 1.0 / static_cast<double>(ds.size());
    IdentifiabilityReport rep;

    Eigen::VectorXd s0(n);
    for (Eigen::Index j = 0; j < n; ++j) s0[j] = links.s.value(st.z.row(j), alpha0);
    rep.s6_mean = s0.array().pow(6).sum() * inv_n;

    rep.q1_min_eig = std::numeric_limits<double>::infinity();
    Eigen::VectorXd ga(pa), gt(pt);
    for (const auto& a : alpha_grid) {
        Eigen::MatrixXd q = Eigen::MatrixXd::Zero(pa + pb + 1, pa + pb + 1);
        Eigen::VectorXd row(pa + pb + 1);
        for (Eigen::Index j = 0; j < n; ++j) {
            links.s.value_grad(st.z.row(j), a, ga);
            row << mu0 * ga, st.x.row(j).transpose(), s0[j];
            q.noalias() += row * row.transpose();
        }
        q *= inv_n;
        rep.q1_min_eig = std::min(rep.q1_min_eig, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(q).eigenvalues()[0]);
    }
    rep.q2_min_eig = std::numeric_limits<double>::infinity();
    for (const auto& t : tau_grid) {
        Eigen::MatrixXd q = Eigen::MatrixXd::Zero(pt + 1, pt + 1);
        Eigen::VectorXd row(pt + 1);
        for (Eigen::Index j = 0; j < n; ++j) {
            links.sigma2.value_grad(st.w.row(j), t, gt);
            row << mu0 * gt, s0[j] * s0[j];
            q.noalias() += row * row.transpose();
        }
        q *= inv_n;
        rep.q2_min_eig = std::min(rep.q2_min_eig, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(q).eigenvalues()[0]);
    }
    if (alpha_grid.empty()) rep.q1_min_eig = std::numeric_limits<double>::quiet_NaN();
    if (tau_grid.empty()) rep.q2_min_eig = std::numeric_limits<double>::quiet_NaN();
    if (rep.q1_min_eig < 1e-6) rep.warnings.push_back("Q1 is near-singular: (beta, alpha, mu) may not be identifiable");
    if (rep.q2_min_eig < 1e-6) rep.warnings.push_back("Q2 is near-singular: (tau, c) may not be identifiable");
    if (rep.s6_mean < 1e-6) rep.warnings.push_back("mean of s^6 is near zero: the third moment of v is not identifiable");
    return rep;
}

}  // namespace ghme
