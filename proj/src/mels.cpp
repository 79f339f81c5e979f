#include "ghme/mels.hpp"

#include "ghme/errors.hpp"
#include "ghme/parallel.hpp"
#include "least_squares.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace ghme::mels {

namespace {

constexpr double kLog2Pi = 1.83787706640934548356;
constexpr std::size_t kChunk = 32;

void require_dims(const LongitudinalDataset& ds, const MelsParams& p) {
    if (p.beta.size() != ds.px() || p.alpha.size() != ds.pz() || p.tau.size() != ds.pw()) {
        std::ostringstream os;
        os << "parameter dimensions (" << p.beta.size() << ", " << p.alpha.size() << ", " << p.tau.size()
           << ") do not match covariates (" << ds.px() << ", " << ds.pz() << ", " << ds.pw() << ")";
        fail(ErrorKind::dimension, os.str());
    }
}

void require_admissible(const MelsParams& p) {
    if (!p.admissible()) fail(ErrorKind::domain, "MELS parameters need sigma_w > 0 and |rho| < 1");
}

double log_sum_exp(const std::vector<double>& v) {
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

// log of  phi(eta) * p(y | eta), with the random intercept integrated out:
// given eta the variances are exp(b_j + sigma_w eta) and e1 | eta is
// N(rho eta, 1 - rho^2), so y | eta is Gaussian with a rank-one covariance.
struct Reduced {
    double q0, q1, q2, sum_b, n, sigma_w, rho;

    double operator()(double eta) const {
        const double se = sigma_w * eta;
        const double k = std::exp(-se);
        const double m0 = rho * eta, s0 = 1.0 - rho * rho;
        const double aa = k * q2;
        const double au = k * (q1 - m0 * q2);
        const double uu = k * (q0 - 2.0 * m0 * q1 + m0 * m0 * q2);
        const double denom = 1.0 + s0 * aa;
        return -0.5 * (kLog2Pi + eta * eta) - 0.5 * (n * kLog2Pi + sum_b + n * se + std::log(denom)) -
               0.5 * (uu - s0 * au * au / denom);
    }
};

double individual_loglik(const IndividualRecord& rec, const MelsParams& p, const GaussHermite& gh) {
    const Eigen::VectorXd r = rec.y - rec.x * p.beta;
    const Eigen::VectorXd a = (0.5 * (rec.z * p.alpha).array()).exp().matrix();
    const Eigen::VectorXd b = rec.w * p.tau;
    const Eigen::VectorXd inv_var0 = (-b.array()).exp().matrix();
    const Reduced g{(r.array().square() * inv_var0.array()).sum(),
                    (r.array() * a.array() * inv_var0.array()).sum(),
                    (a.array().square() * inv_var0.array()).sum(),
                    b.sum(),
                    static_cast<double>(rec.n()),
                    p.sigma_w,
                    p.rho};

    // Centre and scale the rule at the mode of g (safeguarded Newton).
    double mode = 0.0, curv = 1.0;
    const double h = 1e-4;
    for (int it = 0; it < 60; ++it) {
        const double f0 = g(mode), fp = g(mode + h), fm = g(mode - h);
        const double d1 = (fp - fm) / (2.0 * h);
        const double d2 = (fp - 2.0 * f0 + fm) / (h * h);
        curv = d2 < -1e-8 ? -d2 : 1.0;
        double step = d2 < -1e-8 ? -d1 / d2 : (d1 > 0.0 ? 0.5 : -0.5);
        step = std::clamp(step, -2.0, 2.0);
        while (std::fabs(step) > 1e-12 && !(g(mode + step) >= f0)) step *= 0.5;
        mode += step;
        if (std::fabs(step) < 1e-10) break;
    }
    {
        const double f0 = g(mode), fp = g(mode + h), fm = g(mode - h);
        const double d2 = (fp - 2.0 * f0 + fm) / (h * h);
        curv = d2 < -1e-8 ? -d2 : 1.0;
    }
    const double scale = 1.0 / std::sqrt(curv);

    // int g = int [g(mode + scale t) scale / phi(t)] phi(t) dt
    std::vector<double> terms(static_cast<std::size_t>(gh.nodes.size()));
    for (Eigen::Index k = 0; k < gh.nodes.size(); ++k) {
        const double t = gh.nodes[k];
        terms[static_cast<std::size_t>(k)] =
            std::log(gh.weights[k]) + g(mode + scale * t) + std::log(scale) + 0.5 * (kLog2Pi + t * t);
    }
    return log_sum_exp(terms);
}

double loglik_with(const LongitudinalDataset& ds, const MelsParams& p, const GaussHermite& gh) {
    const std::size_t n_ind = ds.size();
    const std::size_t n_chunks = (n_ind + kChunk - 1) / kChunk;
    std::vector<KahanSum> parts(n_chunks);
    parallel_for(n_chunks, [&](std::size_t c) {
        const std::size_t end = std::min(n_ind, (c + 1) * kChunk);
        for (std::size_t i = c * kChunk; i < end; ++i) {
            const double v = individual_loglik(ds.records[i], p, gh);
            if (!std::isfinite(v)) fail(ErrorKind::non_finite, "MELS log-likelihood is not finite for individual " +
                                                                   ds.records[i].id);
            parts[c].add(v);
        }
    });
    KahanSum total;
    for (const auto& s : parts) total.add(s.value());
    return total.value();
}

// Unconstrained coordinates (beta, alpha, tau, log sigma_w, atanh rho).
Eigen::VectorXd to_free(const MelsParams& p) {
    const Eigen::Index pb = p.beta.size(), pa = p.alpha.size(), pt = p.tau.size();
    Eigen::VectorXd u(pb + pa + pt + 2);
    u << p.beta, p.alpha, p.tau, std::log(p.sigma_w), std::atanh(p.rho);
    return u;
}

MelsParams from_free(const Eigen::VectorXd& u, Eigen::Index pb, Eigen::Index pa, Eigen::Index pt) {
    MelsParams p;
    p.beta = u.segment(0, pb);
    p.alpha = u.segment(pb, pa);
    p.tau = u.segment(pb + pa, pt);
    p.sigma_w = std::exp(u[pb + pa + pt]);
    p.rho = std::tanh(u[pb + pa + pt + 1]);
    return p;
}

}  // namespace

bool MelsParams::admissible() const {
    return std::isfinite(sigma_w) && sigma_w > 0.0 && std::isfinite(rho) && std::fabs(rho) < 1.0 &&
           beta.allFinite() && alpha.allFinite() && tau.allFinite();
}

GaussHermite gauss_hermite(int n) {
    if (n < 1) fail(ErrorKind::domain, "Gauss-Hermite rule needs at least one node");
    // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite polynomials.
    Eigen::MatrixXd jm = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) jm(k, k - 1) = jm(k - 1, k) = std::sqrt(static_cast<double>(k));
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jm);
    GaussHermite gh;
    gh.nodes = es.eigenvalues();
    gh.weights.resize(n);
    // Polish each node with Newton on the orthonormal polynomial, then take the
    // weight from the Christoffel function; eigenvector weights lose relative
    // accuracy in the tails.
    auto orthonormal = [n](double x, double& pn, double& dpn, double& christoffel) {
        double p_prev = 0.0, p = 1.0, d_prev = 0.0, d = 0.0;
        christoffel = 1.0;
        for (int k = 0; k < n; ++k) {
            const double sk = std::sqrt(static_cast<double>(k)), sk1 = std::sqrt(static_cast<double>(k + 1));
            const double p_next = (x * p - sk * p_prev) / sk1;
            const double d_next = (p + x * d - sk * d_prev) / sk1;
            p_prev = p;
            p = p_next;
            d_prev = d;
            d = d_next;
            if (k + 1 < n) christoffel += p * p;
        }
        pn = p;
        dpn = d;
    };
    for (int k = 0; k < n; ++k) {
        double x = gh.nodes[k], pn = 0.0, dpn = 1.0, c = 1.0;
        for (int it = 0; it < 3; ++it) {
            orthonormal(x, pn, dpn, c);
            if (dpn != 0.0) x -= pn / dpn;
        }
        orthonormal(x, pn, dpn, c);
        gh.nodes[k] = x;
        gh.weights[k] = 1.0 / c;
    }
    // Symmetrize to remove round-off.
    for (int k = 0; k < n / 2; ++k) {
        const double x = 0.5 * (gh.nodes[n - 1 - k] - gh.nodes[k]);
        const double w = 0.5 * (gh.weights[k] + gh.weights[n - 1 - k]);
        gh.nodes[k] = -x;
        gh.nodes[n - 1 - k] = x;
        gh.weights[k] = gh.weights[n - 1 - k] = w;
    }
    if (n % 2 == 1) gh.nodes[n / 2] = 0.0;
    return gh;
}

double mels_loglik_individual(const IndividualRecord& rec, const MelsParams& p, int nodes) {
    if (nodes < 5) fail(ErrorKind::domain, "MELS quadrature needs at least 5 nodes per axis");
    require_admissible(p);
    return individual_loglik(rec, p, gauss_hermite(nodes));
}

double mels_loglik(const LongitudinalDataset& ds, const MelsParams& p, int nodes) {
    if (nodes < 5) fail(ErrorKind::domain, "MELS quadrature needs at least 5 nodes per axis");
    require_dims(ds, p);
    require_admissible(p);
    return loglik_with(ds, p, gauss_hermite(nodes));
}

QuadratureCheck mels_loglik_checked(const LongitudinalDataset& ds, const MelsParams& p, int nodes) {
    QuadratureCheck q;
    q.value = mels_loglik(ds, p, nodes);
    q.refined = mels_loglik(ds, p, nodes + 10);
    q.difference = std::fabs(q.refined - q.value);
    return q;
}

MelsMoments mels_moments(const MelsParams& p, const Eigen::VectorXd& x, const Eigen::VectorXd& z,
                         const Eigen::VectorXd& w) {
    MelsMoments m;
    m.mean = x.dot(p.beta);
    m.covariance = std::exp(z.dot(p.alpha));
    m.variance = std::exp(w.dot(p.tau) + 0.5 * p.sigma_w * p.sigma_w) + m.covariance;
    return m;
}

MelsParams mels_initial(const LongitudinalDataset& ds) {
    ds.validate();
    const auto n = static_cast<Eigen::Index>(ds.total_obs());
    const Eigen::Index pb = ds.px(), pa = ds.pz(), pt = ds.pw();
    Eigen::VectorXd y(n);
    Eigen::MatrixXd x(n, pb), z(n, pa), w(n, pt);
    Eigen::Index row = 0;
    for (const auto& r : ds.records) {
        y.segment(row, r.n()) = r.y;
        x.middleRows(row, r.n()) = r.x;
        z.middleRows(row, r.n()) = r.z;
        w.middleRows(row, r.n()) = r.w;
        row += r.n();
    }
    if (n <= pb + pa + pt + 1) fail(ErrorKind::optim_failed, "MELS initial estimator: too few observations");

    // Stage 1: trend least squares.
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    if (qr.rank() < pb) fail(ErrorKind::optim_failed, "MELS initial estimator: trend design is rank deficient");
    MelsParams p;
    p.beta = qr.solve(y);
    Eigen::VectorXd e = y - x * p.beta;
    Eigen::VectorXd e2 = e.cwiseAbs2();
    if (!(e2.sum() > 1e-12 * static_cast<double>(n)))
        fail(ErrorKind::optim_failed, "MELS initial estimator: residuals have zero variance");

    // Stage 2: e^2 ~ exp(w'tau + s) + exp(z'alpha) with s = sigma_w^2 / 2.
    const detail::ResidualFn fn = [&](const Eigen::VectorXd& u, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
        const Eigen::VectorXd a = u.head(pa), t = u.segment(pa, pt);
        const double s = u[pa + pt];
        const Eigen::ArrayXd ez = (z * a).array().exp();
        const Eigen::ArrayXd ew = ((w * t).array() + s).exp();
        r = e2 - (ez + ew).matrix();
        if (jac) {
            jac->resize(n, pa + pt + 1);
            jac->leftCols(pa) = -(z.array().colwise() * ez).matrix();
            jac->middleCols(pa, pt) = -(w.array().colwise() * ew).matrix();
            jac->col(pa + pt) = -ew.matrix();
        }
    };
    // s >= 0 keeps sigma_w^2 admissible and stops exp(w'tau + s) from chasing outliers.
    Eigen::VectorXd lo = Eigen::VectorXd::Constant(pa + pt + 1, -50.0), hi = -lo;
    lo[pa + pt] = 0.0;
    auto variance_fit = [&](std::vector<Eigen::VectorXd> starts) {
        detail::LsOutcome best;
        for (const auto& u0 : starts) {
            const detail::LsOutcome o = detail::levenberg_marquardt(fn, u0, lo, hi, 300);
            if (std::isfinite(o.objective) && o.objective < best.objective) best = o;
        }
        if (!std::isfinite(best.objective) || !best.converged)
            fail(ErrorKind::optim_failed, "MELS initial estimator: squared-residual fit did not converge");
        return best.u;
    };
    std::vector<Eigen::VectorXd> starts;
    for (double s0 : {0.4, 0.1, std::max(std::log(0.5 * e2.mean()), 0.01)}) {
        Eigen::VectorXd u = Eigen::VectorXd::Zero(pa + pt + 1);
        u[pa + pt] = s0;
        starts.push_back(u);
    }
    Eigen::VectorXd u = variance_fit(starts);

    // Feasible GLS refinement of beta with the fitted marginal covariance
    // diag(exp(w'tau + s)) + a a', a_j = exp(z_j'alpha / 2), then refit stage 2.
    {
        Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(pb, pb);
        Eigen::VectorXd xty = Eigen::VectorXd::Zero(pb);
        const Eigen::VectorXd a_hat = u.head(pa), t_hat = u.segment(pa, pt);
        const double s_hat = u[pa + pt];
        for (const auto& r : ds.records) {
            const Eigen::ArrayXd dinv = (-((r.w * t_hat).array() + s_hat)).exp();
            const Eigen::ArrayXd a = (0.5 * (r.z * a_hat).array()).exp();
            const Eigen::VectorXd da = (dinv * a).matrix();
            const double denom = 1.0 + (a * dinv * a).sum();
            const Eigen::MatrixXd dx = r.x.array().colwise() * dinv;
            const Eigen::VectorXd xda = r.x.transpose() * da;
            xtx.noalias() += r.x.transpose() * dx - xda * xda.transpose() / denom;
            xty.noalias() += dx.transpose() * r.y - xda * (da.dot(r.y) / denom);
        }
        const Eigen::LDLT<Eigen::MatrixXd> ldlt(xtx);
        if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
            const Eigen::VectorXd beta = ldlt.solve(xty);
            if (beta.allFinite()) {
                p.beta = beta;
                e = y - x * p.beta;
                e2 = e.cwiseAbs2();
                starts.insert(starts.begin(), u);
                u = variance_fit(starts);
            }
        }
    }
    p.alpha = u.head(pa);
    p.tau = u.segment(pa, pt);
    const double sigma2 = std::max(2.0 * u[pa + pt], 1e-8);
    p.sigma_w = std::sqrt(sigma2);

    // Stage 3: E[e^3] = 3 sigma_w exp(z'alpha/2 + w'tau + sigma_w^2/2) rho.
    double num = 0.0, den = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        const double g = 3.0 * p.sigma_w * std::exp(0.5 * z.row(j).dot(p.alpha) + w.row(j).dot(p.tau) + 0.5 * sigma2);
        num += e[j] * e2[j] * g;
        den += g * g;
    }
    if (!(den > 1e-12 * static_cast<double>(n)))
        fail(ErrorKind::degenerate_skew, "MELS initial estimator: third-moment design is degenerate");
    p.rho = std::clamp(num / den, -0.99, 0.99);
    return p;
}

MelsFit mels_fit(const LongitudinalDataset& ds, const MelsParams& p_init, int nodes, int max_iter) {
    const auto t0 = std::chrono::steady_clock::now();
    if (nodes < 5) fail(ErrorKind::domain, "MELS quadrature needs at least 5 nodes per axis");
    require_dims(ds, p_init);
    require_admissible(p_init);
    const Eigen::Index pb = p_init.beta.size(), pa = p_init.alpha.size(), pt = p_init.tau.size();
    const GaussHermite gh = gauss_hermite(nodes);
    const double scale = 1.0 / static_cast<double>(std::max<std::size_t>(ds.total_obs(), 1));

    MelsFit out;
    auto objective = [&](const Eigen::VectorXd& u) {
        ++out.evaluations;
        const MelsParams p = from_free(u, pb, pa, pt);
        if (!p.admissible()) return std::numeric_limits<double>::infinity();
        try {
            return -scale * loglik_with(ds, p, gh);
        } catch (const Error&) {
            return std::numeric_limits<double>::infinity();
        }
    };
    auto gradient = [&](const Eigen::VectorXd& u) {
        Eigen::VectorXd g(u.size());
        for (Eigen::Index k = 0; k < u.size(); ++k) {
            const double h = 1e-5 * std::max(1.0, std::fabs(u[k]));
            Eigen::VectorXd up = u, dn = u;
            up[k] += h;
            dn[k] -= h;
            g[k] = (objective(up) - objective(dn)) / (2.0 * h);
        }
        return g;
    };

    Eigen::VectorXd u = to_free(p_init);
    double f = objective(u);
    if (!std::isfinite(f)) fail(ErrorKind::non_finite, "MELS log-likelihood is not finite at the start");
    Eigen::VectorXd g = gradient(u);
    Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(u.size(), u.size());
    bool converged = false;
    int it = 0;
    for (; it < max_iter; ++it) {
        if (g.lpNorm<Eigen::Infinity>() <= 1e-6) {
            converged = true;
            break;
        }
        Eigen::VectorXd d = -hinv * g;
        if (d.dot(g) >= 0.0) {
            hinv.setIdentity();
            d = -g;
        }
        // Armijo backtracking.
        double step = 1.0, f_new = f;
        Eigen::VectorXd u_new = u;
        bool moved = false;
        for (int k = 0; k < 40; ++k) {
            u_new = u + step * d;
            f_new = objective(u_new);
            if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * d.dot(g)) {
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if (!moved) {
            // Finite-difference noise floor reached.
            converged = g.lpNorm<Eigen::Infinity>() <= 1e-4;
            break;
        }
        const Eigen::VectorXd g_new = gradient(u_new);
        const Eigen::VectorXd s = u_new - u, y = g_new - g;
        const double ys = y.dot(s);
        if (ys > 1e-12 * s.norm() * y.norm()) {
            if (it == 0) hinv *= ys / y.squaredNorm();
            const double rho = 1.0 / ys;
            const Eigen::MatrixXd v = Eigen::MatrixXd::Identity(u.size(), u.size()) - rho * s * y.transpose();
            hinv = v * hinv * v.transpose() + rho * s * s.transpose();
        }
        const bool tiny = std::fabs(f - f_new) <= 1e-14 * std::max(1.0, std::fabs(f));
        u = u_new;
        f = f_new;
        g = g_new;
        if (tiny) {
            converged = true;
            break;
        }
    }
    if (!converged) {
        std::ostringstream os;
        os << "mels_fit: no convergence after " << max_iter << " iterations (gradient norm "
           << g.lpNorm<Eigen::Infinity>() << ")";
        fail(ErrorKind::max_iter_exceeded, os.str());
    }
    out.params = from_free(u, pb, pa, pt);
    out.loglik = -f / scale;
    out.iterations = it;
    out.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

LongitudinalDataset mels_simulate(const MelsParams& p, std::size_t n_individuals, Eigen::Index n_obs,
                                  std::uint64_t seed) {
    require_admissible(p);
    if (n_obs < 1) fail(ErrorKind::domain, "mels_simulate: need at least one observation per individual");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    const Eigen::Index pb = p.beta.size(), pa = p.alpha.size(), pt = p.tau.size();
    const double cr = std::sqrt(1.0 - p.rho * p.rho);
    LongitudinalDataset ds;
    ds.records.reserve(n_individuals);
    for (std::size_t i = 0; i < n_individuals; ++i) {
        IndividualRecord rec;
        rec.id = std::to_string(i + 1);
        rec.x.resize(n_obs, pb);
        rec.z.resize(n_obs, pa);
        rec.w.resize(n_obs, pt);
        rec.y.resize(n_obs);
        const double e1 = nd(rng);
        const double e2 = p.rho * e1 + cr * nd(rng);
        for (Eigen::Index j = 0; j < n_obs; ++j) {
            for (Eigen::Index k = 0; k < pb; ++k) rec.x(j, k) = nd(rng);
            for (Eigen::Index k = 0; k < pa; ++k) rec.z(j, k) = nd(rng);
            for (Eigen::Index k = 0; k < pt; ++k) rec.w(j, k) = nd(rng);
            const double e3 = nd(rng);
            rec.y[j] = rec.x.row(j).dot(p.beta) + std::exp(0.5 * rec.z.row(j).dot(p.alpha)) * e1 +
                       std::exp(0.5 * (rec.w.row(j).dot(p.tau) + p.sigma_w * e2)) * e3;
        }
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

}  // namespace ghme::mels
