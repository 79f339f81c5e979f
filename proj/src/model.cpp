#include "ghme/model.hpp"

#include "ghme/errors.hpp"
#include "ghme/parallel.hpp"
#include "ghme/specfun.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

namespace ghme {

namespace {

constexpr double kLog2Pi = 1.83787706640934548356;
constexpr std::size_t kChunk = 32;  // fixed reduction partition

std::atomic<std::uint64_t> g_hessian_evals{0};

void require_theta(const Theta& th, Eigen::Index pb, Eigen::Index pa, Eigen::Index pt) {
    if (th.beta.size() != pb || th.alpha.size() != pa || th.tau.size() != pt) {
        std::ostringstream os;
        os << "parameter dimensions (" << th.beta.size() << ", " << th.alpha.size() << ", " << th.tau.size()
           << ") do not match covariates (" << pb << ", " << pa << ", " << pt << ")";
        fail(ErrorKind::dimension, os.str());
    }
    if (!th.gig().interior() || !th.beta.allFinite() || !th.alpha.allFinite() || !th.tau.allFinite()) {
        std::ostringstream os;
        os << "theta is not admissible (lambda=" << th.lambda << ", delta=" << th.delta
           << ", gamma=" << th.gamma << ")";
        fail(ErrorKind::domain, os.str());
    }
}

// Terms of zeta_i that depend on (lambda, delta, gamma) only:
// lambda log(gamma/delta) - log K_lambda(delta gamma), with derivatives.
struct PriorTerm {
    double value = 0.0;
    double d_lam = 0.0, d_del = 0.0, d_gam = 0.0;
    double d_lam_lam = 0.0, d_lam_del = 0.0, d_lam_gam = 0.0;
    double d_del_del = 0.0, d_gam_gam = 0.0, d_del_gam = 0.0;
};

PriorTerm prior_term(const Theta& th, bool with_lambda, int order) {
    const double lam = th.lambda, del = th.delta, gam = th.gamma;
    const double u = del * gam;
    const auto h = specfun::log_bessel_k_derivs(lam, u, with_lambda && order >= 1);
    PriorTerm p;
    p.value = lam * (std::log(gam) - std::log(del)) - h.log_k;
    if (order < 1) return p;
    p.d_lam = std::log(gam) - std::log(del) - h.d_nu;
    p.d_del = -lam / del - h.d_t * gam;
    p.d_gam = lam / gam - h.d_t * del;
    p.d_lam_lam = -h.d_nunu;
    p.d_lam_del = -1.0 / del - h.d_nut * gam;
    p.d_lam_gam = 1.0 / gam - h.d_nut * del;
    p.d_del_del = lam / (del * del) - h.d_tt * gam * gam;
    p.d_gam_gam = -lam / (gam * gam) - h.d_tt * del * del;
    p.d_del_gam = -h.d_tt * u - h.d_t;
    return p;
}

struct Contribution {
    double value = 0.0;
    Eigen::VectorXd grad;
    Eigen::MatrixXd hess;
};

// zeta_i = -n/2 log 2pi + prior + D + f(QA, QB, lambda) with
//   QA = A_i^2, QB = B_i^2, D = -1/2 sum log sigma2 + sum s r / sigma2,
//   f  = (nu/2)(log QB - log QA) + log K_nu(sqrt(QA QB)),  nu = lambda - n/2.
// Derivatives follow by the chain rule through QA, QB and lambda.
void individual(const IndividualRecord& rec, const Theta& th, const LinkSpec& links,
                const ParamLayout& lay, const PriorTerm& prior, int order, Contribution& out) {
    const Eigen::Index n = rec.n();
    const Eigen::Index pb = lay.pb(), pa = lay.pa(), pt = lay.pt(), p = lay.size();
    const Eigen::Index ia = lay.alpha_at(), it = lay.tau_at(), il = lay.lambda_at();
    const Eigen::Index id = lay.delta_at(), ig = lay.gamma_at();
    const bool with_lambda = il >= 0;

    Eigen::VectorXd s(n), r(n), w(n), sig2(n);
    Eigen::MatrixXd s1, dsig;
    if (order >= 1) {
        s1.resize(n, pa);
        dsig.resize(n, pt);
    }
    Eigen::VectorXd gtmp_a(pa), gtmp_t(pt);

    const Eigen::VectorXd fit = rec.x * th.beta;
    double qa = th.gamma * th.gamma;
    double qb = th.delta * th.delta;
    double d_term = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        if (order >= 1) {
            s[j] = links.s.value_grad(rec.z.row(j), th.alpha, gtmp_a);
            sig2[j] = links.sigma2.value_grad(rec.w.row(j), th.tau, gtmp_t);
            s1.row(j) = gtmp_a.transpose();
            dsig.row(j) = gtmp_t.transpose();
        } else {
            s[j] = links.s.value(rec.z.row(j), th.alpha);
            sig2[j] = links.sigma2.value(rec.w.row(j), th.tau);
        }
        if (!(sig2[j] > 0.0) || !std::isfinite(sig2[j]))
            fail(ErrorKind::non_finite, "individual " + rec.id + ": sigma^2 is not positive and finite");
        w[j] = 1.0 / sig2[j];
        r[j] = rec.y[j] - fit[j];
        qa += s[j] * s[j] * w[j];
        qb += r[j] * r[j] * w[j];
        d_term += -0.5 * std::log(sig2[j]) + s[j] * r[j] * w[j];
    }

    if (!std::isfinite(qa) || !std::isfinite(qb) || !std::isfinite(d_term))
        fail(ErrorKind::non_finite, "individual " + rec.id + ": non-finite response or linear predictor");
    const double nu = th.lambda - 0.5 * static_cast<double>(n);
    const double t = std::sqrt(qa * qb);
    const auto g = specfun::log_bessel_k_derivs(nu, t, with_lambda && order >= 1);
    const double lqa = std::log(qa), lqb = std::log(qb);

    out.value = -0.5 * static_cast<double>(n) * kLog2Pi + prior.value + d_term +
                0.5 * nu * (lqb - lqa) + g.log_k;
    if (!std::isfinite(out.value))
        fail(ErrorKind::non_finite, "individual " + rec.id + ": log-likelihood contribution is not finite");
    if (order < 1) return;

    const double f_a = (-nu + g.d_t * t) / (2.0 * qa);
    const double f_b = (nu + g.d_t * t) / (2.0 * qb);
    const double f_l = 0.5 * (lqb - lqa) + g.d_nu;

    // Gradients of QA, QB and D in the full parameter space.
    const Eigen::VectorXd w2 = w.array().square();
    Eigen::MatrixXd dw;  // rows: d w_j / d tau = -w_j^2 d sigma2_j
    dw = -(dsig.array().colwise() * w2.array()).matrix();

    Eigen::VectorXd ga = Eigen::VectorXd::Zero(p), gb = Eigen::VectorXd::Zero(p), gd = Eigen::VectorXd::Zero(p);
    const Eigen::VectorXd sw = s.cwiseProduct(w), rw = r.cwiseProduct(w);
    ga.segment(ia, pa) = 2.0 * s1.transpose() * sw;
    ga.segment(it, pt) = dw.transpose() * s.cwiseAbs2();
    ga[ig] = 2.0 * th.gamma;
    gb.segment(0, pb) = -2.0 * rec.x.transpose() * rw;
    gb.segment(it, pt) = dw.transpose() * r.cwiseAbs2();
    gb[id] = 2.0 * th.delta;
    gd.segment(0, pb) = -rec.x.transpose() * sw;
    gd.segment(ia, pa) = s1.transpose() * rw;
    gd.segment(it, pt) = -0.5 * dsig.transpose() * w + dw.transpose() * s.cwiseProduct(r);

    out.grad = f_a * ga + f_b * gb + gd;
    if (with_lambda) out.grad[il] += f_l + prior.d_lam;
    out.grad[id] += prior.d_del;
    out.grad[ig] += prior.d_gam;
    if (order < 2) return;

    const double t2 = t * t;
    const double f_aa = (2.0 * nu + g.d_tt * t2 - g.d_t * t) / (4.0 * qa * qa);
    const double f_bb = (-2.0 * nu + g.d_tt * t2 - g.d_t * t) / (4.0 * qb * qb);
    const double f_ab = (g.d_tt * t2 + g.d_t * t) / (4.0 * qa * qb);

    Eigen::MatrixXd& h = out.hess;
    h.setZero(p, p);

    // f_a d2QA + f_b d2QB + d2D, upper blocks first.
    h.block(0, 0, pb, pb).noalias() = (2.0 * f_b) * rec.x.transpose() * w.asDiagonal() * rec.x;
    h.block(0, ia, pb, pa).noalias() = -rec.x.transpose() * w.asDiagonal() * s1;
    {
        const Eigen::VectorXd cbt = 2.0 * f_b * r + s;
        h.block(0, it, pb, pt).noalias() = -rec.x.transpose() * cbt.asDiagonal() * dw;
    }
    h.block(ia, ia, pa, pa).noalias() = (2.0 * f_a) * s1.transpose() * w.asDiagonal() * s1;
    {
        const Eigen::VectorXd cat = 2.0 * f_a * s + r;
        h.block(ia, it, pa, pt).noalias() = s1.transpose() * cat.asDiagonal() * dw;
    }
    {
        const Eigen::ArrayXd c1 = f_a * s.array().square() + f_b * r.array().square() + s.array() * r.array();
        const Eigen::VectorXd cdd = (2.0 * c1 * w.array().cube() + 0.5 * w2.array()).matrix();
        h.block(it, it, pt, pt).noalias() = dsig.transpose() * cdd.asDiagonal() * dsig;
        for (Eigen::Index j = 0; j < n; ++j) {
            links.s.add_hessian(rec.z.row(j), th.alpha, 2.0 * f_a * sw[j] + rw[j], h.block(ia, ia, pa, pa));
            links.sigma2.add_hessian(rec.w.row(j), th.tau, -c1[j] * w2[j] - 0.5 * w[j], h.block(it, it, pt, pt));
        }
    }
    h(ig, ig) += 2.0 * f_a;
    h(id, id) += 2.0 * f_b;

    // Mirror the upper blocks.
    h.triangularView<Eigen::StrictlyLower>() = h.transpose();

    h.noalias() += f_aa * ga * ga.transpose() + f_bb * gb * gb.transpose() +
                   f_ab * (ga * gb.transpose() + gb * ga.transpose());
    if (with_lambda) {
        const double f_al = (-1.0 + g.d_nut * t) / (2.0 * qa);
        const double f_bl = (1.0 + g.d_nut * t) / (2.0 * qb);
        h.col(il) += f_al * ga + f_bl * gb;
        h.row(il) += (f_al * ga + f_bl * gb).transpose();
        h(il, il) += g.d_nunu + prior.d_lam_lam;
        h(il, id) += prior.d_lam_del;
        h(id, il) += prior.d_lam_del;
        h(il, ig) += prior.d_lam_gam;
        h(ig, il) += prior.d_lam_gam;
    }
    h(id, id) += prior.d_del_del;
    h(ig, ig) += prior.d_gam_gam;
    // Rounding in the rank updates can differ between mirrored entries.
    h.triangularView<Eigen::StrictlyLower>() = h.transpose();
    h(id, ig) += prior.d_del_gam;
    h(ig, id) += prior.d_del_gam;
}

}  // namespace

std::size_t LongitudinalDataset::total_obs() const {
    std::size_t n = 0;
    for (const auto& r : records) n += static_cast<std::size_t>(r.n());
    return n;
}

Eigen::Index LongitudinalDataset::px() const { return records.empty() ? 0 : records.front().x.cols(); }
Eigen::Index LongitudinalDataset::pz() const { return records.empty() ? 0 : records.front().z.cols(); }
Eigen::Index LongitudinalDataset::pw() const { return records.empty() ? 0 : records.front().w.cols(); }

void LongitudinalDataset::validate() const {
    if (records.empty()) fail(ErrorKind::data, "dataset has no individuals");
    const Eigen::Index px0 = px(), pz0 = pz(), pw0 = pw();
    for (const auto& r : records) {
        const Eigen::Index n = r.n();
        if (n < 1) fail(ErrorKind::data, "individual " + r.id + " has no observations");
        if (r.x.rows() != n || r.z.rows() != n || r.w.rows() != n)
            fail(ErrorKind::data, "individual " + r.id + ": covariate row counts differ from the response length");
        if (r.x.cols() != px0 || r.z.cols() != pz0 || r.w.cols() != pw0)
            fail(ErrorKind::data, "individual " + r.id + ": covariate column counts differ across individuals");
        if (!r.y.allFinite() || !r.x.allFinite() || !r.z.allFinite() || !r.w.allFinite())
            fail(ErrorKind::data, "individual " + r.id + ": non-finite value in response or covariates");
    }
}

ParamLayout::ParamLayout(Eigen::Index pb, Eigen::Index pa, Eigen::Index pt, Family family)
    : pb_(pb), pa_(pa), pt_(pt), size_(pb + pa + pt + (family.fixed_lambda ? 2 : 3)), family_(family) {}

ParamLayout ParamLayout::of(const LongitudinalDataset& ds, Family family) {
    return ParamLayout(ds.px(), ds.pz(), ds.pw(), family);
}

Eigen::VectorXd ParamLayout::pack(const Theta& th) const {
    if (th.beta.size() != pb_ || th.alpha.size() != pa_ || th.tau.size() != pt_)
        fail(ErrorKind::dimension, "theta does not match the parameter layout");
    Eigen::VectorXd v(size_);
    v << th.beta, th.alpha, th.tau, Eigen::VectorXd::Zero(size_ - pb_ - pa_ - pt_);
    if (lambda_at() >= 0) v[lambda_at()] = th.lambda;
    v[delta_at()] = th.delta;
    v[gamma_at()] = th.gamma;
    return v;
}

Theta ParamLayout::unpack(const Eigen::VectorXd& v) const {
    if (v.size() != size_) fail(ErrorKind::dimension, "parameter vector does not match the layout");
    Theta th;
    th.beta = v.segment(0, pb_);
    th.alpha = v.segment(pb_, pa_);
    th.tau = v.segment(pb_ + pa_, pt_);
    th.lambda = lambda_at() >= 0 ? v[lambda_at()] : family_.lambda;
    th.delta = v[delta_at()];
    th.gamma = v[gamma_at()];
    return th;
}

std::vector<std::string> ParamLayout::names() const {
    std::vector<std::string> out;
    for (Eigen::Index k = 0; k < pb_; ++k) out.push_back("beta" + std::to_string(k));
    for (Eigen::Index k = 0; k < pa_; ++k) out.push_back("alpha" + std::to_string(k));
    for (Eigen::Index k = 0; k < pt_; ++k) out.push_back("tau" + std::to_string(k));
    if (lambda_at() >= 0) out.push_back("lambda");
    out.push_back("delta");
    out.push_back("gamma");
    return out;
}

Eigen::VectorXd ParamLayout::lower(const Bounds& b) const {
    Eigen::VectorXd lo(size_);
    lo.segment(0, pb_).setConstant(-b.beta);
    lo.segment(pb_, pa_).setConstant(-b.alpha);
    lo.segment(pb_ + pa_, pt_).setConstant(-b.tau);
    if (lambda_at() >= 0) lo[lambda_at()] = b.lambda_lo;
    lo[delta_at()] = b.scale_lo;
    lo[gamma_at()] = b.scale_lo;
    return lo;
}

Eigen::VectorXd ParamLayout::upper(const Bounds& b) const {
    Eigen::VectorXd hi(size_);
    hi.segment(0, pb_).setConstant(b.beta);
    hi.segment(pb_, pa_).setConstant(b.alpha);
    hi.segment(pb_ + pa_, pt_).setConstant(b.tau);
    if (lambda_at() >= 0) hi[lambda_at()] = b.lambda_hi;
    hi[delta_at()] = b.scale_hi;
    hi[gamma_at()] = b.scale_hi;
    return hi;
}

bool ParamLayout::inside(const Eigen::VectorXd& v, const Bounds& b) const {
    return v.allFinite() && (v.array() > lower(b).array()).all() && (v.array() < upper(b).array()).all();
}

Eigen::VectorXd ParamLayout::clip(const Eigen::VectorXd& v, const Bounds& b, double margin) const {
    Eigen::VectorXd lo = lower(b), hi = upper(b);
    for (Eigen::Index k = 0; k < size_; ++k) {
        if (k == delta_at() || k == gamma_at()) {
            lo[k] *= 1.0 + margin;
            hi[k] *= 1.0 - margin;
        } else {
            lo[k] += margin;
            hi[k] -= margin;
        }
    }
    return v.cwiseMax(lo).cwiseMin(hi);
}

AbPair compute_ab(const IndividualRecord& rec, const Theta& th, const LinkSpec& links) {
    if (rec.x.rows() != rec.n() || rec.z.rows() != rec.n() || rec.w.rows() != rec.n() ||
        rec.x.cols() != th.beta.size() || rec.z.cols() != th.alpha.size() || rec.w.cols() != th.tau.size())
        fail(ErrorKind::dimension, "compute_ab: record " + rec.id + " does not match theta");
    double qa = th.gamma * th.gamma;
    double qb = th.delta * th.delta;
    for (Eigen::Index j = 0; j < rec.n(); ++j) {
        const double s = links.s.value(rec.z.row(j), th.alpha);
        const double sig2 = links.sigma2.value(rec.w.row(j), th.tau);
        const double r = rec.y[j] - rec.x.row(j).dot(th.beta);
        qa += s * s / sig2;
        qb += r * r / sig2;
    }
    return {std::sqrt(qa), std::sqrt(qb)};
}

Evaluation evaluate(const LongitudinalDataset& ds, const Theta& th, const LinkSpec& links, Family family,
                    int order, bool keep_individual) {
    if (ds.records.empty()) fail(ErrorKind::data, "dataset has no individuals");
    const ParamLayout lay = ParamLayout::of(ds, family);
    Theta eval_th = th;
    if (family.fixed_lambda) eval_th.lambda = family.lambda;
    require_theta(eval_th, lay.pb(), lay.pa(), lay.pt());
    if (order >= 2) g_hessian_evals.fetch_add(1);

    const Eigen::Index p = lay.size();
    const PriorTerm prior = prior_term(eval_th, !family.fixed_lambda, order);
    const std::size_t n_ind = ds.size();
    const std::size_t n_chunks = (n_ind + kChunk - 1) / kChunk;

    struct Partial {
        KahanSum value;
        Eigen::VectorXd grad;
        Eigen::MatrixXd hess;
    };
    std::vector<Partial> parts(n_chunks);
    Evaluation ev;
    if (keep_individual && order >= 1) ev.individual_scores.setZero(static_cast<Eigen::Index>(n_ind), p);

    parallel_for(n_chunks, [&](std::size_t c) {
        Partial& part = parts[c];
        if (order >= 1) part.grad.setZero(p);
        if (order >= 2) part.hess.setZero(p, p);
        Contribution con;
        const std::size_t end = std::min(n_ind, (c + 1) * kChunk);
        for (std::size_t i = c * kChunk; i < end; ++i) {
            individual(ds.records[i], eval_th, links, lay, prior, order, con);
            part.value.add(con.value);
            if (order >= 1) {
                part.grad += con.grad;
                if (keep_individual) ev.individual_scores.row(static_cast<Eigen::Index>(i)) = con.grad.transpose();
            }
            if (order >= 2) part.hess += con.hess;
        }
    });

    KahanSum total;
    if (order >= 1) ev.score.setZero(p);
    if (order >= 2) ev.hessian.setZero(p, p);
    for (const auto& part : parts) {
        total.add(part.value.value());
        if (order >= 1) ev.score += part.grad;
        if (order >= 2) ev.hessian += part.hess;
    }
    ev.loglik = total.value();
    return ev;
}

double loglik(const LongitudinalDataset& ds, const Theta& th, const LinkSpec& links) {
    return evaluate(ds, th, links, Family::full(), 0).loglik;
}

double loglik_individual(const IndividualRecord& rec, const Theta& th, const LinkSpec& links) {
    const ParamLayout lay(rec.x.cols(), rec.z.cols(), rec.w.cols(), Family::full());
    require_theta(th, lay.pb(), lay.pa(), lay.pt());
    const PriorTerm prior = prior_term(th, false, 0);
    Contribution con;
    individual(rec, th, links, lay, prior, 0, con);
    return con.value;
}

Eigen::VectorXd score(const LongitudinalDataset& ds, const Theta& th, const LinkSpec& links, Family family) {
    return evaluate(ds, th, links, family, 1).score;
}

Eigen::MatrixXd hessian(const LongitudinalDataset& ds, const Theta& th, const LinkSpec& links, Family family) {
    return evaluate(ds, th, links, family, 2).hessian;
}

std::vector<Eigen::VectorXd> per_individual_scores(const LongitudinalDataset& ds, const Theta& th,
                                                   const LinkSpec& links, Family family) {
    const Evaluation ev = evaluate(ds, th, links, family, 1, true);
    std::vector<Eigen::VectorXd> out(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i)
        out[i] = ev.individual_scores.row(static_cast<Eigen::Index>(i)).transpose();
    return out;
}

std::uint64_t hessian_eval_count() { return g_hessian_evals.load(); }
void reset_hessian_eval_count() { g_hessian_evals.store(0); }

dist::GigParams posterior_gig(const IndividualRecord& rec, const Theta& th, const LinkSpec& links) {
    const AbPair ab = compute_ab(rec, th, links);
    return {th.lambda - 0.5 * static_cast<double>(rec.n()), ab.b, ab.a};
}

double posterior_mean(const IndividualRecord& rec, const Theta& th, const LinkSpec& links) {
    return dist::gig_mean(posterior_gig(rec, th, links));
}

double predict_fitted(const IndividualRecord& rec, const Theta& th, const LinkSpec& links,
                      const Eigen::VectorXd& new_x, const Eigen::VectorXd& new_z) {
    if (new_x.size() != th.beta.size() || new_z.size() != th.alpha.size())
        fail(ErrorKind::dimension, "predict_fitted: new covariates do not match theta");
    const double s = links.s.value(new_z.transpose(), th.alpha);
    const double mean = new_x.dot(th.beta);
    if (s == 0.0) return mean;
    return mean + s * posterior_mean(rec, th, links);
}

}  // namespace ghme
