#include "ghme/specfun.hpp"

#include "ghme/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

namespace ghme::specfun {

namespace {

constexpr double kEps = 1e-16;
constexpr int kMaxIter = 100000;
constexpr double kPi = std::numbers::pi;

void check_args(double nu, double t, const char* who) {
    if (!std::isfinite(nu) || !std::isfinite(t) || t <= 0.0) {
        fail(ErrorKind::domain, std::string(who) + ": requires finite nu and t > 0 (nu=" +
                                    std::to_string(nu) + ", t=" + std::to_string(t) + ")");
    }
}

// Taylor coefficients of 1/Gamma(1+x) about 0.
constexpr std::array<double, 27> kRecipGamma = {
    1.0,
    0.57721566490153286061,
    -0.65587807152025388108,
    -0.042002635034095235529,
    0.1665386113822914895,
    -0.042197734555544336748,
    -0.0096219715278769735621,
    0.0072189432466630995424,
    -0.0011651675918590651121,
    -0.00021524167411495097282,
    0.00012805028238811618615,
    -0.000020134854780788238656,
    -1.2504934821426706573e-6,
    1.1330272319816958824e-6,
    -2.0563384169776071035e-7,
    6.1160951044814158179e-9,
    5.0020076444692229301e-9,
    -1.1812745704870201446e-9,
    1.0434267116911005105e-10,
    7.782263439905071254e-12,
    -3.6968056186422057082e-12,
    5.100370287454475979e-13,
    -2.0583260535665067832e-14,
    -5.3481225394230179824e-15,
    1.2267786282382607902e-15,
    -1.1812593016974587695e-16,
    1.1866922547516003326e-18,
};

// gam1 = (1/G(1-mu) - 1/G(1+mu)) / (2 mu),  gam2 = (1/G(1-mu) + 1/G(1+mu)) / 2
// for |mu| <= 1/2, free of the cancellation a direct evaluation suffers near 0.
void temme_gammas(double mu, double& gam1, double& gam2) {
    gam1 = 0.0;
    gam2 = 0.0;
    double pw = 1.0;  // mu^(k-1) for odd k, mu^k for even k
    for (std::size_t k = 0; k < kRecipGamma.size(); ++k) {
        if (k % 2 == 0) {
            gam2 += kRecipGamma[k] * pw;
        } else {
            gam1 -= kRecipGamma[k] * pw;
            pw *= mu * mu;
        }
    }
}

struct BaseOrder {
    double log_scaled;  // log(e^x K_mu(x))
    double ratio_next;  // K_{mu+1}(x) / K_mu(x)
};

// |mu| <= 1/2. Temme's series below x = 2, Steed's continued fraction above.
BaseOrder base_order(double mu, double x) {
    const double mu2 = mu * mu;
    if (x < 2.0) {
        const double x2 = 0.5 * x;
        const double pimu = kPi * mu;
        const double fact = std::fabs(pimu) < kEps ? 1.0 : pimu / std::sin(pimu);
        double d = -std::log(x2);
        double e = mu * d;
        const double fact2 = std::fabs(e) < kEps ? 1.0 : std::sinh(e) / e;
        double gam1 = 0.0;
        double gam2 = 0.0;
        temme_gammas(mu, gam1, gam2);
        const double gampl = gam2 - mu * gam1;  // 1/Gamma(1+mu)
        const double gammi = gam2 + mu * gam1;  // 1/Gamma(1-mu)
        double ff = fact * (gam1 * std::cosh(e) + gam2 * fact2 * d);
        double sum = ff;
        e = std::exp(e);
        double p = 0.5 * e / gampl;
        double q = 0.5 / (e * gammi);
        double c = 1.0;
        d = x2 * x2;
        double sum1 = p;
        int i = 1;
        for (; i <= kMaxIter; ++i) {
            ff = (i * ff + p + q) / (i * static_cast<double>(i) - mu2);
            c *= d / i;
            p /= (i - mu);
            q /= (i + mu);
            const double del = c * ff;
            sum += del;
            const double del1 = c * (p - i * ff);
            sum1 += del1;
            if (std::fabs(del) < std::fabs(sum) * kEps) break;
        }
        if (i > kMaxIter) fail(ErrorKind::non_finite, "bessel_k: Temme series did not converge");
        const double k_mu = sum;
        const double k_mu1 = sum1 * (2.0 / x);
        return {std::log(k_mu) + x, k_mu1 / k_mu};
    }

    double b = 2.0 * (1.0 + x);
    double d = 1.0 / b;
    double h = d;
    double delh = d;
    double q1 = 0.0;
    double q2 = 1.0;
    const double a1 = 0.25 - mu2;
    double q = a1;
    double c = a1;
    double a = -a1;
    double s = 1.0 + q * delh;
    int i = 2;
    for (; i <= kMaxIter; ++i) {
        a -= 2.0 * (i - 1);
        c = -a * c / i;
        const double qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        const double dels = q * delh;
        s += dels;
        if (std::fabs(dels / s) < kEps) break;
    }
    if (i > kMaxIter) fail(ErrorKind::non_finite, "bessel_k: continued fraction did not converge");
    h = a1 * h;
    const double log_scaled = 0.5 * std::log(kPi / (2.0 * x)) - std::log(s);
    return {log_scaled, (mu + x + 0.5 - h) / x};
}

// log(e^x K_{mu+m}(x)) and K_{mu+m+1}/K_{mu+m}, by upward recurrence in
// ratio form: every term of r_k = 2(mu+k)/x + 1/r_{k-1} is positive.
BaseOrder walk_up(double mu, double x, int m) {
    BaseOrder cur = base_order(mu, x);
    double log_scaled = cur.log_scaled;
    double r = cur.ratio_next;
    for (int k = 1; k <= m; ++k) {
        log_scaled += std::log(r);
        r = 2.0 * (mu + k) / x + 1.0 / r;
    }
    return {log_scaled, r};
}

struct ScaledPair {
    double log_scaled;  // log K_nu(t) + t
    double ratio;       // R_nu(t) = K_{nu-1}/K_nu
};

ScaledPair scaled_pair(double nu, double t) {
    if (nu >= 0.5) {
        const int m = static_cast<int>(std::floor(nu + 0.5));
        const double mu = nu - m;
        const BaseOrder w = walk_up(mu, t, m - 1);  // orders nu-1, nu
        return {w.log_scaled + std::log(w.ratio_next), 1.0 / w.ratio_next};
    }
    // K_nu = K_{-nu}, K_{nu-1} = K_{1-nu}
    const double np = -nu;
    const int m = static_cast<int>(std::floor(np + 0.5));
    const double mu = np - m;
    const BaseOrder w = walk_up(mu, t, m);
    return {w.log_scaled, w.ratio_next};
}

// Richardson-extrapolated central differences in the order, on a geometric
// step sequence h, h/2, h/4.
struct OrderStencil {
    double center_log = 0.0;
    double center_ratio = 0.0;
    double d1_log = 0.0;
    double d2_log = 0.0;
    double d1_ratio = 0.0;
};

double richardson3(double dh, double dh2, double dh4) {
    const double e1 = (4.0 * dh2 - dh) / 3.0;
    const double e2 = (4.0 * dh4 - dh2) / 3.0;
    return (16.0 * e2 - e1) / 15.0;
}

double order_step(double t) {
    // log K_nu(t) varies in nu on the scale 1/log(2/t) for small t.
    const double scale = std::max(1.0, std::log(2.0 / t));
    return 0.02 / scale;
}

OrderStencil order_stencil(double nu, double t) {
    const double h = order_step(t);
    const ScaledPair c = scaled_pair(nu, t);
    OrderStencil out;
    out.center_log = c.log_scaled;
    out.center_ratio = c.ratio;
    std::array<double, 3> d1{};
    std::array<double, 3> d2{};
    std::array<double, 3> dr{};
    double step = h;
    for (int lvl = 0; lvl < 3; ++lvl, step *= 0.5) {
        const ScaledPair p = scaled_pair(nu + step, t);
        const ScaledPair m = scaled_pair(nu - step, t);
        d1[lvl] = (p.log_scaled - m.log_scaled) / (2.0 * step);
        d2[lvl] = (p.log_scaled - 2.0 * c.log_scaled + m.log_scaled) / (step * step);
        dr[lvl] = (p.ratio - m.ratio) / (2.0 * step);
    }
    out.d1_log = richardson3(d1[0], d1[1], d1[2]);
    out.d2_log = richardson3(d2[0], d2[1], d2[2]);
    out.d1_ratio = richardson3(dr[0], dr[1], dr[2]);
    return out;
}

// d^2/dt^2 log K_nu(t) from the Riccati form of Bessel's equation; avoids the
// t^-4 cancellation S_nu suffers at small t.
double log_k_dtt(double nu, double t, double r) {
    return 1.0 - r * r + r * (1.0 - 2.0 * nu) / t + nu / (t * t);
}

}  // namespace

BesselEval eval_bessel_k(double nu, double t) {
    check_args(nu, t, "bessel_k");
    const ScaledPair p = scaled_pair(nu, t);
    BesselEval out;
    out.nu = nu;
    out.t = t;
    out.log_value = p.log_scaled - t;
    out.value = std::exp(out.log_value);
    return out;
}

double bessel_k(double nu, double t) { return eval_bessel_k(nu, t).value; }

double log_bessel_k(double nu, double t) {
    check_args(nu, t, "log_bessel_k");
    return scaled_pair(nu, t).log_scaled - t;
}

double bessel_k_dnu(double nu, double t, int order) {
    check_args(nu, t, "bessel_k_dnu");
    if (order != 1 && order != 2) fail(ErrorKind::domain, "bessel_k_dnu: order must be 1 or 2");
    const OrderStencil s = order_stencil(nu, t);
    const double k = std::exp(s.center_log - t);
    if (order == 1) return k * s.d1_log;
    return k * (s.d1_log * s.d1_log + s.d2_log);
}

double ratio_R(double nu, double t) {
    check_args(nu, t, "ratio_R");
    return scaled_pair(nu, t).ratio;
}

double curvature_S(double nu, double t) {
    check_args(nu, t, "curvature_S");
    // K_{nu-2}/K_nu = R_nu * R_{nu-1}
    const double r = scaled_pair(nu, t).ratio;
    const double r_prev = scaled_pair(nu - 1.0, t).ratio;
    return r * (r - r_prev);
}

double mixed_L(double nu, double z) {
    check_args(nu, z, "mixed_L");
    return order_stencil(nu, z).d1_ratio;
}

LogBesselDerivs log_bessel_k_derivs(double nu, double t, bool with_order) {
    check_args(nu, t, "log_bessel_k_derivs");
    LogBesselDerivs out;
    if (with_order) {
        const OrderStencil s = order_stencil(nu, t);
        out.log_k = s.center_log - t;
        out.ratio = s.center_ratio;
        out.d_nu = s.d1_log;
        out.d_nunu = s.d2_log;
        out.d_nut = -s.d1_ratio - 1.0 / t;
    } else {
        const ScaledPair p = scaled_pair(nu, t);
        out.log_k = p.log_scaled - t;
        out.ratio = p.ratio;
    }
    out.d_t = -out.ratio - nu / t;
    out.d_tt = log_k_dtt(nu, t, out.ratio);
    return out;
}

}  // namespace ghme::specfun
