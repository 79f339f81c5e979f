#pragma once

// Modified Bessel function of the second kind K_nu(t) for real order and
// positive argument, together with the log-derivative helpers used by the
// likelihood:
//
//   R_nu(t) = K_{nu-1}(t) / K_nu(t)          d/dt log K_nu = -R_nu - nu/t
//   S_nu(t) = (K_{nu-1}^2 - K_{nu-2} K_nu) / K_nu^2
//   L_nu(t) = d/dnu R_nu(t)
//
// Everything is evaluated in log space, so arguments up to ~1e6 and orders
// up to a few hundred are representable.

namespace ghme::specfun {

struct BesselEval {
    double nu = 0.0;
    double t = 0.0;
    double value = 0.0;      // may underflow to 0 for very large t
    double log_value = 0.0;
};

BesselEval eval_bessel_k(double nu, double t);

double bessel_k(double nu, double t);
double log_bessel_k(double nu, double t);

// d^order/dnu^order K_nu(t), order in {1, 2}.
double bessel_k_dnu(double nu, double t, int order);

double ratio_R(double nu, double t);
double curvature_S(double nu, double t);
double mixed_L(double nu, double z);

// Partial derivatives of g(nu, t) = log K_nu(t). The order derivatives are
// filled only when requested.
struct LogBesselDerivs {
    double log_k = 0.0;
    double ratio = 0.0;   // R_nu(t)
    double d_t = 0.0;     // -R - nu/t
    double d_tt = 0.0;
    double d_nu = 0.0;
    double d_nunu = 0.0;
    double d_nut = 0.0;   // -L - 1/t
};

LogBesselDerivs log_bessel_k_derivs(double nu, double t, bool with_order);

}  // namespace ghme::specfun
