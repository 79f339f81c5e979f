#pragma once

#include "ghme/model.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace ghme {

enum class Method { initial, one_step, mle };
enum class InfoVariant { outer_product, observed_info };

const char* to_string(Method m);
const char* to_string(InfoVariant v);

struct FitOptions {
    Bounds bounds;
    double margin = 1e-6;     // interior margin used when clipping
    double grad_tol = 1e-8;   // scaled gradient, MLE
    double step_tol = 1e-10;  // MLE
    int max_iter = 200;
    double rcond_min = 1e-14; // below this the Hessian counts as singular
};

struct FitResult {
    Method method = Method::initial;
    Family family;
    Theta theta_hat;
    Eigen::VectorXd estimate;  // theta_hat in the layout of `family`
    std::vector<std::string> names;
    double loglik_value = 0.0;
    bool converged = true;
    int iterations = 0;
    double wall_time = 0.0;  // seconds
    bool at_boundary = false;
    bool singular_hessian = false;
    double hessian_rcond = 0.0;
    double score_norm = 0.0;
    std::vector<std::string> warnings;

    // Filled by studentize().
    bool studentized = false;
    InfoVariant info_variant = InfoVariant::observed_info;
    Eigen::MatrixXd observed_info;       // -d2 l(theta_hat)
    Eigen::MatrixXd outer_product_info;  // sum_i (d zeta_i)(d zeta_i)'
    Eigen::VectorXd se;
    Eigen::VectorXd ci_low;
    Eigen::VectorXd ci_high;
    double level = 0.95;
    double z_crit = 0.0;
};

struct InitialState {
    Eigen::VectorXd alpha0;
    Eigen::VectorXd beta0;
    double mu0 = 0.0;
    Eigen::VectorXd e_hat;  // stacked over individuals, in record order
    double m1_value = 0.0;
    Eigen::VectorXd tau0;
    double c0 = 0.0;
    double m2_value = 0.0;
    double rho0 = 0.0;
    dist::GigParams theta_prime0;
    std::vector<std::string> warnings;
};

// Step 1: least squares for (beta, alpha, mu) in E[Y] = x'beta + s(z, alpha) mu,
// by variable projection over alpha with a fixed multi-start schedule.
InitialState initial_step1(const LongitudinalDataset& ds, const LinkSpec& links, const FitOptions& opt = {});
// Step 2: (tau, c) from the squared residuals with c profiled out.
void initial_step2(const LongitudinalDataset& ds, const LinkSpec& links, InitialState& st,
                   const FitOptions& opt = {});
// Step 3: closed-form third-moment estimate of rho.
void initial_step3(const LongitudinalDataset& ds, const LinkSpec& links, InitialState& st);

// Steps 1-4: returns an interior theta. `state`, when given, receives the
// intermediate quantities.
Theta initial_estimator(const LongitudinalDataset& ds, const LinkSpec& links, Family family,
                        const FitOptions& opt = {}, InitialState* state = nullptr);

// Wraps initial_estimator as a FitResult (timed).
FitResult initial_fit(const LongitudinalDataset& ds, const LinkSpec& links, Family family,
                      const FitOptions& opt = {});

// One Newton-Raphson step from theta0 against the full log-likelihood.
FitResult one_step(const LongitudinalDataset& ds, const LinkSpec& links, Family family, const Theta& theta0,
                   const FitOptions& opt = {});

// Trust-region Newton maximization of the log-likelihood.
FitResult mle(const LongitudinalDataset& ds, const LinkSpec& links, Family family, const Theta& theta_init,
              const FitOptions& opt = {});

// Information matrices, standard errors and level-(1-a) Wald intervals at the
// reported estimate. Throws IndefiniteInfo when the chosen information is not
// positive definite.
void studentize(const LongitudinalDataset& ds, const LinkSpec& links, FitResult& fit, InfoVariant variant,
                double level = 0.95);

// The information matrix selected at studentize time.
const Eigen::MatrixXd& chosen_info(const FitResult& fit);
// (theta_hat - theta0)' I (theta_hat - theta0)
double wald_statistic(const FitResult& fit, const Theta& theta0);
// I^{1/2} (theta_hat - theta0) with the symmetric square root.
Eigen::VectorXd standardized_estimate(const FitResult& fit, const Theta& theta0);

struct IdentifiabilityReport {
    double q1_min_eig = 0.0;
    double q2_min_eig = 0.0;
    double s6_mean = 0.0;
    std::vector<std::string> warnings;
};

// Smallest eigenvalues of the Gram matrices Q1(alpha) and Q2(tau) over the
// given grids, and N^-1 sum s^6 at alpha0.
IdentifiabilityReport identifiability_diag(const LongitudinalDataset& ds, const LinkSpec& links,
                                           const std::vector<Eigen::VectorXd>& alpha_grid,
                                           const std::vector<Eigen::VectorXd>& tau_grid, double mu0,
                                           const Eigen::VectorXd& alpha0);

}  // namespace ghme
