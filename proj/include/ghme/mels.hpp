#pragma once

#include "ghme/model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

// Mixed-effects location-scale model with log-normal within-subject variance:
//   Y_ij = x'beta + exp(z'alpha/2) e1_i + exp((w'tau + sigma_w e2_i)/2) e3_ij,
// corr(e1, e2) = rho, e3 independent standard normal.
namespace ghme::mels {

struct MelsParams {
    Eigen::VectorXd beta;
    Eigen::VectorXd alpha;
    Eigen::VectorXd tau;
    double sigma_w = 1.0;
    double rho = 0.0;

    bool admissible() const;
};

// Gauss-Hermite rule for the standard normal weight; weights sum to one.
struct GaussHermite {
    Eigen::VectorXd nodes;
    Eigen::VectorXd weights;
};
GaussHermite gauss_hermite(int n);

// Tensor Gauss-Hermite approximation of the log-likelihood; nodes per axis >= 5.
double mels_loglik(const LongitudinalDataset& ds, const MelsParams& p, int nodes = 40);
double mels_loglik_individual(const IndividualRecord& rec, const MelsParams& p, int nodes = 40);

// Value at `nodes` together with the value at nodes + 10 as a stability check.
struct QuadratureCheck {
    double value = 0.0;
    double refined = 0.0;
    double difference = 0.0;  // |refined - value|
};
QuadratureCheck mels_loglik_checked(const LongitudinalDataset& ds, const MelsParams& p, int nodes = 40);

struct MelsMoments {
    double mean = 0.0;
    double variance = 0.0;
    double covariance = 0.0;  // between two observations sharing z
};
MelsMoments mels_moments(const MelsParams& p, const Eigen::VectorXd& x, const Eigen::VectorXd& z,
                         const Eigen::VectorXd& w);

// Three-stage least-squares initial estimator: beta from the trend, then
// (alpha, tau, sigma_w^2) from squared residuals, then rho in closed form.
MelsParams mels_initial(const LongitudinalDataset& ds);

struct MelsFit {
    MelsParams params;
    double loglik = 0.0;
    int iterations = 0;
    int evaluations = 0;
    double wall_time = 0.0;  // seconds
};

// Quasi-Newton maximization of mels_loglik with central-difference gradients.
// Throws MaxIterExceeded when the iteration budget runs out.
MelsFit mels_fit(const LongitudinalDataset& ds, const MelsParams& p_init, int nodes = 20, int max_iter = 200);

// Simulates N individuals with n observations each; x, z, w are iid standard
// normal with the dimensions of p.
LongitudinalDataset mels_simulate(const MelsParams& p, std::size_t n_individuals, Eigen::Index n_obs,
                                  std::uint64_t seed);

}  // namespace ghme::mels
