#pragma once

#include "ghme/harness.hpp"
#include "ghme/model.hpp"

#include <Eigen/Dense>

#include <random>

namespace fixture {

inline ghme::Theta theta(std::initializer_list<double> beta, std::initializer_list<double> alpha,
                         std::initializer_list<double> tau, double lambda, double delta, double gamma) {
    ghme::Theta th;
    th.beta = Eigen::Map<const Eigen::VectorXd>(beta.begin(), static_cast<Eigen::Index>(beta.size()));
    th.alpha = Eigen::Map<const Eigen::VectorXd>(alpha.begin(), static_cast<Eigen::Index>(alpha.size()));
    th.tau = Eigen::Map<const Eigen::VectorXd>(tau.begin(), static_cast<Eigen::Index>(tau.size()));
    th.lambda = lambda;
    th.delta = delta;
    th.gamma = gamma;
    return th;
}

// Inverse-Gaussian experiment: beta (3, 5), alpha (-4, 5), tau (0.05, 0.07), delta 1.5, gamma 0.7.
inline ghme::Theta ig_truth() { return theta({3, 5}, {-4, 5}, {0.05, 0.07}, -0.5, 1.5, 0.7); }
// Full-family case (i): lambda 1.2, delta 1.5, gamma 2.
inline ghme::Theta case_i_truth() { return theta({0.3, 0.5}, {-0.04, 0.05}, {0.05, 0.07}, 1.2, 1.5, 2.0); }

inline ghme::Scenario scenario(const ghme::Theta& th, ghme::Family fam, std::size_t n_individuals, Eigen::Index n,
                               std::uint64_t seed) {
    ghme::Scenario sc;
    sc.name = "test";
    sc.n_individuals = n_individuals;
    sc.n_schedule = {n};
    sc.theta_true = th;
    sc.family = fam;
    sc.seed = seed;
    return sc;
}

inline ghme::Scenario ig_scenario(std::size_t n_individuals, Eigen::Index n, std::uint64_t seed) {
    return scenario(ig_truth(), ghme::Family::fixed(-0.5), n_individuals, n, seed);
}

// A random interior parameter point near `base`.
inline ghme::Theta jitter(const ghme::Theta& base, std::mt19937_64& rng, double scale = 0.2) {
    std::uniform_real_distribution<double> u(-scale, scale);
    ghme::Theta th = base;
    for (auto* v : {&th.beta, &th.alpha, &th.tau})
        for (Eigen::Index k = 0; k < v->size(); ++k) (*v)[k] += u(rng);
    th.lambda += u(rng);
    th.delta *= std::exp(u(rng));
    th.gamma *= std::exp(u(rng));
    return th;
}

}  // namespace fixture
