#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace ghme::dist {

// GIG(lambda, delta, gamma): density proportional to
// x^(lambda-1) exp(-(delta^2/x + gamma^2 x)/2) on x > 0.
struct GigParams {
    double lambda = 0.0;
    double delta = 1.0;
    double gamma = 1.0;

    bool admissible() const;
    // delta > 0 and gamma > 0; the boundary (gamma/inverse-gamma) cases are excluded
    bool interior() const;
};

// GH(lambda, alpha, beta, delta, mu): law of mu + beta Z + sqrt(Z) eta with
// Z ~ GIG(lambda, delta, sqrt(alpha^2 - beta^2)).
struct GhParams {
    double lambda = 0.0;
    double alpha = 1.0;
    double beta = 0.0;
    double delta = 1.0;
    double mu = 0.0;

    bool admissible() const;
    double gamma() const;  // sqrt(alpha^2 - beta^2)
};

// Mean, variance and third central moment of v ~ GIG.
struct MomentTriple {
    double mu_v = 0.0;
    double c_v = 0.0;
    double rho_v = 0.0;
};

enum class InvertMode { full, ig_fixed_lambda };

struct InvertOptions {
    double lambda_lo = -20.0;
    double lambda_hi = 20.0;
    double scale_lo = 1e-8;  // bounds on delta and gamma
    double scale_hi = 1e4;
    double tol = 1e-12;      // on the scaled residual
    int max_iter = 200;
};

double gig_logpdf(double x, const GigParams& p);
double gig_mean(const GigParams& p);
MomentTriple gig_moments(const GigParams& p);

// k-th raw moment E[v^k] for real k.
double gig_raw_moment(const GigParams& p, double k);

// One draw using the caller's engine.
double gig_draw(const GigParams& p, std::mt19937_64& rng);
std::vector<double> gig_sample(const GigParams& p, std::size_t n, std::uint64_t seed);

// Inverts m = (mu, c, rho). In ig_fixed_lambda mode only (mu, c) are used and
// lambda = -1/2 is returned.
GigParams gig_mom_invert(const MomentTriple& m, InvertMode mode,
                         const InvertOptions& opt = {});

// Matches (mu, c) with lambda held at a known value; closed form at lambda = -1/2.
GigParams gig_mom_invert_fixed(const MomentTriple& m, double lambda, const InvertOptions& opt = {});

double gh_logpdf(double y, const GhParams& p);

struct NigMoments {
    double mean = 0.0;
    double variance = 0.0;
    double skewness = 0.0;
    double kurtosis = 0.0;  // excess
};

NigMoments nig_moments(const GhParams& p);
GhParams nig_from_moments(const NigMoments& m);

}  // namespace ghme::dist
