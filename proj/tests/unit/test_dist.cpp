#include "doctest.h"
#include "oracles.hpp"

#include "ghme/dist.hpp"
#include "ghme/errors.hpp"
#include "ghme/specfun.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

using namespace ghme::dist;
using oracle::rel_err;

TEST_CASE("gig_logpdf") {
    const GigParams ig{-0.5, 1.5, 0.7};
    const double x = 1.0;
    const double ig_density = std::log(1.5 / std::sqrt(2.0 * std::numbers::pi)) - 1.5 * std::log(x) -
                              (1.5 - 0.7 * x) * (1.5 - 0.7 * x) / (2.0 * x);
    CHECK(rel_err(gig_logpdf(x, ig), ig_density) < 1e-12);
    for (double y : {0.05, 0.7, 3.0, 12.0})
        CHECK(rel_err(gig_logpdf(y, {1.2, 1.5, 2.0}), oracle::gig_logpdf_ref(y, 1.2, 1.5, 2.0)) < 1e-12);

    for (GigParams p : {GigParams{1.2, 1.5, 2.0}, GigParams{-0.5, 1.5, 0.7}, GigParams{0.9, 1.2, 0.9},
                        GigParams{-4.0, 0.3, 5.0}}) {
        const double total = std::exp(oracle::log_integral_exp([&](double s) { return gig_logpdf(std::exp(s), p) + s; }));
        CHECK(std::abs(total - 1.0) < 1e-8);
    }
    // mode of (1, 1, 1) is 1
    const GigParams p{1.0, 1.0, 1.0};
    CHECK(gig_logpdf(1.0, p) > gig_logpdf(1.0 + 1e-4, p));
    CHECK(gig_logpdf(1.0, p) > gig_logpdf(1.0 - 1e-4, p));
    CHECK(std::abs(oracle::derivative([&](double y) { return gig_logpdf(y, p); }, 1.0, 1e-3)) < 1e-9);

    CHECK_THROWS_AS(gig_logpdf(0.0, p), ghme::Error);
    CHECK_THROWS_AS(gig_logpdf(1.0, {1.0, 1.0, 0.0}), ghme::Error);
    CHECK_THROWS_AS(gig_logpdf(1.0, {-1.0, 0.0, 1.0}), ghme::Error);
}

TEST_CASE("admissibility region") {
    CHECK(GigParams{1.0, 0.0, 1.0}.admissible());
    CHECK_FALSE(GigParams{1.0, 0.0, 1.0}.interior());
    CHECK(GigParams{0.0, 1.0, 1.0}.admissible());
    CHECK_FALSE(GigParams{0.0, 0.0, 1.0}.admissible());
    CHECK(GigParams{-1.0, 1.0, 0.0}.admissible());
    CHECK_FALSE(GigParams{-1.0, 1.0, 0.0}.interior());
    CHECK_FALSE(GigParams{-1.0, 0.0, 1.0}.admissible());
    CHECK(GigParams{-1.0, 1.0, 1.0}.interior());
}

TEST_CASE("gig_moments") {
    const auto m = gig_moments({-0.5, 1.5, 0.7});
    CHECK(rel_err(m.mu_v, 15.0 / 7.0) < 1e-12);
    CHECK(rel_err(m.c_v, 1.5 / (0.7 * 0.7 * 0.7)) < 1e-12);
    CHECK(rel_err(m.c_v, 4.373177) < 1e-6);
    CHECK(rel_err(m.rho_v, 3.0 * 1.5 / std::pow(0.7, 5)) < 1e-11);

    for (GigParams p : {GigParams{1.2, 1.5, 2.0}, GigParams{0.9, 1.2, 0.9}, GigParams{-2.5, 2.0, 0.4}}) {
        const double e1 = oracle::gig_moment_quad(1, p.lambda, p.delta, p.gamma);
        const double e2 = oracle::gig_moment_quad(2, p.lambda, p.delta, p.gamma);
        const double e3 = oracle::gig_moment_quad(3, p.lambda, p.delta, p.gamma);
        const auto q = gig_moments(p);
        CHECK(q.c_v > 0.0);
        CHECK(rel_err(q.mu_v, e1) < 1e-8);
        CHECK(rel_err(q.c_v, e2 - e1 * e1) < 1e-8);
        CHECK(rel_err(q.rho_v, e3 - 3 * e1 * e2 + 2 * e1 * e1 * e1) < 1e-8);
        CHECK(rel_err(gig_mean(p), e1) < 1e-8);
        CHECK(rel_err(gig_raw_moment(p, 2.0), e2) < 1e-8);
    }
}

TEST_CASE("gig_sample") {
    const std::size_t n = 1'000'000;
    {
        const GigParams p{-0.5, 1.5, 0.7};
        const auto v = gig_sample(p, n, 42);
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
        CHECK(std::abs(mean - 15.0 / 7.0) < 0.01);
        CHECK(std::abs(mean - gig_mean(p)) < 4.0 * std::sqrt(gig_moments(p).c_v / static_cast<double>(n)));
        CHECK(v == gig_sample(p, n, 42));
        CHECK(v != gig_sample(p, n, 43));
    }
    // every branch of the sampler: large lambda, large omega, small omega with lambda < 1, negative lambda
    for (GigParams p : {GigParams{1.2, 1.5, 2.0}, GigParams{3.5, 0.5, 0.5}, GigParams{0.3, 0.1, 0.5},
                        GigParams{0.9, 0.3, 1.0}, GigParams{-3.0, 2.0, 0.2}}) {
        INFO("lambda=" << p.lambda << " delta=" << p.delta << " gamma=" << p.gamma);
        const auto v = gig_sample(p, n, 7);
        const auto m = gig_moments(p);
        double s1 = 0, s2 = 0;
        for (double x : v) {
            CHECK_MESSAGE(x > 0.0, "non-positive draw");
            s1 += x;
        }
        const double mean = s1 / static_cast<double>(n);
        for (double x : v) s2 += (x - mean) * (x - mean);
        const double var = s2 / static_cast<double>(n - 1);
        CHECK(std::abs(mean - m.mu_v) < 4.0 * std::sqrt(m.c_v / static_cast<double>(n)));
        CHECK(std::abs(var / m.c_v - 1.0) < 0.02);
    }
    CHECK_THROWS_AS(gig_sample({1.0, 0.0, 1.0}, 10, 1), ghme::Error);
}

TEST_CASE("gig_mom_invert") {
    const MomentTriple ig{15.0 / 7.0, 1.5 / std::pow(0.7, 3), 0.0};
    const auto p = gig_mom_invert(ig, InvertMode::ig_fixed_lambda);
    CHECK(p.lambda == -0.5);
    CHECK(std::abs(p.delta - 1.5) < 1e-12);
    CHECK(std::abs(p.gamma - 0.7) < 1e-12);
    const auto back = gig_moments(p);
    CHECK(std::abs(back.mu_v - ig.mu_v) < 1e-12 * ig.mu_v);
    CHECK(std::abs(back.c_v - ig.c_v) < 1e-12 * ig.c_v);
    const auto pf = gig_mom_invert_fixed(ig, -0.5);
    CHECK(std::abs(pf.delta - 1.5) < 1e-12);
    CHECK(std::abs(pf.gamma - 0.7) < 1e-12);

    const GigParams truth{1.2, 1.5, 2.0};
    const auto rt = gig_mom_invert(gig_moments(truth), InvertMode::full);
    CHECK(std::abs(rt.lambda - 1.2) < 1e-8);
    CHECK(std::abs(rt.delta - 1.5) < 1e-8);
    CHECK(std::abs(rt.gamma - 2.0) < 1e-8);
    const auto again = gig_moments(rt), target = gig_moments(truth);
    CHECK(rel_err(again.mu_v, target.mu_v) < 1e-9);
    CHECK(rel_err(again.c_v, target.c_v) < 1e-9);
    CHECK(rel_err(again.rho_v, target.rho_v) < 1e-9);

    const GigParams t2{0.9, 1.2, 0.9};
    auto m2 = gig_moments(t2);
    m2.mu_v += 1e-6;
    m2.c_v -= 1e-6;
    m2.rho_v += 1e-6;
    const auto r2 = gig_mom_invert(m2, InvertMode::full);
    CHECK(std::abs(r2.lambda - 0.9) < 1e-4);
    CHECK(std::abs(r2.delta - 1.2) < 1e-4);
    CHECK(std::abs(r2.gamma - 0.9) < 1e-4);

    // fixed lambda away from -1/2 matches (mu, c)
    const GigParams t3{1.5, 0.8, 1.3};
    const auto r3 = gig_mom_invert_fixed(gig_moments(t3), 1.5);
    CHECK(std::abs(r3.delta - 0.8) < 1e-8);
    CHECK(std::abs(r3.gamma - 1.3) < 1e-8);

    // a third moment no GIG law can have
    MomentTriple bad{1.0, 1.0, -50.0};
    CHECK_THROWS_AS(gig_mom_invert(bad, InvertMode::full), ghme::Error);
}

TEST_CASE("gh_logpdf") {
    // NIG closed form
    const double a = 2.0, b = 1.0, d = 1.0, mu = 0.0, g = std::sqrt(a * a - b * b);
    for (double y : {-1.0, 0.0, 2.0}) {
        const double q = std::sqrt(d * d + (y - mu) * (y - mu));
        const double nig = std::log(a * d / std::numbers::pi) + d * g + b * (y - mu) +
                           std::log(boost::math::cyl_bessel_k(1.0, a * q)) - std::log(q);
        CHECK(rel_err(gh_logpdf(y, {-0.5, a, b, d, mu}), nig) < 1e-10);
    }
    // mixture integral
    const GhParams p{1.2, 2.06, 0.5, 1.5, 0.3};
    const double gam = p.gamma();
    for (double y : {1.0, -2.0, 4.5}) {
        const double mix = oracle::log_integral_exp([&](double s) {
            const double z = std::exp(s);
            return oracle::log_normal_pdf(y, p.mu + p.beta * z, z) + oracle::gig_logpdf_ref(z, p.lambda, p.delta, gam) + s;
        });
        CHECK(std::abs(std::exp(gh_logpdf(y, p)) - std::exp(mix)) < 1e-8 * std::exp(mix) + 1e-14);
    }
    const GhParams sym{0.7, 1.5, 0.0, 1.1, 0.0};
    for (double y : {0.3, 1.7, 6.0}) CHECK(rel_err(gh_logpdf(y, sym), gh_logpdf(-y, sym)) < 1e-14);
    CHECK_THROWS_AS(gh_logpdf(0.0, {1.0, 1.0, 2.0, 1.0, 0.0}), ghme::Error);
}

TEST_CASE("nig moments and inversion") {
    const GhParams p{-0.5, 2.0, 1.0, 1.0, 0.0};
    const auto m = nig_moments(p);
    CHECK(rel_err(m.mean, 1.0 / std::sqrt(3.0)) < 1e-14);
    CHECK(rel_err(m.variance, 4.0 / std::pow(3.0, 1.5)) < 1e-14);
    CHECK(nig_moments({-0.5, 2.0, 0.0, 1.0, 0.3}).skewness == 0.0);
    CHECK_THROWS_AS(nig_moments({1.0, 2.0, 1.0, 1.0, 0.0}), ghme::Error);

    const auto back = nig_from_moments(m);
    CHECK(std::abs(back.alpha - 2.0) < 1e-9);
    CHECK(std::abs(back.beta - 1.0) < 1e-9);
    CHECK(std::abs(back.delta - 1.0) < 1e-9);
    CHECK(std::abs(back.mu) < 1e-9);
    const auto sym = nig_from_moments({0.4, 1.3, 0.0, 2.0});
    CHECK(sym.beta == 0.0);
    CHECK(std::abs(sym.mu - 0.4) < 1e-14);
    try {
        nig_from_moments({0.0, 1.0, 0.0, -1.0});
        FAIL("expected InfeasibleMoments");
    } catch (const ghme::Error& e) {
        CHECK(e.kind() == ghme::ErrorKind::infeasible_moments);
    }

    // Monte Carlo: mu + beta Z + sqrt(Z) eta with Z ~ IG(delta, gamma)
    const std::size_t n = 4'000'000;
    const auto z = gig_sample({-0.5, p.delta, p.gamma()}, n, 11);
    std::mt19937_64 rng(12);
    std::normal_distribution<double> nd;
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = p.mu + p.beta * z[i] + std::sqrt(z[i]) * nd(rng);
    double mean = 0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(n);
    double c2 = 0, c3 = 0, c4 = 0;
    for (double v : y) {
        const double e = v - mean;
        c2 += e * e;
        c3 += e * e * e;
        c4 += e * e * e * e;
    }
    c2 /= static_cast<double>(n);
    c3 /= static_cast<double>(n);
    c4 /= static_cast<double>(n);
    const double skew = c3 / std::pow(c2, 1.5), kurt = c4 / (c2 * c2) - 3.0;
    CHECK(std::abs(mean - m.mean) < 3.0 * std::sqrt(m.variance / static_cast<double>(n)));
    CHECK(std::abs(c2 / m.variance - 1.0) < 0.01);
    CHECK(std::abs(skew - m.skewness) < 0.05 * std::abs(m.skewness));
    CHECK(std::abs(kurt - m.kurtosis) < 0.1 * m.kurtosis);
}
