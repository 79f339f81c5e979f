#include "doctest.h"
#include "oracles.hpp"

#include "ghme/errors.hpp"
#include "ghme/specfun.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace ghme::specfun;
using oracle::rel_err;

namespace {

double k_half(double t) { return std::sqrt(std::numbers::pi / (2.0 * t)) * std::exp(-t); }
double k_three_halves(double t) { return k_half(t) * (1.0 + 1.0 / t); }

}  // namespace

TEST_CASE("bessel_k half-integer closed forms") {
    CHECK(rel_err(bessel_k(0.5, 2.0), std::sqrt(std::numbers::pi / 4.0) * std::exp(-2.0)) < 1e-12);
    CHECK(rel_err(bessel_k(0.5, 2.0), 0.1199377) < 1e-6);
    for (double t : {1e-4, 0.01, 0.3, 1.0, 2.5, 10.0, 60.0, 300.0}) {
        CHECK(rel_err(bessel_k(0.5, t), k_half(t)) < 1e-12);
        CHECK(rel_err(bessel_k(1.5, t), k_three_halves(t)) < 1e-12);
        CHECK(rel_err(bessel_k(-1.5, t), k_three_halves(t)) < 1e-12);
    }
}

TEST_CASE("bessel_k against quadrature of the defining integral") {
    CHECK(rel_err(bessel_k(1.0, 1.0), oracle::bessel_k_quad(1.0, 1.0)) < 1e-12);
    CHECK(rel_err(bessel_k(1.0, 1.0), 0.6019072301972346) < 1e-12);
    for (double nu : {0.0, 0.2, 0.7, 1.3, 2.6, 5.1, 12.4})
        for (double t : {1e-6, 1e-3, 0.1, 0.9, 1.7, 4.0, 11.0, 35.0, 120.0, 650.0}) {
            INFO("nu=" << nu << " t=" << t);
            CHECK(rel_err(log_bessel_k(nu, t), oracle::log_bessel_k_quad(nu, t)) < 1e-12 * 50);
            if (std::isfinite(std::exp(oracle::log_bessel_k_quad(nu, t))) && t <= 700)
                CHECK(rel_err(bessel_k(nu, t), oracle::bessel_k_quad(nu, t)) < 1e-12 * 50);
            CHECK(rel_err(bessel_k(nu, t), boost::math::cyl_bessel_k(nu, t)) < 1e-12 * 50);
        }
}

TEST_CASE("bessel_k recurrence and symmetry") {
    const double r = bessel_k(2.2, 1.05) - (2.0 * 1.2 / 1.05) * bessel_k(1.2, 1.05) - bessel_k(0.2, 1.05);
    CHECK(std::abs(r) / bessel_k(2.2, 1.05) < 1e-10);
    for (double nu = -7.5; nu <= 7.5; nu += 0.37)
        for (double t : {0.05, 0.8, 3.3, 17.0}) {
            INFO("nu=" << nu << " t=" << t);
            const double lhs = bessel_k(nu + 1, t), rhs = (2.0 * nu / t) * bessel_k(nu, t) + bessel_k(nu - 1, t);
            // residual relative to the largest term of the recurrence
            const double scale = std::max({std::abs(lhs), std::abs(2.0 * nu / t * bessel_k(nu, t)), bessel_k(nu - 1, t)});
            CHECK(std::abs(lhs - rhs) / scale < 1e-10);
            CHECK(rel_err(bessel_k(-nu, t), bessel_k(nu, t)) < 1e-12);
        }
}

TEST_CASE("bessel_k is decreasing in t and positive") {
    for (double nu : {0.0, 0.5, 3.2}) {
        double prev = bessel_k(nu, 0.01);
        for (double t = 0.02; t < 50.0; t *= 1.3) {
            const double cur = bessel_k(nu, t);
            CHECK(cur > 0.0);
            CHECK(cur < prev);
            prev = cur;
        }
    }
}

TEST_CASE("log_bessel_k large arguments") {
    CHECK(rel_err(log_bessel_k(0.5, 100.0), 0.5 * std::log(std::numbers::pi / 200.0) - 100.0) < 1e-14);
    const double t = 500.0, mu = 16.0;
    // Hankel expansion, three terms.
    const double series = 1.0 + (mu - 1) / (8 * t) + (mu - 1) * (mu - 9) / (2 * 64 * t * t) +
                          (mu - 1) * (mu - 9) * (mu - 25) / (6 * 512 * t * t * t);
    const double asym = 0.5 * std::log(std::numbers::pi / (2 * t)) - t + std::log(series);
    CHECK(rel_err(log_bessel_k(2.0, 500.0), asym) < 1e-5);
    CHECK(rel_err(log_bessel_k(2.0, 500.0), oracle::log_bessel_k_quad(2.0, 500.0)) < 1e-12);
    CHECK(std::isfinite(log_bessel_k(3.0, 1e5)));
    CHECK(rel_err(log_bessel_k(1.3, 3.7), std::log(bessel_k(1.3, 3.7))) < 1e-12);
    CHECK(bessel_k(1.0, 800.0) >= 0.0);
}

TEST_CASE("bessel functions reject bad arguments") {
    CHECK_THROWS_AS(bessel_k(1.0, 0.0), ghme::Error);
    CHECK_THROWS_AS(log_bessel_k(1.0, -1.0), ghme::Error);
    CHECK_THROWS_AS(bessel_k(std::nan(""), 1.0), ghme::Error);
    CHECK_THROWS_AS(ratio_R(1.0, 0.0), ghme::Error);
    CHECK_THROWS_AS(curvature_S(1.0, -2.0), ghme::Error);
    CHECK_THROWS_AS(mixed_L(1.0, 0.0), ghme::Error);
    CHECK_THROWS_AS(bessel_k_dnu(1.0, 0.0, 1), ghme::Error);
    try {
        bessel_k(1.0, -1.0);
    } catch (const ghme::Error& e) {
        CHECK(e.kind() == ghme::ErrorKind::domain);
    }
}

TEST_CASE("order derivatives") {
    for (double t : {0.3, 1.0, 7.0}) CHECK(std::abs(bessel_k_dnu(0.0, t, 1)) < 1e-10 * bessel_k(0.0, t));
    const auto f = [](double nu) { return bessel_k(nu, 2.0); };
    const double fd = oracle::derivative([](double nu) { return boost::math::cyl_bessel_k(nu, 2.0); }, 1.2, 1e-2);
    CHECK(rel_err(bessel_k_dnu(1.2, 2.0, 1), fd) < 1e-7);
    CHECK(rel_err(bessel_k_dnu(1.2, 2.0, 1), oracle::derivative(f, 1.2, 1e-2)) < 1e-7);
    CHECK(rel_err(bessel_k_dnu(-0.5, 1.5, 2), bessel_k_dnu(0.5, 1.5, 2)) < 1e-10);
    const double fd2 = oracle::second_derivative([](double nu) { return boost::math::cyl_bessel_k(nu, 1.5); }, 0.5, 2e-2);
    CHECK(rel_err(bessel_k_dnu(0.5, 1.5, 2), fd2) < 1e-6);
}

TEST_CASE("ratio_R") {
    for (double t : {0.01, 0.5, 3.0, 90.0}) CHECK(std::abs(ratio_R(0.5, t) - 1.0) < 1e-13);
    CHECK(rel_err(ratio_R(1.2, 3.0), oracle::bessel_k_quad(0.2, 3.0) / oracle::bessel_k_quad(1.2, 3.0)) < 1e-12);
    const double nu = 0.9, t = 2.2;
    const double fd = oracle::derivative([&](double s) { return oracle::log_bessel_k_quad(nu, s); }, t, 1e-2);
    CHECK(rel_err(-ratio_R(nu, t) - nu / t, fd) < 1e-7);
}

TEST_CASE("curvature_S") {
    const double t = 1.0;
    const double km12 = k_half(t), kp12 = k_half(t), km32 = k_three_halves(t);
    CHECK(rel_err(curvature_S(0.5, t), (km12 * km12 - km32 * kp12) / (kp12 * kp12)) < 1e-12);
    const double a = oracle::bessel_k_quad(0.5, 2.5), b = oracle::bessel_k_quad(-0.5, 2.5),
                 c = oracle::bessel_k_quad(1.5, 2.5);
    CHECK(rel_err(curvature_S(1.5, 2.5), (a * a - b * c) / (c * c)) < 1e-11);
    for (auto [nu, s] : {std::pair{0.8, 4.0}, std::pair{2.3, 0.7}, std::pair{-1.1, 12.0}}) {
        const double fd2 = oracle::second_derivative([&](double x) { return oracle::log_bessel_k_quad(nu, x); }, s, 0.05);
        CHECK(rel_err(-curvature_S(nu, s) - ratio_R(nu, s) / s + nu / (s * s), fd2) < 1e-6);
    }
}

TEST_CASE("mixed_L") {
    const double nu = 1.2, z = 2.0;
    const double k0 = bessel_k(nu, z), k1 = bessel_k(nu - 1, z);
    const double expected = (bessel_k_dnu(nu - 1, z, 1) * k0 - bessel_k_dnu(nu, z, 1) * k1) / (k0 * k0);
    CHECK(rel_err(mixed_L(nu, z), expected) < 1e-9);
    CHECK(std::abs(mixed_L(1.0, 200.0)) < 1e-2);
    const double fd = oracle::derivative([](double n) { return ratio_R(n, 1.7); }, 0.9, 1e-2);
    CHECK(rel_err(mixed_L(0.9, 1.7), fd) < 1e-6);
}

TEST_CASE("log_bessel_k_derivs is consistent with the scalar helpers") {
    for (auto [nu, t] : {std::pair{-3.5, 0.4}, std::pair{0.3, 2.0}, std::pair{6.0, 40.0}}) {
        const auto d = log_bessel_k_derivs(nu, t, true);
        CHECK(rel_err(d.log_k, log_bessel_k(nu, t)) < 1e-14);
        CHECK(rel_err(d.ratio, ratio_R(nu, t)) < 1e-13);
        CHECK(rel_err(d.d_t, -ratio_R(nu, t) - nu / t) < 1e-12);
        CHECK(rel_err(d.d_nu, bessel_k_dnu(nu, t, 1) / bessel_k(nu, t)) < 1e-8);
        const double fd = oracle::derivative([&](double n) { return oracle::log_bessel_k_quad(n, t); }, nu, 1e-2);
        CHECK(rel_err(d.d_nu, fd) < 1e-7);
        CHECK(rel_err(d.d_nut, -mixed_L(nu, t) - 1.0 / t) < 1e-8);
    }
}
