#include "survnma/mst.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace survnma::mst;

namespace {

SurvivalCurve exponential_curve(double rate, double step, double t_max) {
    SurvivalCurve c;
    const auto n = static_cast<long>(std::llround(t_max / step));
    for (long i = 0; i <= n; ++i) {
        double t = i * step;
        c.times.push_back(t);
        c.values.push_back(std::exp(-rate * t));
    }
    return c;
}

SurvivalCurve random_curve(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> rate(0.02, 0.5), len(5.0, 60.0);
    std::uniform_int_distribution<int> pts(3, 60);
    SurvivalCurve c;
    const int n = pts(rng);
    const double L = len(rng), r = rate(rng);
    for (int i = 0; i <= n; ++i) {
        double t = L * i / n;
        c.times.push_back(t);
        c.values.push_back(std::exp(-r * t));
    }
    return c;
}

} // namespace

TEST_CASE("trapezium rule: rectangle, triangle, exponential") {
    SurvivalCurve flat{{0.0, 10.0}, {1.0, 1.0}};
    CHECK(mst(flat) == 10.0);
    SurvivalCurve linear{{0.0, 2.0}, {1.0, 0.0}};
    CHECK(mst(linear) == 1.0);
    auto e = exponential_curve(0.1, 0.01, 120.0);
    CHECK(std::abs(mst(e) - 10.0 * (1.0 - std::exp(-12.0))) < 1e-3);
}

TEST_CASE("trapezium error bound on exponential and Weibull curves") {
    for (double step : {0.1, 0.01}) {
        auto e = exponential_curve(0.2, step, 80.0);
        double truth = 5.0 * (1.0 - std::exp(-16.0));
        // |S''| <= 0.04
        CHECK(std::abs(mst(e) - truth) <= 80.0 / 12.0 * step * step * 0.04 + 1e-12);

        // Weibull shape 2, scale 5: S = exp(-(t/5)^2); integral to infinity = 5 sqrt(pi)/2.
        SurvivalCurve w;
        for (long i = 0; i <= std::llround(40.0 / step); ++i) {
            double t = i * step;
            w.times.push_back(t);
            w.values.push_back(std::exp(-(t / 5) * (t / 5)));
        }
        const double max_s2 = 2.0 / 25.0; // |S''| peaks at t=0 with value 2/b^2
        CHECK(std::abs(mst(w) - 5.0 * std::sqrt(M_PI) / 2.0) <= 40.0 / 12.0 * step * step * max_s2 + 1e-12);
    }
}

TEST_CASE("extrapolation stops at the first grid point below epsilon") {
    ExtrapolationOptions opt;
    auto c = extrapolate([](double t) { return std::exp(-0.1 * t); }, opt);
    CHECK(c.t_max() == doctest::Approx(-std::log(1e-4) / 0.1).epsilon(1e-3));
    CHECK(c.terminal() < 1e-4);
    CHECK(c.values[c.values.size() - 2] >= 1e-4);
    CHECK_FALSE(c.heavy_tail);
    c.validate();

    ExtrapolationOptions loose{0.01, 0.01, 110.0};
    auto d = extrapolate([](double t) { return std::exp(-t); }, loose);
    CHECK(d.t_max() == doctest::Approx(4.61).epsilon(1e-9));

    // Log-logistic with shape 1: S = 1/(1 + t), still about 0.009 at 110; shape 0.8 stays above 0.01.
    auto heavy = extrapolate([](double t) { return 1.0 / (1.0 + std::pow(t, 0.8)); }, opt);
    CHECK(heavy.heavy_tail);
    CHECK(heavy.t_max() == doctest::Approx(110.0));

    CHECK_THROWS(extrapolate([](double) { return 1.0; }, ExtrapolationOptions{0.0, 1e-4, 10}));
    CHECK_THROWS(extrapolate([](double) { return 1.0; }, ExtrapolationOptions{0.1, 0.5, 10}));
}

TEST_CASE("lyg: identity, closed form, antisymmetry") {
    auto a = exponential_curve(0.05, 0.01, 400.0);
    auto b = exponential_curve(0.1, 0.01, 200.0);
    CHECK(lyg(a, a) == 0.0);
    CHECK(std::abs(lyg(a, b) - 10.0) < 2e-3);
    CHECK(lyg(a, b) == -lyg(b, a));
}

TEST_CASE("consistency identity on random triples with a common horizon") {
    std::mt19937_64 rng(77);
    for (int rep = 0; rep < 1000; ++rep) {
        auto A = random_curve(rng), B = random_curve(rng), C = random_curve(rng);
        double h = std::max({A.t_max(), B.t_max(), C.t_max()});
        double bc = lyg(B, C, h), ac = lyg(A, C, h), ab = lyg(A, B, h);
        CHECK(std::abs(bc - (ac - ab)) < 1e-12);
    }
}

TEST_CASE("study contrasts: two-arm, three-arm and degenerate draws") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> z;
    const int n = 20000;
    std::vector<double> m1(n), m2(n), m3(n);
    for (int i = 0; i < n; ++i) {
        m1[i] = 5 + 0.8 * z(rng);
        m2[i] = 6 + 0.5 * z(rng);
        m3[i] = 7 + 0.3 * z(rng);
    }
    auto two = study_contrasts("S", {"A", "B"}, {m1, m2});
    REQUIRE(two.dimension() == 1);
    double mean = 0, var = 0;
    for (int i = 0; i < n; ++i) mean += (m2[i] - m1[i]) / n;
    for (int i = 0; i < n; ++i) var += (m2[i] - m1[i] - mean) * (m2[i] - m1[i] - mean) / (n - 1);
    CHECK(two.y[0] == doctest::Approx(mean).epsilon(1e-12));
    CHECK(two.covariance(0, 0) == doctest::Approx(var).epsilon(1e-10));

    auto three = study_contrasts("S", {"A", "B", "C"}, {m1, m2, m3});
    auto emp = study_contrasts("S", {"A", "B", "C"}, {m1, m2, m3}, CovarianceMode::empirical);
    // var(MST_1) = 0.64; the empirical covariance of (LYG_2, LYG_3) estimates the same quantity.
    const double se = 0.64 * std::sqrt(2.0 / n) * 3;
    CHECK(std::abs(three.covariance(0, 1) - 0.64) < 3 * se);
    CHECK(std::abs(three.covariance(0, 1) - emp.covariance(0, 1)) < 3 * se);
    CHECK(min_eigenvalue(three.covariance) >= -1e-10);
    CHECK(min_eigenvalue(emp.covariance) >= -1e-10);

    std::vector<double> c(100, 3.0), d(100, 4.0);
    auto deg = study_contrasts("S", {"A", "B"}, {c, d});
    CHECK(deg.degenerate);
    CHECK(deg.covariance(0, 0) == 0.0);
    CHECK(deg.y[0] == 1.0);

    CHECK_THROWS(study_contrasts("S", {"A", "B"}, {c, std::vector<double>(99, 1.0)}));
}

TEST_CASE("shared-control covariance is always positive semi-definite") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> z;
    for (int rep = 0; rep < 50; ++rep) {
        const int n = 30;
        std::vector<std::vector<double>> arms(4, std::vector<double>(n));
        for (int a = 0; a < 4; ++a)
            for (double& v : arms[a]) v = 5 + (a == 0 ? 3.0 : 0.1) * z(rng);
        auto c = study_contrasts("S", {"A", "B", "C", "D"}, arms);
        CHECK(min_eigenvalue(c.covariance) >= -1e-10);
    }
}

TEST_CASE("survival curve validation and interpolation") {
    SurvivalCurve c{{0.0, 1.0, 2.0}, {1.0, 0.5, 0.25}};
    c.validate();
    CHECK(c.at(0.5) == 0.75);
    CHECK(c.at(5.0) == 0.25);
    SurvivalCurve bad{{0.0, 1.0}, {1.0, 1.1}};
    CHECK_THROWS(bad.validate());
    SurvivalCurve start{{0.0, 1.0}, {0.9, 0.5}};
    CHECK_THROWS(start.validate());
}
