#include "survnma/mspline.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <stdexcept>

using namespace survnma::survmodels;

namespace {

// Gauss-Legendre 5-point rule on each of `pieces` equal sub-intervals.
template <typename F>
double gauss(F f, double a, double b, int pieces = 400) {
    static const double x[] = {0.0, -0.5384693101056831, 0.5384693101056831, -0.9061798459386640, 0.9061798459386640};
    static const double w[] = {0.5688888888888889, 0.4786286704993665, 0.4786286704993665, 0.2369268850561891,
                               0.2369268850561891};
    const double h = (b - a) / pieces;
    double s = 0;
    for (int k = 0; k < pieces; ++k) {
        double lo = a + k * h;
        for (int i = 0; i < 5; ++i) s += w[i] * 0.5 * h * f(lo + 0.5 * h * (x[i] + 1));
    }
    return s;
}

} // namespace

TEST_CASE("degree-1 basis on {0,1,2} is the triangular family") {
    MSplineBasis basis({0.0, 1.0, 2.0}, 1);
    REQUIRE(basis.size() == 3);
    auto v = basis.values(0.5);
    // B = (0.5, 0.5, 0); spans (1, 2, 1) -> M = 2 B / span
    CHECK(v[0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(v[1] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(v[2] == doctest::Approx(0.0));
    auto ints = basis.integrals(2.0);
    for (double i : ints) CHECK(i == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("every basis function integrates to one (independent quadrature)") {
    for (int degree : {1, 2, 3}) {
        MSplineBasis basis({0.0, 0.4, 1.1, 1.5, 3.0, 4.2, 8.0}, degree);
        for (std::size_t i = 0; i < basis.size(); ++i) {
            double q = gauss([&](double t) { return basis.values(t)[i]; }, 0.0, 8.0);
            CHECK(std::abs(q - 1.0) < 1e-8);
        }
    }
}

TEST_CASE("de-normalised basis is a partition of unity") {
    MSplineBasis basis({0.0, 1.0, 2.5, 4.0, 10.0}, 3);
    for (double t : {0.0, 0.3, 1.0, 2.7, 6.0, 9.99, 10.0}) {
        auto b = basis.bspline_values(t);
        CHECK(std::accumulate(b.begin(), b.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("continuity at interior knots for degree >= 2") {
    MSplineBasis basis({0.0, 1.0, 2.5, 4.0, 10.0}, 3);
    for (double k : {1.0, 2.5, 4.0}) {
        auto left = basis.values(k - 1e-9), right = basis.values(k + 1e-9), at = basis.values(k);
        for (std::size_t i = 0; i < basis.size(); ++i) {
            CHECK(std::abs(left[i] - at[i]) < 1e-6);
            CHECK(std::abs(right[i] - at[i]) < 1e-6);
        }
    }
}

TEST_CASE("evaluation outside the boundary knots is an error") {
    MSplineBasis basis({0.0, 1.0, 2.0}, 2);
    CHECK_THROWS_AS(basis.values(-0.1), std::domain_error);
    CHECK_THROWS_AS(basis.values(2.1), std::domain_error);
    CHECK_THROWS(MSplineBasis({0.0, 1.0, 1.0, 2.0}, 2));
    CHECK_THROWS(MSplineBasis({0.0, 1.0}, 0));
}

TEST_CASE("integrals agree with quadrature at intermediate points") {
    MSplineBasis basis({0.0, 0.7, 2.0, 3.3, 6.0}, 3);
    for (double t : {0.35, 1.9, 4.4}) {
        auto ints = basis.integrals(t);
        for (std::size_t i = 0; i < basis.size(); ++i)
            CHECK(std::abs(ints[i] - gauss([&](double u) { return basis.values(u)[i]; }, 0.0, t)) < 1e-10);
    }
}

TEST_CASE("M-spline hazard: background recovery, nonnegativity, constant tail") {
    MSplineBasis basis({0.0, 1.0, 2.0, 4.0, 6.0}, 3);
    const std::size_t n = basis.size();
    PiecewiseConstantHazard bg{{0.0, 2.0, 5.0}, {0.01, 0.02, 0.05}};
    std::vector<double> p(n, 1.0 / n);

    MSplineHazard none(basis, p, 0.0, bg);
    for (double t : {0.1, 1.9, 2.0, 3.3, 5.0, 9.0, 30.0}) {
        CHECK(none.hazard(t) == bg.hazard(t));
        CHECK(mspline_total_hazard(none, t) == bg.hazard(t));
        CHECK(none.cumulative_hazard(t) == bg.cumulative_hazard(t));
    }

    MSplineHazard m(basis, p, 0.8, bg);
    for (int i = 0; i <= 10000; ++i) CHECK(m.hazard(12.0 * i / 10000.0) >= 0);
    CHECK(m.excess_hazard(7.0) == m.excess_hazard(6.0));
    CHECK(m.excess_hazard(100.0) == m.excess_hazard(6.0));

    // Single active basis, no background: hazard proportional to that basis.
    std::vector<double> single(n, 0.0);
    single[2] = 1.0;
    MSplineHazard s(basis, single, 2.0, PiecewiseConstantHazard{{0.0}, {0.0}});
    for (double t : {0.5, 1.5, 3.0}) CHECK(s.hazard(t) == doctest::Approx(2.0 * basis.values(t)[2]).epsilon(1e-14));

    CHECK_THROWS(MSplineHazard(basis, std::vector<double>(n, 0.5), 1.0, bg));
}

TEST_CASE("survival from the M-spline hazard matches a fine Riemann sum") {
    MSplineBasis basis({0.0, 1.0, 2.0, 4.0, 6.0}, 3);
    const std::size_t n = basis.size();
    std::vector<double> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = (i + 1.0);
    double total = std::accumulate(p.begin(), p.end(), 0.0);
    for (double& v : p) v /= total;
    PiecewiseConstantHazard bg{{0.0, 3.0}, {0.02, 0.04}};
    MSplineHazard m(basis, p, 0.6, bg);
    for (double t : {0.5, 2.5, 5.9, 9.0}) {
        const int N = 200000;
        double h = t / N, H = 0;
        for (int i = 0; i < N; ++i) H += m.hazard((i + 0.5) * h) * h; // midpoint rule
        CHECK(std::abs(std::exp(-H) - m.survival(t)) < 1e-5);
    }
}

TEST_CASE("piecewise-constant hazard from a tabulated survival curve") {
    std::vector<double> t{0, 1, 2, 3}, s{1.0, std::exp(-0.1), std::exp(-0.3), std::exp(-0.6)};
    auto h = PiecewiseConstantHazard::from_survival(t, s);
    CHECK(h.hazard(0.5) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(h.hazard(1.5) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(h.hazard(2.5) == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(h.cumulative_hazard(3.0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(h.hazard(10.0) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("default knots sit at deciles of the event times") {
    std::vector<double> ev;
    for (int i = 1; i <= 100; ++i) ev.push_back(i / 10.0);
    auto k = default_knots(ev, 50.0);
    REQUIRE(k.size() == 11);
    CHECK(k.front() == 0.0);
    CHECK(k.back() == 50.0);
    for (std::size_t i = 1; i + 1 < k.size(); ++i) CHECK(k[i] > k[i - 1]);
}
