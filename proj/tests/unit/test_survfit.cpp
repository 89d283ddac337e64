#include "survnma/survfit.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

using namespace survnma;
using namespace survnma::survmodels;
using namespace survnma::survfit;

namespace {

// Inverse-transform draw from a cumulative hazard by bisection, censored at `cens`.
template <class H>
std::vector<Observation> simulate(const H& cumhaz, std::size_t n, double cens, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Observation> out;
    for (std::size_t i = 0; i < n; ++i) {
        const double target = -std::log(1.0 - u(rng));
        double lo = 0, hi = 1;
        while (cumhaz(hi) < target && hi < 1e4) hi *= 2;
        for (int it = 0; it < 80; ++it) {
            double mid = (lo + hi) / 2;
            (cumhaz(mid) < target ? lo : hi) = mid;
        }
        const double t = (lo + hi) / 2;
        out.push_back(t < cens ? Observation{t, true} : Observation{cens, false});
    }
    return out;
}

} // namespace

TEST_CASE("alr inverse is a simplex with the last category as reference") {
    auto p = alr_inverse(std::vector<double>{0.0, 0.0, 0.0});
    REQUIRE(p.size() == 4);
    for (double v : p) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
    auto q = alr_inverse(std::vector<double>{800.0, -3.0});
    CHECK(std::accumulate(q.begin(), q.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(q[0] == doctest::Approx(1.0));
    for (double v : q) CHECK(std::isfinite(v));
    auto r = alr_inverse(std::vector<double>{std::log(2.0)});
    CHECK(r[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("fast group likelihood agrees with the generic censored likelihood") {
    Rng rng = make_rng(3);
    std::uniform_real_distribution<double> u(-0.8, 0.8);
    for (const char* name : {"bi-weibull", "bi-loglogistic", "tri-loglogistic"}) {
        auto layout = PolyHazardLayout::from_model_name(name, Coupling{true, std::string(name) == "tri-loglogistic"});
        auto data = simulate([](double t) { return 0.2 * t + 0.01 * t * t; }, 200, 8.0, 4);
        PreparedData prepared(data);
        for (int rep = 0; rep < 20; ++rep) {
            std::vector<double> x(layout.size());
            for (auto& v : x) v = u(rng);
            auto model = layout.build(x);
            for (Group g : {Group::disease, Group::population}) {
                double fast = fast_group_loglik(model, g, prepared);
                double slow = loglik_censored(model, g, data);
                CHECK(fast == doctest::Approx(slow).epsilon(1e-10));
            }
        }
    }
}

TEST_CASE("bi-Weibull joint fit recovers the generating survival curves") {
    const Coupling coupling{true, false};
    JointPolyHazard model({{Family::weibull, 0.7, 3.0}, {Family::weibull, 3.0, 6.0}},
                          {{Family::weibull, 1.2, 20.0}, {Family::weibull, 5.0, 30.0}}, 4.0, coupling);
    auto disease = simulate([&](double t) { return model.cumulative_hazard(Group::disease, t); }, 400, 6.0, 11);
    auto population = simulate([&](double t) { return model.cumulative_hazard(Group::population, t); }, 2000, 40.0, 12);

    auto layout = PolyHazardLayout::from_model_name("bi-weibull", coupling);
    inference::McmcConfig cfg{2, 1500, 500, 5, std::nullopt, 1};
    auto fit = fit_poly_hazard(layout, disease, population, cfg);
    for (double t : {1.0, 3.0, 5.0}) {
        double mean = 0;
        for (std::size_t i = 0; i < fit.draws.total_draws(); ++i)
            mean += fit.model(i).survival(Group::disease, t) / fit.draws.total_draws();
        CHECK(std::abs(mean - model.survival(Group::disease, t)) < 0.05);
    }
    double mean_pop = 0;
    for (std::size_t i = 0; i < fit.draws.total_draws(); ++i)
        mean_pop += fit.model(i).survival(Group::population, 25.0) / fit.draws.total_draws();
    CHECK(std::abs(mean_pop - model.survival(Group::population, 25.0)) < 0.05);

    std::vector<Observation> none;
    CHECK_THROWS_AS(fit_poly_hazard(layout, disease, none, cfg), ValidationError);
    CHECK_NOTHROW(fit_poly_hazard(layout, disease, none, inference::McmcConfig{1, 50, 50, 1, std::nullopt, 1}, true));
}

TEST_CASE("M-spline excess-hazard fit recovers a constant excess") {
    PiecewiseConstantHazard background{{0.0, 5.0}, {0.02, 0.05}};
    const double excess = 0.3;
    auto data = simulate([&](double t) { return excess * t + background.cumulative_hazard(t); }, 500, 6.0, 21);
    std::vector<double> events;
    for (const auto& o : data)
        if (o.event) events.push_back(o.time);
    MSplineBasis basis(default_knots(events, 6.0, 3), 3);
    inference::McmcConfig cfg{2, 1000, 500, 9, std::nullopt, 1};
    auto fit = fit_mspline(data, basis, background, cfg);
    for (double t : {1.0, 3.0, 5.0}) {
        double mean = 0;
        for (std::size_t i = 0; i < fit.draws.total_draws(); ++i) mean += fit.model(i).survival(t) / fit.draws.total_draws();
        CHECK(std::abs(mean - std::exp(-excess * t - background.cumulative_hazard(t))) < 0.05);
    }
    for (std::size_t i = 0; i < fit.draws.total_draws(); i += 50) {
        auto m = fit.model(i);
        CHECK(std::accumulate(m.coefficients.begin(), m.coefficients.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(m.scale > 0);
    }
}
