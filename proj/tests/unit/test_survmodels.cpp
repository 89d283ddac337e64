#include "survnma/survmodels.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace survnma::survmodels;

namespace {

// Composite Simpson rule.
template <typename F>
double integrate(F f, double a, double b, int n = 20000) {
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
    return s * h / 3.0;
}

struct Constant {
    double rate;
    double hazard(double) const { return rate; }
    double cumulative_hazard(double t) const { return rate * t; }
};

std::vector<double> random_point(const PolyHazardLayout& layout, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-0.7, 0.7);
    std::vector<double> x(layout.size());
    for (double& v : x) v = u(rng);
    return x;
}

std::vector<Observation> make_data(std::size_t n, std::mt19937_64& rng, double max_t) {
    std::uniform_real_distribution<double> t(0.05, max_t);
    std::bernoulli_distribution e(0.6);
    std::vector<Observation> out(n);
    for (auto& o : out) o = {t(rng), e(rng)};
    return out;
}

} // namespace

TEST_CASE("component hazards in closed form") {
    HazardComponent w1{Family::weibull, 1, 5};
    for (double t : {0.1, 1.0, 7.0}) CHECK(w1.hazard(t) == doctest::Approx(0.2).epsilon(1e-14));
    HazardComponent ll{Family::loglogistic, 1, 1};
    CHECK(ll.hazard(1.0) == doctest::Approx(0.5).epsilon(1e-14));
    HazardComponent w2{Family::weibull, 2, 1};
    CHECK(component_hazard(w2, 3.0) == doctest::Approx(6.0).epsilon(1e-14));
    // Numeric derivative of -log S.
    const double h = 1e-5;
    double numeric = (w2.cumulative_hazard(3 + h) - w2.cumulative_hazard(3 - h)) / (2 * h);
    CHECK(numeric == doctest::Approx(6.0).epsilon(1e-8));
}

TEST_CASE("survival closed forms") {
    HazardComponent w{Family::weibull, 1, 10};
    CHECK(survival(w, 0.0) == 1.0);
    CHECK(survival(w, 10.0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
    CHECK(survival(w, 10.0) == doctest::Approx(0.3679).epsilon(1e-4));
    HazardComponent ll{Family::loglogistic, 2, 3};
    CHECK(ll.survival(3.0) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("poly hazard additivity and coupling") {
    std::vector<HazardComponent> pop{{Family::weibull, 1, 10}, {Family::weibull, 1, 1.0 / 0.3}};
    JointPolyHazard m(pop, pop, 1.0, Coupling{false, false});
    CHECK(poly_hazard(m, Group::population, 2.0) == doctest::Approx(0.4).epsilon(1e-14));

    JointPolyHazard c(pop, pop, 2.0, Coupling{true, false});
    CHECK(c.component_hazard(Group::disease, 0, 1.5) == doctest::Approx(0.2).epsilon(1e-14));

    std::vector<HazardComponent> p3{{Family::loglogistic, 1.2, 1}, {Family::loglogistic, 0.8, 4}, {Family::loglogistic, 3, 20}};
    std::vector<HazardComponent> d3{{Family::loglogistic, 9, 9}, {Family::loglogistic, 1.5, 2}, {Family::loglogistic, 9, 9}};
    JointPolyHazard tri(d3, p3, 1.7, Coupling{true, true});
    for (double t : {0.3, 2.0, 15.0, 60.0}) {
        CHECK(tri.component_hazard(Group::disease, 2, t) == tri.component_hazard(Group::population, 2, t));
        CHECK(tri.component_hazard(Group::disease, 0, t) / tri.component_hazard(Group::population, 0, t) ==
              doctest::Approx(1.7).epsilon(1e-14));
        double sum = 0;
        for (std::size_t k = 0; k < 3; ++k) sum += tri.component_cumulative_hazard(Group::disease, k, t);
        CHECK(tri.cumulative_hazard(Group::disease, t) == sum);
    }
}

TEST_CASE("poly survival matches quadrature of the hazard") {
    std::vector<HazardComponent> p{{Family::loglogistic, 2.4, 2}, {Family::weibull, 1.6, 12}};
    std::vector<HazardComponent> d{{Family::loglogistic, 2.4, 2}, {Family::weibull, 2.2, 5}};
    JointPolyHazard m(d, p, 1.3, Coupling{true, false});
    for (double t : {1.0, 10.0, 50.0}) {
        double H = integrate([&](double u) { return m.hazard(Group::disease, u); }, 0.0, t);
        CHECK(std::abs(std::exp(-H) - survival(m, Group::disease, t)) < 1e-6);
    }
}

TEST_CASE("censored likelihood: constant hazard and the f = hS identity") {
    Constant c{0.3};
    std::vector<Observation> cens{{2.0, false}}, ev{{2.0, true}};
    CHECK(loglik_censored(c, std::span<const Observation>(cens)) == doctest::Approx(-0.6).epsilon(1e-14));
    CHECK(loglik_censored(c, std::span<const Observation>(ev)) == doctest::Approx(std::log(0.3) - 0.6).epsilon(1e-14));

    std::mt19937_64 rng(4);
    auto data = make_data(50, rng, 12.0);
    HazardComponent w{Family::weibull, 1.3, 4};
    double density_form = 0;
    for (const auto& o : data) {
        // f(t) = (a/b)(t/b)^(a-1) exp(-(t/b)^a), written independently of the hazard code.
        double z = o.time / 4.0;
        double logS = -std::pow(z, 1.3);
        double logf = std::log(1.3 / 4.0) + 0.3 * std::log(z) + logS;
        density_form += o.event ? logf : logS;
    }
    CHECK(std::abs(loglik_censored(w, std::span<const Observation>(data)) - density_form) < 1e-10);
}

TEST_CASE("non-finite parameters give -inf, not NaN") {
    HazardComponent bad{Family::weibull, NAN, 1};
    std::vector<Observation> d{{1.0, true}};
    CHECK(loglik_censored(bad, std::span<const Observation>(d)) == -INFINITY);
}

TEST_CASE("joint likelihood: empty population reduces to the disease term; shared parameters enter both") {
    auto layout = PolyHazardLayout::from_model_name("tri-loglogistic", Coupling{true, true});
    std::mt19937_64 rng(2);
    auto x = random_point(layout, rng);
    auto model = layout.build(x);
    auto dis = make_data(30, rng, 5.0);
    auto pop = make_data(40, rng, 30.0);
    CHECK(joint_loglik(model, dis, {}) == loglik_censored(model, Group::disease, dis));

    // Third population component appears in both groups' likelihoods.
    auto y = x;
    y[4] += 0.1; // log shape of population component 3
    auto perturbed = layout.build(y);
    CHECK(loglik_censored(perturbed, Group::disease, dis) != loglik_censored(model, Group::disease, dis));
    CHECK(loglik_censored(perturbed, Group::population, pop) != loglik_censored(model, Group::population, pop));
}

TEST_CASE("analytic gradient matches central differences") {
    for (std::string name : {"bi-weibull", "bi-loglogistic", "tri-loglogistic"}) {
        Coupling cp{true, name == "tri-loglogistic"};
        auto layout = PolyHazardLayout::from_model_name(name, cp);
        std::mt19937_64 rng(17);
        for (int rep = 0; rep < 10; ++rep) {
            auto x = random_point(layout, rng);
            auto dis = make_data(40, rng, 6.0);
            auto pop = make_data(60, rng, 40.0);
            auto grad = layout.joint_loglik_gradient(x, dis, pop);
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double h = 1e-6;
                auto xp = x, xm = x;
                xp[i] += h;
                xm[i] -= h;
                double fd = (joint_loglik(layout.build(xp), dis, pop) - joint_loglik(layout.build(xm), dis, pop)) / (2 * h);
                CHECK(std::abs(grad[i] - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
            }
        }
    }
}

TEST_CASE("layout names, ordering constraint and prior") {
    auto layout = PolyHazardLayout::from_model_name("bi-weibull", Coupling{true, false});
    // 2 population components x 2 + 1 uncoupled disease component x 2 + log C
    CHECK(layout.size() == 7);
    CHECK(layout.disease_free(0) == false);
    CHECK(layout.disease_free(1) == true);
    std::vector<double> x(layout.size(), 0.0);
    x[1] = 0.0;
    x[3] = 1.0;
    CHECK(layout.ordered(x));
    x[3] = -1.0;
    CHECK_FALSE(layout.ordered(x));
    std::vector<double> zero(layout.size(), 0.0), one(layout.size(), 1.0);
    // Six N(0, 2^2) coordinates and one N(0, 1) coordinate.
    CHECK(layout.log_prior(one) - layout.log_prior(zero) == doctest::Approx(-0.5 * (6 * 0.25 + 1.0)).epsilon(1e-12));
    CHECK_THROWS(PolyHazardLayout::from_model_name("quad-weibull", Coupling{}));
}
