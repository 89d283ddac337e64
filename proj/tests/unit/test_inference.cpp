#include "survnma/inference.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

using namespace survnma;
using namespace survnma::inference;

namespace {

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double sd_of(const std::vector<double>& v) {
    double m = mean_of(v), s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / (v.size() - 1));
}

std::vector<std::vector<double>> iid_chains(int chains, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    std::vector<std::vector<double>> out(chains, std::vector<double>(n));
    for (auto& c : out)
        for (double& x : c) x = z(rng);
    return out;
}

} // namespace

TEST_CASE("standard normal target: moments and R-hat") {
    McmcConfig cfg{4, 1000, 5000, 11, std::nullopt, 1};
    auto draws = sample([](std::span<const double> x) { return -0.5 * x[0] * x[0]; }, {0.0}, {"x"}, cfg);
    auto pooled = draws.pooled(0);
    CHECK(std::abs(mean_of(pooled)) < 0.05);
    CHECK(std::abs(sd_of(pooled) - 1.0) < 0.05);
    REQUIRE(rhat(draws, 0));
    CHECK(*rhat(draws, 0) < 1.01);
    CHECK(draws.iterations_per_second > 0);
    CHECK(draws.runtime_seconds > 0);
}

TEST_CASE("normal(3, 2^2) lower quantile") {
    McmcConfig cfg{4, 1000, 5000, 5, std::nullopt, 1};
    auto draws = sample([](std::span<const double> x) { return -0.5 * (x[0] - 3) * (x[0] - 3) / 4.0; }, {3.0}, {"x"}, cfg);
    double q = quantile(draws.pooled(0), 0.025);
    // 3 - 1.959964 * 2
    CHECK(std::abs(q - (-0.919928)) < 0.12);
}

TEST_CASE("fixed seed gives bit-identical draws") {
    McmcConfig cfg{2, 200, 300, 42, std::nullopt, 1};
    auto target = [](std::span<const double> x) { return -0.5 * (x[0] * x[0] + 4 * x[1] * x[1]); };
    auto a = sample(target, {0.0, 0.0}, {"a", "b"}, cfg);
    auto b = sample(target, {0.0, 0.0}, {"a", "b"}, cfg);
    for (std::size_t p = 0; p < 2; ++p) CHECK(a.pooled(p) == b.pooled(p));
    cfg.seed = 43;
    auto c = sample(target, {0.0, 0.0}, {"a", "b"}, cfg);
    CHECK(a.pooled(0) != c.pooled(0));
}

TEST_CASE("correlated 5-d Gaussian: marginals within 3 MC SE") {
    const int p = 5;
    // Precision of an AR(1)-type covariance with rho = 0.5, unit marginal variances.
    McmcConfig cfg{4, 2000, 4000, 3, std::nullopt, 1};
    const double rho = 0.5;
    auto target = [&](std::span<const double> x) {
        double q = x[0] * x[0];
        for (int i = 1; i < p; ++i) {
            double e = x[i] - rho * x[i - 1];
            q += e * e / (1 - rho * rho);
        }
        return -0.5 * q;
    };
    std::vector<std::string> names;
    for (int i = 0; i < p; ++i) names.push_back("x" + std::to_string(i));
    auto draws = sample(target, std::vector<double>(p, 0.0), names, cfg);
    for (int i = 0; i < p; ++i) {
        auto v = draws.pooled(i);
        double n_eff = *ess(draws, i);
        double se = 1.0 / std::sqrt(n_eff);
        CHECK(std::abs(mean_of(v)) < 3 * se);
        CHECK(std::abs(sd_of(v) - 1.0) < 3 * se);
    }
}

TEST_CASE("init fails when the target is -inf everywhere") {
    McmcConfig cfg{1, 10, 10, 0, std::nullopt, 1};
    CHECK_THROWS_AS(sample([](std::span<const double>) { return -INFINITY; }, {0.0}, {"x"}, cfg), std::runtime_error);
}

TEST_CASE("non-finite target during sampling is rejected, not fatal") {
    McmcConfig cfg{2, 500, 1000, 9, std::nullopt, 1};
    auto draws = sample([](std::span<const double> x) { return x[0] < 0 ? NAN : -x[0]; }, {1.0}, {"x"}, cfg);
    for (double v : draws.pooled(0)) CHECK(v >= 0);
}

TEST_CASE("config validation") {
    McmcConfig cfg{0, 10, 10, 0, std::nullopt, 1};
    CHECK_THROWS(cfg.validate());
    cfg = {1, 10, 0, 0, std::nullopt, 1};
    CHECK_THROWS(cfg.validate());
    cfg = {1, 10, 10, 0, std::nullopt, 0};
    CHECK_THROWS(cfg.validate());
}

TEST_CASE("R-hat on iid, non-mixing, constant and single chains") {
    auto same = iid_chains(1, 4000, 1);
    std::vector<std::vector<double>> identical{same[0], same[0]};
    auto r = rhat(identical);
    REQUIRE(r);
    CHECK(*r >= 0.99);
    CHECK(*r <= 1.01);

    std::vector<std::vector<double>> stuck{std::vector<double>(100, 0.0), std::vector<double>(100, 5.0)};
    auto r2 = rhat(stuck);
    REQUIRE(r2);
    CHECK(*r2 > 1.1);

    std::vector<std::vector<double>> constant{std::vector<double>(100, 2.0), std::vector<double>(100, 2.0)};
    CHECK_FALSE(rhat(constant).has_value());
    CHECK_FALSE(ess(constant).has_value());

    auto single = iid_chains(1, 1000, 2);
    auto r3 = rhat(single);
    REQUIRE(r3);
    CHECK(std::isfinite(*r3));
}

TEST_CASE("ESS of iid and AR(1) draws") {
    auto iid = iid_chains(4, 1000, 7);
    auto e = ess(iid);
    REQUIRE(e);
    CHECK(*e >= 3000);
    CHECK(*e <= 4400);

    std::mt19937_64 rng(8);
    std::normal_distribution<double> z;
    const double rho = 0.9;
    std::vector<std::vector<double>> ar(4, std::vector<double>(5000));
    for (auto& c : ar) {
        double x = z(rng) / std::sqrt(1 - rho * rho);
        for (double& v : c) {
            x = rho * x + z(rng);
            v = x;
        }
    }
    const double n = 20000, expected = n * (1 - rho) / (1 + rho);
    auto e2 = ess(ar);
    REQUIRE(e2);
    CHECK(*e2 > expected / 1.5);
    CHECK(*e2 < expected * 1.5);

    auto tiny = iid_chains(1, 10, 9);
    auto e3 = ess(tiny);
    REQUIRE(e3);
    CHECK(*e3 > 0);
}

TEST_CASE("conjugate Normal update") {
    std::vector<double> y{2.0}, v{1.0};
    auto post = conjugate_normal_check(0, 100, y, v);
    CHECK(post.mean == doctest::Approx(2.0 * 100.0 / 101.0).epsilon(1e-12));
    CHECK(post.mean == doctest::Approx(1.9802).epsilon(1e-4));
    CHECK(post.variance == doctest::Approx(100.0 / 101.0).epsilon(1e-12));

    std::vector<double> y2{1.0, 3.0}, v2{1.0, 3.0};
    auto flat = conjugate_normal_check(0, INFINITY, y2, v2);
    CHECK(flat.mean == doctest::Approx((1.0 / 1 + 3.0 / 3) / (1.0 + 1.0 / 3)).epsilon(1e-12));

    std::vector<double> one{1.0}, var1{2.0}, two{1.0, 1.0}, var2{2.0, 2.0};
    auto a = conjugate_normal_check(0, INFINITY, one, var1);
    auto b = conjugate_normal_check(0, INFINITY, two, var2);
    CHECK(b.variance == doctest::Approx(a.variance / 2).epsilon(1e-12));
}

TEST_CASE("summaries are recomputable from raw draws") {
    McmcConfig cfg{2, 200, 500, 1, std::nullopt, 1};
    auto draws = sample([](std::span<const double> x) { return -0.5 * x[0] * x[0]; }, {0.0}, {"x"}, cfg);
    auto s = draws.summary(0);
    auto v = draws.pooled(0);
    CHECK(std::abs(s.mean - mean_of(v)) < 1e-12);
    CHECK(std::abs(s.sd - sd_of(v)) < 1e-12);
    CHECK(std::abs(s.q50 - quantile(v, 0.5)) < 1e-12);
}

TEST_CASE("Gibbs block and output transform") {
    // Exact draws of N(1, 1) through a Gibbs block, recorded as exp(x).
    Model m;
    m.names = {"x"};
    m.init = {0.0};
    m.blocks.push_back(GibbsBlock{[](std::span<double> s, Rng& rng) {
        std::normal_distribution<double> z(1.0, 1.0);
        s[0] = z(rng);
    }});
    m.output_names = {"ex"};
    m.transform = [](std::span<const double> s, std::span<double> out) { out[0] = std::exp(s[0]); };
    McmcConfig cfg{2, 10, 4000, 4, std::nullopt, 1};
    auto draws = sample(m, cfg);
    CHECK(draws.names() == std::vector<std::string>{"ex"});
    // E[exp(X)] = exp(1.5) for X ~ N(1, 1)
    CHECK(mean_of(draws.pooled(0)) == doctest::Approx(std::exp(1.5)).epsilon(0.08));
}

TEST_CASE("thinning keeps every k-th sampling iteration") {
    McmcConfig cfg{1, 50, 100, 1, std::nullopt, 5};
    auto draws = sample([](std::span<const double> x) { return -0.5 * x[0] * x[0]; }, {0.0}, {"x"}, cfg);
    CHECK(draws.iterations() == 20);
}

TEST_CASE("tempered replicas cross between separated modes") {
    // Equal mixture of N(-15, 1) and N(15, 1): a plain random walk stays in one mode.
    auto bimodal = [](std::span<const double> x) {
        double a = -0.5 * (x[0] + 15) * (x[0] + 15), b = -0.5 * (x[0] - 15) * (x[0] - 15);
        double m = std::max(a, b);
        return m + std::log(std::exp(a - m) + std::exp(b - m));
    };
    Model model;
    model.names = {"x"};
    model.init = {-15.0};
    model.jitter = 0.1;
    model.log_density = bimodal;
    McmcConfig cfg{4, 1000, 10000, 5, std::nullopt, 1};

    auto plain = sample(model, cfg);
    for (int c = 0; c < 4; ++c) CHECK(mean_of(plain.chain(c, 0)) < -10.0);

    model.replicas = 10;
    model.max_temperature = 1000.0;
    auto tempered = sample(model, cfg);
    for (int c = 0; c < 4; ++c) {
        auto v = tempered.chain(c, 0);
        double right = 0;
        for (double x : v) right += x > 0 ? 1.0 : 0.0;
        right /= static_cast<double>(v.size());
        CHECK(right > 0.3);
        CHECK(right < 0.7);
    }
    CHECK(std::abs(mean_of(tempered.pooled(0))) < 3.0);
    CHECK(*rhat(tempered, 0) < 1.05);
}

TEST_CASE("tempering requires a full density and no Gibbs blocks") {
    Model model;
    model.names = {"x"};
    model.init = {0.0};
    model.log_density = [](std::span<const double> x) { return -0.5 * x[0] * x[0]; };
    model.replicas = 3;
    model.blocks.emplace_back(GibbsBlock{[](std::span<double>, Rng&) {}});
    CHECK_THROWS(sample(model, McmcConfig{1, 10, 10, 0, std::nullopt, 1}));
    model.blocks.clear();
    model.max_temperature = 1.0;
    CHECK_THROWS(sample(model, McmcConfig{1, 10, 10, 0, std::nullopt, 1}));
}
