#include "survnma/simharness.hpp"

#include <doctest.h>

#include <chrono>
#include <cmath>
#include <numeric>

using namespace survnma;
using namespace survnma::simharness;

namespace {

PowerSimConfig small_config() {
    PowerSimConfig cfg;
    cfg.replications = 6;
    cfg.mcmc = inference::McmcConfig{2, 300, 300, 0, std::nullopt, 1};
    cfg.seed = 13;
    return cfg;
}

} // namespace

TEST_CASE("dataset design") {
    auto cfg = small_config();
    cfg.n_poor = 6;
    cfg.bias_magnitude = 1.0;
    auto ds = generate_power_dataset(cfg, 0);
    CHECK(ds.data.size() == 20);
    CHECK(ds.true_d == std::vector<double>{0.0, 0.5, 1.0, 1.5});
    int full = 0, partial = 0, none = 0;
    for (std::size_t j = 0; j < ds.data.size(); ++j) {
        CHECK(ds.data[j].covariance(0, 0) == doctest::Approx(0.04).epsilon(1e-15));
        if (ds.bias[j] == 1.0) {
            ++full;
            CHECK(ds.labels[j] == "high");
            CHECK(ds.weights[j] == 0.3);
        } else if (ds.bias[j] == 0.6) {
            ++partial;
            CHECK(ds.labels[j] == "medium");
            CHECK(ds.weights[j] == 0.6);
        } else {
            ++none;
            CHECK(ds.weights[j] == 1.0);
        }
    }
    CHECK(full == 3);
    CHECK(partial == 3);
    CHECK(none == 14);
    nma::Network(ds.treatments, ds.data).require_connected();

    cfg.bias_magnitude = 0;
    auto unbiased = generate_power_dataset(cfg, 0);
    for (double b : unbiased.bias) CHECK(b == 0.0);
    CHECK(std::count(unbiased.labels.begin(), unbiased.labels.end(), "low") == 14);

    auto again = generate_power_dataset(cfg, 0);
    for (std::size_t j = 0; j < again.data.size(); ++j) CHECK(again.data[j].y == unbiased.data[j].y);
    CHECK(generate_power_dataset(cfg, 1).data[0].y != unbiased.data[0].y);
}

TEST_CASE("config validation") {
    auto cfg = small_config();
    cfg.n_poor = 3;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg.n_poor = 22;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("contrast sampling variance is 2 sd^2 / n") {
    auto cfg = small_config();
    cfg.tau_true = 0;
    cfg.n_poor = 0;
    cfg.n_studies = 1;
    cfg.n_treatments = 2;
    const int n = 20000;
    double mean = 0, sq = 0;
    for (int r = 0; r < n; ++r) {
        const double y = generate_power_dataset(cfg, r).data[0].y[0];
        mean += y / n;
        sq += y * y / n;
    }
    const double var = sq - mean * mean;
    CHECK(std::abs(mean - 0.5) < 3 * std::sqrt(0.04 / n));
    // sd of a sample variance of Normal data: var sqrt(2 / (n - 1)).
    CHECK(std::abs(var - 0.04) < 3 * 0.04 * std::sqrt(2.0 / (n - 1)));
}

TEST_CASE("crps matches the naive double sum") {
    Rng rng = make_rng(2);
    std::normal_distribution<double> z;
    std::vector<double> x(300);
    for (auto& v : x) v = z(rng);
    double a = 0, b = 0;
    for (double u : x) a += std::abs(u - 0.3);
    for (double u : x)
        for (double w : x) b += std::abs(u - w);
    const double n = static_cast<double>(x.size());
    CHECK(crps(x, 0.3) == doctest::Approx(a / n - b / (2 * n * n)).epsilon(1e-12));
    CHECK(crps(std::vector<double>{1.0, 1.0}, 1.0) == 0.0);
    CHECK(crps(std::vector<double>{2.0}, 0.0) == 2.0);
}

TEST_CASE("unit weights make the two arms identical") {
    auto cfg = small_config();
    cfg.omega_medium = 1.0;
    cfg.omega_high = 1.0;
    auto r = run_power_study(cfg);
    REQUIRE(r.failures == 0);
    std::vector<ParameterRecord> typical, power;
    for (const auto& rec : r.records) (rec.model == "typical" ? typical : power).push_back(rec);
    REQUIRE(typical.size() == power.size());
    for (std::size_t i = 0; i < typical.size(); ++i) {
        CHECK(typical[i].mean == power[i].mean);
        CHECK(typical[i].variance == power[i].variance);
        CHECK(typical[i].lower == power[i].lower);
    }
}

TEST_CASE("metric identities and reproducibility") {
    auto cfg = small_config();
    auto a = run_power_study(cfg);
    auto b = run_power_study(cfg);
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].mean == b.records[i].mean);
        CHECK(a.records[i].lower == b.records[i].lower);
        CHECK(a.records[i].crps == b.records[i].crps);
    }
    for (const auto& [name, m] : a.metrics) {
        CHECK(m.replications == 6);
        CHECK(m.rmse >= std::abs(m.mean_bias));
        CHECK(m.coverage >= 0);
        CHECK(m.coverage <= 1);
        CHECK(m.runtime > 0);
        CHECK(m.ess_per_second > 0);
        CHECK(m.crps > 0);
        for (const auto& [p, mom] : parameter_moments(a.records, name))
            CHECK(mom.mse == doctest::Approx(mom.bias * mom.bias + mom.variance).epsilon(1e-12));
    }
    // Aggregation from the persisted CSV matches the in-memory result.
    auto reread = parse_records(format_records(a.records));
    for (const auto& [name, m] : a.metrics) {
        auto again = aggregate(reread, name, a.failures);
        CHECK(again.mean_bias == doctest::Approx(m.mean_bias).epsilon(1e-14));
        CHECK(again.rmse == doctest::Approx(m.rmse).epsilon(1e-14));
        CHECK(again.coverage == m.coverage);
        CHECK(again.cri_width == doctest::Approx(m.cri_width).epsilon(1e-14));
        CHECK(again.crps == doctest::Approx(m.crps).epsilon(1e-14));
    }
    auto svg = power_figure({"scenario"}, {a.metrics});
    CHECK(svg.find("<svg") == 0);
    CHECK(svg == power_figure({"scenario"}, {a.metrics}));
}

TEST_CASE("engine grid records every cell") {
    EngineStudyConfig cfg;
    cfg.studies = {7, 20};
    cfg.treatments = {4};
    cfg.taus = {0.3};
    cfg.replications = 3;
    cfg.mcmc = inference::McmcConfig{2, 200, 200, 0, std::nullopt, 1};
    auto start = std::chrono::steady_clock::now();
    auto r = run_engine_study(cfg);
    MESSAGE("engine grid: " << std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() << " s");
    CHECK(r.metrics.size() == 2);
    for (const auto& [label, m] : r.metrics) {
        CHECK(m.replications == 3);
        CHECK(m.ess_per_second > 0);
        CHECK(m.runtime > 0);
        CHECK(m.iterations_per_second > 0);
    }
}
