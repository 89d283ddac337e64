#include "survnma/mortality.hpp"

#include <doctest.h>

#include <chrono>
#include <cmath>
#include <random>

using namespace survnma;
using namespace survnma::mortality;

namespace {

data_io::MortalityTable constant_table(double m, int first_year = 2000, int years = 30) {
    data_io::MortalityTable t;
    t.country = "X";
    t.first_year = first_year;
    t.rates = Eigen::MatrixXd::Constant(102, years, m);
    return t;
}

// log m = alpha + beta kappa + eps with beta summing to one and kappa a drifting walk.
data_io::MortalityTable lee_carter_surface(double drift, double sigma_v, double sigma_eps, std::uint64_t seed,
                                           int years = 40) {
    Rng rng = make_rng(seed);
    std::normal_distribution<double> z;
    const int X = 102;
    Eigen::VectorXd alpha(X), beta(X), kappa(years);
    for (int x = 0; x < X; ++x) {
        alpha[x] = -9.0 + 0.085 * x;
        beta[x] = 1.0 + x;
    }
    beta /= beta.sum();
    kappa[0] = 0;
    for (int t = 1; t < years; ++t) kappa[t] = kappa[t - 1] + drift + sigma_v * z(rng);
    data_io::MortalityTable tab;
    tab.country = "SYN";
    tab.first_year = 1980;
    tab.rates.resize(X, years);
    for (int x = 0; x < X; ++x)
        for (int t = 0; t < years; ++t) tab.rates(x, t) = std::exp(alpha[x] + beta[x] * kappa[t] + sigma_eps * z(rng));
    return tab;
}

double naive_cohort(const std::function<double(int, int)>& rate, int x, int Y, int h) {
    double s = 0;
    for (int i = 0; i < h; ++i) s += rate(x + i, Y + i);
    return std::exp(-s);
}

} // namespace

TEST_CASE("constant mortality closed form") {
    auto proj = MortalityProjection::from_table(constant_table(0.02));
    auto cs = cohort_survival(proj, 60, 2000, 20);
    CHECK(cs.values(0, 0) == 1.0);
    CHECK(std::abs(cs.values(0, 10) - std::exp(-0.2)) < 1e-12);
    CHECK(cs.values(0, 10) == doctest::Approx(0.8187).epsilon(1e-4));
}

TEST_CASE("cohort survival equals the naive diagonal sum on arbitrary surfaces") {
    Rng rng = make_rng(31);
    std::uniform_real_distribution<double> u(0.001, 0.2);
    data_io::MortalityTable t = constant_table(0.01, 1990, 60);
    for (Eigen::Index a = 0; a < t.rates.rows(); ++a)
        for (Eigen::Index y = 0; y < t.rates.cols(); ++y) t.rates(a, y) = u(rng);
    auto proj = MortalityProjection::from_table(t);
    for (int x : {0, 30, 75}) {
        auto cs = cohort_survival(proj, x, 1995, 25);
        for (int h = 0; h <= 25; ++h) {
            double oracle = naive_cohort([&](int a, int y) { return t.rates(std::min(a, 101), y - 1990); }, x, 1995, h);
            CHECK(std::abs(cs.values(0, h) - oracle) < 1e-12);
            if (h > 0) CHECK(cs.values(0, h) <= cs.values(0, h - 1));
        }
    }
}

TEST_CASE("mortality increasing with age beats the flat-rate exponential") {
    data_io::MortalityTable t = constant_table(0.01, 2000, 60);
    for (int a = 0; a <= 101; ++a) t.rates.row(a).setConstant(0.005 * std::exp(0.05 * a));
    auto proj = MortalityProjection::from_table(t);
    const int x = 50;
    auto cs = cohort_survival(proj, x, 2000, 30);
    const double min_rate = t.rates(x, 0);
    for (int h = 2; h <= 30; ++h) CHECK(cs.values(0, h) < std::exp(-min_rate * h));
}

TEST_CASE("ages above 101 reuse the last rate and the cohort closes at 110") {
    auto proj = MortalityProjection::from_table(constant_table(0.3, 2000, 40));
    auto cs = cohort_survival(proj, 95, 2000, 20);
    CHECK(cs.values(0, 14) == doctest::Approx(std::exp(-0.3 * 14)).epsilon(1e-12));
    CHECK(cs.values(0, 15) == 0.0);
    CHECK(cs.values(0, 20) == 0.0);
    CHECK_THROWS(cohort_survival(proj, 111, 2000, 1));
    CHECK_THROWS(cohort_survival(proj, 40, 2030, 20)); // runs past the last year
}

TEST_CASE("Lee-Carter recovers a known drift") {
    auto tab = lee_carter_surface(-0.1, 0.02, 0.01, 8);
    inference::McmcConfig cfg{4, 500, 500, 1, std::nullopt, 1};
    auto start = std::chrono::steady_clock::now();
    auto fit = fit_lee_carter(tab, cfg);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    MESSAGE("Lee-Carter fit: " << secs << " s, max R-hat " << fit.max_rhat);
    double mean_u = 0;
    for (std::size_t i = 0; i < fit.size(); ++i) mean_u += fit.drift(i) / fit.size();
    CHECK(std::abs(mean_u - (-0.1)) < 0.02);
    CHECK(fit.converged);
    CHECK(fit.max_rhat <= 1.05);
    for (std::size_t i = 0; i < fit.size(); i += 97) {
        double sb = 0, sk = 0;
        for (int a = 0; a <= 101; ++a) sb += fit.beta(i, a);
        for (int y = fit.first_year; y <= fit.last_year(); ++y) sk += fit.kappa(i, y);
        CHECK(std::abs(sb - 1.0) < 1e-9);
        CHECK(std::abs(sk) < 1e-9);
        CHECK(fit.sigma_eps(i) >= 0);
        CHECK(fit.sigma_v(i) >= 0);
    }
}

TEST_CASE("Lee-Carter on a constant surface") {
    auto tab = constant_table(0.02, 2000, 10);
    inference::McmcConfig cfg{2, 200, 200, 3, std::nullopt, 1};
    auto fit = fit_lee_carter(tab, cfg);
    double k_abs = 0, a_err = 0;
    for (std::size_t i = 0; i < fit.size(); ++i) {
        for (int y = 2000; y < 2010; ++y) k_abs = std::max(k_abs, std::abs(fit.kappa(i, y)));
        a_err = std::max(a_err, std::abs(fit.alpha(i, 40) - std::log(0.02)));
    }
    CHECK(k_abs < 0.05);
    CHECK(a_err < 0.05);
}

TEST_CASE("Lee-Carter needs at least two years") {
    inference::McmcConfig cfg{1, 10, 10, 0, std::nullopt, 1};
    CHECK_THROWS_AS(fit_lee_carter(constant_table(0.02, 2000, 1), cfg), ValidationError);
}

TEST_CASE("kappa projection") {
    auto tab = lee_carter_surface(-0.1, 0.05, 0.01, 4, 30);
    inference::McmcConfig cfg{4, 300, 1000, 2, std::nullopt, 1};
    auto fit = fit_lee_carter(tab, cfg);
    CHECK_THROWS(project_kappa(fit, 0, 1));
    auto k = project_kappa(fit, 10, 5);
    REQUIRE(k.rows() == static_cast<Eigen::Index>(fit.size()));
    // Mean 10-step change equals 10 E[u] within Monte Carlo error.
    std::vector<double> diff(fit.size());
    double mean_u = 0, mean_diff = 0;
    for (std::size_t i = 0; i < fit.size(); ++i) {
        diff[i] = k(static_cast<Eigen::Index>(i), 9) - fit.kappa(i, fit.last_year());
        mean_diff += diff[i] / fit.size();
        mean_u += fit.drift(i) / fit.size();
    }
    double var = 0;
    for (double v : diff) var += (v - mean_diff) * (v - mean_diff) / (diff.size() - 1);
    CHECK(std::abs(mean_diff - 10 * mean_u) < 3 * std::sqrt(var / diff.size()));
    CHECK(project_kappa(fit, 10, 5) == k);
}

TEST_CASE("deterministic walk when the innovation sd is zero") {
    // Build draws directly: one chain, one iteration, u = -0.1, sigma_v = 0.
    LeeCarterDraws d;
    d.first_age = 0;
    d.first_year = 2000;
    d.ages = 1;
    d.years = 2;
    d.draws = inference::PosteriorDraws({"alpha[0]", "beta[0]", "kappa[2000]", "kappa[2001]", "u", "sigma_eps", "sigma_v"}, 1, 1);
    d.draws.at(0, 0, 3) = 0.7;
    d.draws.at(0, 0, 4) = -0.1;
    auto k = project_kappa(d, 5, 0);
    for (int h = 0; h < 5; ++h) CHECK(k(0, h) == doctest::Approx(0.7 - 0.1 * (h + 1)).epsilon(1e-14));
}

TEST_CASE("external population weighting") {
    auto curve = [](double rate, int H) {
        CohortSurvival c;
        c.values.resize(1, H + 1);
        for (int h = 0; h <= H; ++h) c.values(0, h) = std::exp(-rate * h);
        return c;
    };
    data_io::StudyMeta meta;
    meta.study = "S";
    meta.arms = {"A", "B"};
    meta.country_weights = {{"X", 1.0}};
    meta.age_distribution = {{60, 1.0}};
    meta.female_proportion = 1.0;

    CohortCurves curves;
    curves[{"X", Sex::female, 60}] = curve(0.01, 50);
    auto single = synthesize_external(curves, meta);
    for (int h = 0; h <= 50; ++h) CHECK(single.curve.values[h] == doctest::Approx(std::exp(-0.01 * h)).epsilon(1e-14));

    meta.female_proportion = 0.5;
    curves[{"X", Sex::male, 60}] = curve(0.03, 50);
    auto mix = synthesize_external(curves, meta);
    CHECK(mix.curve.values[10] == doctest::Approx((std::exp(-0.1) + std::exp(-0.3)) / 2).epsilon(1e-12));
    CHECK(mix.curve.values[10] == doctest::Approx(0.8228).epsilon(1e-4));
    for (std::size_t i = 0; i < mix.curve.values.size(); ++i) {
        CHECK(mix.curve.values[i] <= std::exp(-0.01 * i) + 1e-15);
        CHECK(mix.curve.values[i] >= std::exp(-0.03 * i) - 1e-15);
    }

    curves[{"X", Sex::male, 60}] = curve(0.01, 50);
    auto same = synthesize_external(curves, meta);
    for (int h = 0; h <= 50; ++h) CHECK(same.curve.values[h] == doctest::Approx(std::exp(-0.01 * h)).epsilon(1e-14));

    meta.country_weights = {{"X", 0.5}, {"Y", 0.5}};
    meta.age_distribution = {{60, 0.5}, {70, 0.5}};
    try {
        synthesize_external(curves, meta);
        FAIL("expected an error");
    } catch (const ReferenceError& e) {
        std::string msg = e.what();
        CHECK(msg.find("Y/female/60") != std::string::npos);
        CHECK(msg.find("X/male/70") != std::string::npos);
    }
}

TEST_CASE("synthetic times: mean, censoring mass, determinism") {
    mst::SurvivalCurve c;
    for (int i = 0; i <= 12000; ++i) {
        c.times.push_back(i * 0.01);
        c.values.push_back(std::exp(-0.1 * i * 0.01));
    }
    const std::size_t n = 100000;
    auto s = sample_synthetic_times(c, n, 17);
    double mean = 0, var = 0;
    for (const auto& o : s) mean += o.time / n;
    for (const auto& o : s) var += (o.time - mean) * (o.time - mean) / (n - 1);
    CHECK(std::abs(mean - 10.0) < 3 * std::sqrt(var / n));
    for (const auto& o : s) CHECK(o.time > 0);

    auto one = sample_synthetic_times(c, 1, 5), again = sample_synthetic_times(c, 1, 5);
    CHECK(one[0].time == again[0].time);

    mst::SurvivalCurve trunc;
    for (int i = 0; i <= 100; ++i) {
        trunc.times.push_back(i * 0.1);
        trunc.values.push_back(1.0 - 0.7 * i / 100.0);
    }
    std::vector<std::string> warnings;
    auto t = sample_synthetic_times(trunc, 20000, 3, &warnings);
    double censored = 0;
    for (const auto& o : t) {
        if (!o.event) {
            censored += 1;
            CHECK(o.time == 10.0);
        }
    }
    censored /= t.size();
    CHECK(std::abs(censored - 0.3) < 3 * std::sqrt(0.3 * 0.7 / t.size()));
    CHECK(warnings.empty());

    mst::SurvivalCurve flat{{0.0, 5.0}, {1.0, 0.8}};
    sample_synthetic_times(flat, 10, 1, &warnings);
    CHECK(warnings.size() == 1);
}
