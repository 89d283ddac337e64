#include "survnma/data_io.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>
#include <algorithm>

using namespace survnma;
using namespace survnma::data_io;

namespace {

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / "survnma_test_data_io";
    fs::create_directories(dir);
    return dir / name;
}

std::string mortality_csv(int y0, int y1, double rate = 0.01) {
    std::string s = "country,sex,age,year,rate\n";
    for (int y = y0; y <= y1; ++y)
        for (int a = 0; a <= 101; ++a) s += "X,female," + std::to_string(a) + "," + std::to_string(y) + "," + format_double(rate * (1 + a * 0.01)) + "\n";
    return s;
}

const char* kConfig = R"(
ipd: ipd.csv
mortality: mortality.csv
treatments: [A, B, C]
model: tri-loglogistic
seed: 7
mcmc: {chains: 2, warmup: 100, samples: 100}
study:
  S1:
    arms: [A, B]
    countries: {X: 1.0}
    ages: {60: 0.5, 70: 0.5}
    female: 0.4
  S2:
    arms: [A, C]
    countries: {X: 0.5, Y: 0.5}
    age_mean: 62
    age_sd: 8
weights: {S2: 0.6}
costs:
  B: {mean: 34677, cv: 0.25}
)";

} // namespace

TEST_CASE("IPD rows map field by field") {
    auto r = parse_ipd_text("study,arm,time,event\nS1,docetaxel,1.25,1\n");
    REQUIRE(r.size() == 1);
    CHECK(r[0] == IpdRecord{"S1", "docetaxel", 1.25, true});
}

TEST_CASE("IPD validation") {
    CHECK_THROWS_AS(parse_ipd_text("study,arm,time,event\nS1,docetaxel,0.0,1\n"), ValidationError);
    CHECK_THROWS_AS(parse_ipd_text("study,arm,time,event\nS1,docetaxel,-1,1\n"), ValidationError);
    CHECK_THROWS_AS(parse_ipd_text("study,arm,time,event\nS1,docetaxel,1,2\n"), ValidationError);
    CHECK_THROWS_AS(parse_ipd_text("study,arm,time\nS1,docetaxel,1\n"), ParseError);
    try {
        parse_ipd_text("study,arm,time,event\nS1,A,1,1\nS1,A,abc,0\n");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
    std::map<std::string, StudyMeta> studies;
    studies["S1"] = StudyMeta{"S1", {"A", "B"}, {{"X", 1.0}}, {{60, 1.0}}, 0.5};
    CHECK_THROWS_AS(parse_ipd_text("study,arm,time,event\nS2,A,1,1\n", &studies), ReferenceError);
    CHECK_THROWS_AS(parse_ipd_text("study,arm,time,event\nS1,C,1,1\n", &studies), ReferenceError);

    std::vector<std::string> warnings;
    auto kept = parse_ipd_text("study,arm,time,event\nS1,A,1,1\nS1,A,0,1\nS1,B,x,0\nS1,B,2,0\n", &studies,
                               ParseOptions{true, &warnings});
    CHECK(kept.size() == 2);
    CHECK(warnings.size() == 2);
}

TEST_CASE("IPD grouping is stable and the round trip is exact") {
    Rng rng = make_rng(1);
    std::uniform_real_distribution<double> u(0.001, 20.0);
    std::vector<IpdRecord> rows;
    const char* arms[] = {"A", "B"};
    for (int s = 0; s < 7; ++s)
        for (int a = 0; a < 2; ++a)
            for (int i = 0; i < 30; ++i) rows.push_back({"S" + std::to_string(s + 1), arms[a], u(rng), i % 3 != 0});
    // Interleave and check that grouping restores first-appearance order without reordering within a group.
    std::vector<IpdRecord> shuffled;
    for (std::size_t i = 0; i < 30; ++i)
        for (std::size_t g = 0; g < 14; ++g) shuffled.push_back(rows[g * 30 + i]);
    auto parsed = parse_ipd_text(format_ipd(shuffled));
    CHECK(parsed == rows);

    std::set<std::pair<std::string, std::string>> groups;
    for (const auto& r : parsed) groups.emplace(r.study, r.arm);
    CHECK(groups.size() == 14);

    auto path = scratch("ipd.csv");
    write_ipd(path, rows);
    CHECK(parse_ipd(path) == rows);
}

TEST_CASE("mortality tables") {
    auto tables = parse_mortality_text(mortality_csv(1960, 2022));
    REQUIRE(tables.size() == 1);
    const auto& t = tables.begin()->second;
    CHECK(t.ages() == 102);
    CHECK(t.years() == 63);
    CHECK(t.first_year == 1960);
    CHECK(t.last_year() == 2022);
    CHECK(t.rate(50, 2000) == doctest::Approx(0.015));
    CHECK(parse_mortality_text(format_mortality(tables)) == tables);

    auto single = parse_mortality_text(mortality_csv(2020, 2020));
    CHECK(single.begin()->second.years() == 1);

    auto zero = mortality_csv(2000, 2001);
    zero.replace(zero.find(",0.01\n"), 6, ",0\n");
    CHECK_THROWS_AS(parse_mortality_text(zero), ValidationError);

    auto gap = mortality_csv(2000, 2001);
    auto line = gap.find("X,female,5,2001,");
    gap.erase(line, gap.find('\n', line) - line + 1);
    try {
        parse_mortality_text(gap);
        FAIL("expected an incompleteness error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("age 5 year 2001") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_mortality_text("country,sex,age,year,rate\nX,other,0,2000,0.1\n"), ParseError);
}

TEST_CASE("study metadata weights must sum to one") {
    StudyMeta m{"S", {"A", "B"}, {{"X", 0.5}, {"Y", 0.5}}, {{60, 1.0}}, 0.5};
    CHECK_NOTHROW(m.validate());
    m.country_weights[1].second = 0.5 + 1e-6;
    CHECK_THROWS_AS(m.validate(), ValidationError);
    m.country_weights[1].second = 0.5;
    m.arms = {"A"};
    CHECK_THROWS_AS(m.validate(), ValidationError);

    auto ages = age_distribution_from_moments(62, 8);
    double total = 0;
    for (const auto& [a, w] : ages) {
        CHECK(a >= 18);
        CHECK(a <= 101);
        total += w;
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
    double mean = 0;
    for (const auto& [a, w] : ages) mean += a * w;
    CHECK(mean == doctest::Approx(62).epsilon(1e-3));
}

TEST_CASE("run configuration") {
    auto cfg = parse_run_config_text(kConfig, "/base");
    CHECK(cfg.seed == 7);
    CHECK(cfg.mcmc.chains == 2);
    CHECK(cfg.mcmc.seed == 7);
    CHECK(cfg.resolve(cfg.ipd) == fs::path("/base/ipd.csv"));
    CHECK(cfg.study_order == std::vector<std::string>{"S1", "S2"});
    CHECK(cfg.weight_for("S1") == 1.0);
    CHECK(cfg.weight_for("S2") == 0.6);
    CHECK(cfg.studies.at("S1").female_proportion == 0.4);
    CHECK(cfg.costs.size() == 1);
    CHECK(cfg.decision.mcid_years == 0.5);
    double total = 0;
    for (const auto& [a, w] : cfg.studies.at("S2").age_distribution) total += w;
    CHECK(std::abs(total - 1.0) < 1e-9);

    auto again = parse_run_config_text(format_run_config(cfg), "/base");
    CHECK(again.studies == cfg.studies);
    CHECK(again.weights == cfg.weights);
    CHECK(again.treatments == cfg.treatments);
    CHECK(again.seed == cfg.seed);
    CHECK(again.model == cfg.model);
}

TEST_CASE("config defaults are applied and reported") {
    auto cfg = parse_run_config_text("treatments: [A, B]\n");
    CHECK(cfg.seed == 0);
    auto has = [&](const std::string& s) {
        return std::any_of(cfg.defaults_applied.begin(), cfg.defaults_applied.end(),
                           [&](const std::string& d) { return d.find(s) != std::string::npos; });
    };
    CHECK(has("seed = 0"));
    CHECK(has("mcid_years = 0.5"));
    CHECK(has("coupling.shared_third = true"));
}

TEST_CASE("config decision values and weights") {
    CHECK(parse_run_config_text("mcid_years: 0.5\n").decision.mcid_years == 0.5);
    CHECK(parse_run_config_text("decision: {mcid_years: 0.25}\n").decision.mcid_years == 0.25);
    CHECK_THROWS_AS(parse_run_config_text("mcid_years: 0.5\ndecision: {mcid_years: 0.25}\n"), ValidationError);

    auto w = parse_weights_text("weights: {S3: 0.6, S5: 0.3}\n");
    CHECK(w.at("S3") == 0.6);
    CHECK(w.at("S5") == 0.3);
    CHECK(!w.count("S1"));
    auto r = parse_weights_text("rob: {S1: high, S2: medium}\nweights: {S1: 0.9}\n");
    CHECK(r.at("S1") == 0.9);
    CHECK(r.at("S2") == 0.6);
    CHECK_THROWS(parse_weights_text("weights: {S1: 0}\n"));
    CHECK_THROWS(parse_weights_text("weights: {S1: 1.5}\n"));
}

TEST_CASE("config errors") {
    CHECK_THROWS_AS(parse_run_config_text("bogus: 1\n"), ValidationError);
    CHECK_NOTHROW(parse_run_config_text("strict: false\nbogus: 1\n"));
    CHECK_THROWS_AS(parse_run_config_text("mcmc: {chians: 2}\n"), ValidationError);
    CHECK_THROWS_AS(parse_run_config_text("model: tri-loglogistic\ncomponents: 2\n"), ValidationError);
    CHECK_THROWS_AS(parse_run_config_text("model: bi-weibull\ncoupling: {shared_third: true}\n"), ValidationError);
    CHECK_THROWS_AS(parse_run_config_text("model: mspline\ncomponents: 2\n"), ValidationError);
    CHECK_THROWS_AS(parse_run_config_text("model: quad-weibull\n"), ValidationError);
    CHECK_THROWS_AS(parse_run_config_text("treatments: [A, B]\nstudy:\n  S1: {arms: [A, Z], countries: {X: 1}, ages: {60: 1}}\n"),
                    ReferenceError);
    CHECK_THROWS_AS(parse_run_config_text("treatments: [A, B]\nstudy:\n  S1: {arms: [A, B], countries: {X: 1}, ages: {60: 1}}\n"
                                          "weights: {S9: 0.5}\n"),
                    ReferenceError);
    CHECK_THROWS_AS(parse_run_config_text("study:\n  S1: {arms: [A, B], countries: {X: 0.7}, ages: {60: 1}}\n"),
                    ValidationError);
    CHECK_THROWS_AS(parse_run_config_text("seed: [1\n"), ParseError);
}

TEST_CASE("draws and contrasts round trip") {
    inference::PosteriorDraws d({"a", "b[1,2]"}, 2, 3);
    Rng rng = make_rng(2);
    std::normal_distribution<double> z;
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 3; ++i)
            for (std::size_t p = 0; p < 2; ++p) d.at(c, i, p) = z(rng);
    auto path = scratch("draws.csv");
    write_draws(path, d);
    auto back = read_draws(path);
    CHECK(back.names() == d.names());
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 3; ++i)
            for (std::size_t p = 0; p < 2; ++p) CHECK(back.at(c, i, p) == d.at(c, i, p));

    mst::ContrastData two{"S1", {"A", "B"}, Eigen::VectorXd::Constant(1, 0.3), Eigen::MatrixXd::Constant(1, 1, 0.01)};
    mst::ContrastData three{"S2", {"A", "B", "C"}, Eigen::Vector2d(0.1, 1.0 / 3.0), Eigen::Matrix2d{{0.02, 0.01}, {0.01, 0.03}}};
    auto dir = scratch("contrasts");
    write_contrasts(dir, {two, three});
    auto read = read_contrasts(dir);
    REQUIRE(read.size() == 2);
    CHECK(read[0].treatments == two.treatments);
    CHECK(read[1].treatments == three.treatments);
    CHECK(read[1].y == three.y);
    CHECK(read[1].covariance == three.covariance);
    CHECK(read[0].covariance == two.covariance);
}
