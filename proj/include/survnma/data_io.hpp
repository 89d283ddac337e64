#pragma once

#include "survnma/common.hpp"
#include "survnma/decision.hpp"
#include "survnma/inference.hpp"
#include "survnma/mst.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace survnma::data_io {

namespace fs = std::filesystem;

struct IpdRecord {
    std::string study;
    std::string arm; // treatment identifier
    double time = 0; // years
    bool event = false;

    bool operator==(const IpdRecord&) const = default;
};

struct StudyMeta {
    std::string study;
    std::vector<std::string> arms; // arms[0] is the control arm
    std::vector<std::pair<std::string, double>> country_weights;
    std::vector<std::pair<int, double>> age_distribution;
    double female_proportion = 0.5;
    std::string rob = "low";         // risk-of-bias category
    std::optional<double> weight;    // explicit power-likelihood weight; overrides rob

    bool operator==(const StudyMeta&) const = default;
    void validate() const;
};

enum class Sex { female, male };
std::string to_string(Sex s);
Sex sex_from_string(const std::string& s);

/// Annual central death rates, ages 0..101 x contiguous calendar years.
struct MortalityTable {
    std::string country;
    Sex sex = Sex::female;
    int first_age = 0;
    int first_year = 0;
    Eigen::MatrixXd rates; // ages x years

    int ages() const { return static_cast<int>(rates.rows()); }
    int years() const { return static_cast<int>(rates.cols()); }
    int last_age() const { return first_age + ages() - 1; }
    int last_year() const { return first_year + years() - 1; }
    double rate(int age, int year) const { return rates(age - first_age, year - first_year); }

    bool operator==(const MortalityTable& o) const {
        return country == o.country && sex == o.sex && first_age == o.first_age && first_year == o.first_year &&
               rates.rows() == o.rates.rows() && rates.cols() == o.rates.cols() && rates == o.rates;
    }
};

using MortalityKey = std::pair<std::string, Sex>;
using MortalityTables = std::map<MortalityKey, MortalityTable>;

struct ParseOptions {
    bool lenient = false;          // drop bad rows with a warning instead of failing
    std::vector<std::string>* warnings = nullptr;
};

/// `study,arm,time,event`. With `studies`, unknown (study, arm) pairs raise ReferenceError.
/// Rows are grouped stably by (study, arm) in order of first appearance.
std::vector<IpdRecord> parse_ipd(const fs::path& path, const std::map<std::string, StudyMeta>* studies = nullptr,
                                 const ParseOptions& options = {});
std::vector<IpdRecord> parse_ipd_text(const std::string& text, const std::map<std::string, StudyMeta>* studies = nullptr,
                                      const ParseOptions& options = {});
void write_ipd(const fs::path& path, const std::vector<IpdRecord>& records);
std::string format_ipd(const std::vector<IpdRecord>& records);

/// `country,sex,age,year,rate` in long format; one dense table per (country, sex).
MortalityTables parse_mortality(const fs::path& path, const ParseOptions& options = {});
MortalityTables parse_mortality_text(const std::string& text, const ParseOptions& options = {});
void write_mortality(const fs::path& path, const MortalityTables& tables);
std::string format_mortality(const MortalityTables& tables);

/// Discretised Normal over ages 18..101, renormalised.
std::vector<std::pair<int, double>> age_distribution_from_moments(double mean, double sd);

struct MortalityOptions {
    int projection_start_year = 2023; // Y in the cohort survival sum
    int projection_draws = 0;         // 0: sample synthetic times from the posterior-mean curve
    int synthetic_n = 10000;
    int max_draws = 1000;             // Lee-Carter draws carried into projection
    inference::McmcConfig mcmc{4, 1000, 1000, 0, std::nullopt, 1};
};

struct ExtrapolationConfig {
    double step = 0.01;
    double epsilon = 1e-4;
    std::optional<double> hard_cap; // default: years until the youngest cohort member reaches 110
    int mst_draws = 1000;
};

struct DecisionConfig {
    double mcid_years = 0.5;
    double grade_cutoff = 0.975;
    std::string lambda = "0:50000:100";
    std::optional<std::string> reference; // default: first treatment
    std::uint64_t cost_seed = 0;
};

struct NmaConfig {
    double prior_d_sd = 10.0;
    double prior_tau_sd = 1.0;
    std::optional<double> fixed_tau;
    bool jitter = false;
};

struct RunConfig {
    fs::path base_dir;   // relative input paths resolve against this
    fs::path ipd;
    fs::path mortality;
    std::vector<std::string> treatments; // first = network reference
    std::string model = "tri-loglogistic";
    bool proportional_first = true;
    bool shared_third = true;
    std::optional<int> components;
    std::uint64_t seed = 0;
    bool strict = true;
    bool lenient = false;
    bool allow_unanchored = false;
    inference::McmcConfig mcmc;
    MortalityOptions mortality_options;
    ExtrapolationConfig extrapolation;
    mst::CovarianceMode covariance = mst::CovarianceMode::control_variance;
    NmaConfig nma;
    DecisionConfig decision;
    std::map<std::string, double> weights; // explicit omega per study; unlisted -> from rob / 1.0
    std::map<std::string, StudyMeta> studies;
    std::vector<std::string> study_order;
    std::vector<decision::CostSpec> costs;

    std::vector<std::string> defaults_applied; // one human-readable line per default

    /// Power-likelihood weight of a study: explicit weight, else risk-of-bias category.
    double weight_for(const std::string& study) const;
    fs::path resolve(const fs::path& p) const;
};

/// YAML run configuration. Unknown keys are errors unless `strict: false`.
RunConfig parse_run_config(const fs::path& path);
RunConfig parse_run_config_text(const std::string& text, const fs::path& base_dir = {});
std::string format_run_config(const RunConfig& config);

/// `weights: {S1: 0.6}` and/or `rob: {S1: medium}` file used by the nma stage.
std::map<std::string, double> parse_weights(const fs::path& path);
std::map<std::string, double> parse_weights_text(const std::string& text);

/// `costs:` section (mean, cv, optional currency_factor) from a YAML file.
std::vector<decision::CostSpec> parse_costs(const fs::path& path);
std::vector<decision::CostSpec> parse_costs_text(const std::string& text);

// ---- draws and contrasts -------------------------------------------------

/// Long format `chain,iteration,param,value`.
void write_draws(const fs::path& path, const inference::PosteriorDraws& draws);
inference::PosteriorDraws read_draws(const fs::path& path);

/// Summaries with R-hat / ESS as JSON; runtime fields only with `include_timing`.
void write_diagnostics(const fs::path& path, const inference::PosteriorDraws& draws, bool include_timing = true);

/// `study,arm,treatment,lyg_mean,lyg_var` plus `study,row,col,value` for multi-arm covariance blocks.
/// Control arms appear as arm 1 with empty contrast columns.
void write_contrasts(const fs::path& dir, const std::vector<mst::ContrastData>& data);
std::vector<mst::ContrastData> read_contrasts(const fs::path& dir);

/// Minimal CSV helpers (no quoting; the formats above never need it).
std::vector<std::string> split_csv_line(const std::string& line);
std::string read_file(const fs::path& path);
void write_file(const fs::path& path, const std::string& content);
std::string format_double(double v);

} // namespace survnma::data_io
