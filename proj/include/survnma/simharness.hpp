#pragma once

#include "survnma/inference.hpp"
#include "survnma/mst.hpp"
#include "survnma/nma.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace survnma::simharness {

struct PowerSimConfig {
    int n_studies = 20;
    int n_treatments = 4;
    int patients_per_arm = 50;
    double within_sd = 1.0;
    int n_poor = 6;                 // half medium risk, half high risk
    double bias_magnitude = 1.0;
    double tau_true = 0.1;
    double omega_medium = 0.6;
    double omega_high = 0.3;
    double medium_bias_fraction = 0.6;
    double d_step = 0.5;            // true d = (0, d_step, 2 d_step, ...)
    int replications = 500;
    std::uint64_t seed = 0;
    nma::Priors priors;             // N(0, 10^2) on d, half-Normal(0, 1) on tau
    inference::McmcConfig mcmc{2, 500, 1000, 0, std::nullopt, 1};

    void validate() const;
};

struct PowerDataset {
    std::vector<mst::ContrastData> data;
    std::vector<std::string> treatments;
    std::vector<double> true_d;         // size K, true_d[0] = 0
    std::vector<std::string> labels;    // per study: low / medium / high
    std::vector<double> bias;           // per study, added to y
    std::vector<double> weights;        // power-likelihood weights implied by the labels
};

/// Two-arm network with uniformly drawn treatment pairs (resampled until connected),
/// arm-level means observed with sd within_sd / sqrt(patients_per_arm), and additive bias on
/// the poor studies. Deterministic in (cfg.seed, replication).
PowerDataset generate_power_dataset(const PowerSimConfig& cfg, int replication);

/// One parameter's posterior summary in one replication.
struct ParameterRecord {
    int replication = 0;
    std::string model;      // "typical", "power", or an engine-grid cell label
    std::string parameter;  // d.T2, ... or contrast T3-T2
    bool basic = true;      // basic parameter d_2..d_K
    double truth = 0;
    double mean = 0;
    double variance = 0;
    double lower = 0;
    double upper = 0;
    double ess = 0;
    double crps = 0;
    double runtime = 0;     // seconds for the whole fit
    double iterations_per_second = 0;
};

struct SimMetrics {
    std::size_t replications = 0;
    std::size_t failures = 0;
    double mean_bias = 0;          // mean over replications and basic parameters of (E[d] - d)
    double mean_abs_bias = 0;      // mean over basic parameters of |per-parameter mean bias|
    double rmse = 0;
    double mae = 0;
    double coverage = 0;
    double cri_width = 0;
    double posterior_variance = 0;
    double ess = 0;
    double ess_per_second = 0;
    double runtime = 0;
    double iterations_per_second = 0;
    double crps = 0;
    double bias_se = 0;            // Monte Carlo standard error of mean_bias
    double mean_bias_all_contrasts = 0;
};

/// Aggregates basic-parameter records (and the all-contrast bias) for one model label.
SimMetrics aggregate(const std::vector<ParameterRecord>& records, const std::string& model, std::size_t failures = 0);

/// Per-parameter mean error, mean squared error and error variance across replications.
struct ParameterMoments {
    double bias = 0;
    double mse = 0;
    double variance = 0; // population variance of the posterior-mean errors
};
std::map<std::string, ParameterMoments> parameter_moments(const std::vector<ParameterRecord>& records,
                                                           const std::string& model);

/// Sample CRPS: E|X - truth| - E|X - X'| / 2 over at most `max_draws` evenly thinned draws.
double crps(const std::vector<double>& draws, double truth, std::size_t max_draws = 1000);

/// Fits one dataset and returns a record per basic parameter and per non-reference contrast.
std::vector<ParameterRecord> evaluate_fit(const nma::NmaFit& fit, const std::vector<double>& true_d, int replication,
                                          const std::string& model);

struct PowerStudyResult {
    PowerSimConfig config;
    std::vector<ParameterRecord> records;
    std::map<std::string, SimMetrics> metrics; // "typical", "power"
    std::size_t failures = 0;
    std::vector<std::string> log;
    /// Paired Monte Carlo standard error of mean_bias(power) - mean_bias(typical).
    double bias_difference_se = 0;
};

/// Fits the typical (all weights 1) and power models on every replication with the same MCMC seed.
PowerStudyResult run_power_study(const PowerSimConfig& cfg);

struct EngineCell {
    int studies = 20;
    int treatments = 4;
    double tau = 0.3;
    std::string label() const;
};

struct EngineStudyConfig {
    std::vector<int> studies{7, 20, 50};
    std::vector<int> treatments{4, 8};
    std::vector<double> taus{0.1, 0.3, 1.0};
    int patients_per_arm = 50;
    double within_sd = 1.0;
    double d_step = 0.5;
    int replications = 500;
    std::uint64_t seed = 0;
    nma::Priors priors;
    inference::McmcConfig mcmc{2, 500, 1000, 0, std::nullopt, 1};

    std::vector<EngineCell> cells() const;
};

struct EngineStudyResult {
    std::vector<EngineCell> cells;
    std::vector<ParameterRecord> records;   // model = cell label
    std::map<std::string, SimMetrics> metrics;
    std::map<std::string, std::size_t> failures;
};

EngineStudyResult run_engine_study(const EngineStudyConfig& cfg);

/// Per-replication long CSV and its reader.
std::string format_records(const std::vector<ParameterRecord>& records);
std::vector<ParameterRecord> parse_records(const std::string& text);

/// One row per model label.
std::string format_metrics(const std::map<std::string, SimMetrics>& metrics);

/// Four panels (bias, RMSE, CrI width, posterior variance) across scenarios, one series per model.
std::string power_figure(const std::vector<std::string>& scenarios, const std::vector<std::map<std::string, SimMetrics>>& results);

} // namespace survnma::simharness
