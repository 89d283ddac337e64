#pragma once

#include "survnma/common.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace survnma::inference {

struct McmcConfig {
    int chains = 4;
    int warmup = 2000;
    int samples = 2000;
    std::uint64_t seed = 0;
    // Acceptance rate the proposal scale is tuned towards. Unset: 0.44 for
    // one-dimensional blocks, 0.234 otherwise.
    std::optional<double> target_accept;
    int thin = 1;

    void validate() const;
};

using LogDensity = std::function<double(std::span<const double>)>;

/// Random-walk Metropolis update of a subset of coordinates. `log_density` is the
/// conditional target for this block (up to a constant); when empty the model's
/// full log density is used.
struct MetropolisBlock {
    std::vector<std::size_t> indices;
    LogDensity log_density;
};

/// Caller-supplied exact or Metropolis-within-Gibbs update; must leave the
/// target invariant and draw randomness only from the supplied generator.
struct GibbsBlock {
    std::function<void(std::span<double>, Rng&)> update;
};

using Block = std::variant<MetropolisBlock, GibbsBlock>;

struct Model {
    std::vector<std::string> names;
    std::vector<double> init;
    LogDensity log_density;
    // Empty: one Metropolis block over every coordinate.
    std::vector<Block> blocks;
    double jitter = 0.5;
    // Deterministic reparameterisation applied after every sweep (e.g. identifiability constraints).
    std::function<void(std::span<double>)> post_sweep;
    // Optional mapping from sampler state to the recorded quantities.
    std::vector<std::string> output_names;
    std::function<void(std::span<const double>, std::span<double>)> transform;
    // Parallel tempering: replicas per chain on a geometric ladder of inverse temperatures
    // from 1 down to 1 / max_temperature. Only the cold replica is recorded.
    // Requires `log_density` and Metropolis blocks only.
    int replicas = 1;
    double max_temperature = 30.0;
};

struct ParameterSummary {
    std::string name;
    double mean = 0;
    double sd = 0;
    double q025 = 0;
    double q50 = 0;
    double q975 = 0;
    std::optional<double> rhat;
    std::optional<double> ess;
};

class PosteriorDraws {
public:
    PosteriorDraws() = default;
    PosteriorDraws(std::vector<std::string> names, int chains, int iterations);

    const std::vector<std::string>& names() const { return names_; }
    int chains() const { return chains_; }
    int iterations() const { return iterations_; }
    std::size_t parameters() const { return names_.size(); }
    std::size_t total_draws() const { return static_cast<std::size_t>(chains_) * iterations_; }

    double& at(int chain, int iteration, std::size_t param);
    double at(int chain, int iteration, std::size_t param) const;

    std::size_t index_of(const std::string& name) const;
    bool contains(const std::string& name) const;

    /// Pooled draws of one parameter, chain-major.
    std::vector<double> pooled(std::size_t param) const;
    std::vector<double> pooled(const std::string& name) const { return pooled(index_of(name)); }
    /// One chain's draws of one parameter.
    std::vector<double> chain(int chain, std::size_t param) const;
    /// State vector of pooled draw `draw` (chain-major index).
    std::vector<double> draw(std::size_t draw) const;

    std::vector<ParameterSummary> summaries() const;
    ParameterSummary summary(std::size_t param) const;

    double runtime_seconds = 0;
    double iterations_per_second = 0;
    std::vector<double> acceptance_rates;

private:
    std::vector<std::string> names_;
    int chains_ = 0;
    int iterations_ = 0;
    std::vector<double> values_;
};

/// Adaptive random-walk Metropolis (with caller-registered Gibbs blocks).
/// Proposal covariances adapt during warmup only and are frozen for sampling.
/// Throws std::runtime_error when no finite initial point is found.
PosteriorDraws sample(const Model& model, const McmcConfig& config);

/// Convenience: single Metropolis block over every coordinate of `target`.
PosteriorDraws sample(LogDensity target, std::vector<double> init, std::vector<std::string> names,
                      const McmcConfig& config);

/// Split-chain rank-normalised R-hat. Empty for constant parameters.
std::optional<double> rhat(const PosteriorDraws& draws, std::size_t param);
std::optional<double> rhat(const std::vector<std::vector<double>>& chains);

/// Effective sample size from split-chain autocorrelations truncated at the
/// initial positive sequence. Empty for constant parameters.
std::optional<double> ess(const PosteriorDraws& draws, std::size_t param);
std::optional<double> ess(const std::vector<std::vector<double>>& chains);

/// Largest R-hat over all non-constant parameters (1 when every parameter is constant).
double max_rhat(const PosteriorDraws& draws);

struct NormalPosterior {
    double mean;
    double variance;
};

/// Precision-weighted Normal-Normal update. `prior_var` may be +infinity.
NormalPosterior conjugate_normal_check(double prior_mean, double prior_var, std::span<const double> obs_means,
                                       std::span<const double> obs_vars);

double quantile(std::vector<double> values, double p);

} // namespace survnma::inference
