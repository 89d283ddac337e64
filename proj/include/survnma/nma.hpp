#pragma once

#include "survnma/inference.hpp"
#include "survnma/mst.hpp"

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace survnma::nma {

using mst::ContrastData;

/// Treatment list plus each study's arms mapped to treatment indices (0 = network reference, d_1 = 0).
class Network {
public:
    Network(std::vector<std::string> treatments, const std::vector<ContrastData>& data);

    const std::vector<std::string>& treatments() const { return treatments_; }
    std::size_t size() const { return treatments_.size(); }
    std::size_t studies() const { return arms_.size(); }
    const std::vector<std::size_t>& arms(std::size_t study) const { return arms_[study]; }
    std::size_t index_of(const std::string& treatment) const;

    /// Connected components of the treatment graph (as treatment indices).
    std::vector<std::vector<std::size_t>> components() const;
    /// Throws ValidationError listing the components when some treatment is unreachable from the reference.
    void require_connected() const;

private:
    std::vector<std::string> treatments_;
    std::vector<std::vector<std::size_t>> arms_;
};

/// Full parameter state of the random-effects model; d[0] is fixed at 0.
struct NmaState {
    std::vector<double> d;                  // size K
    double tau = 0;                         // between-study sd
    std::vector<Eigen::VectorXd> delta;     // per study, arms 2..A
};

struct Priors {
    double d_sd = 10.0;              // d_k ~ N(0, d_sd^2)
    double tau_sd = 1.0;             // tau ~ half-Normal(0, tau_sd^2)
    std::optional<double> fixed_tau; // fixes tau (0 allowed: fixed effect)
};

struct FitOptions {
    Priors priors;
    bool jitter_singular = false; // add 1e-8 to the diagonal of singular covariance blocks
};

/// One study's Gaussian log density log N(y; delta, Sigma) (full normalising constant).
double study_log_density(const ContrastData& study, const Eigen::VectorXd& delta);

/// Sum_j omega_j log N(y_j; delta_j, Sigma_j).
double log_likelihood(const NmaState& state, const std::vector<ContrastData>& data, const std::vector<double>& weights);

/// Sum_j log N(y_j; delta_j, Sigma_j).
double standard_log_likelihood(const NmaState& state, const std::vector<ContrastData>& data);

/// Between-study prior of the delta's built from the sequential arm-wise conditionals
/// delta_k | delta_2..delta_{k-1} ~ N(nu_k, k / (2(k-1)) tau^2).
double random_effects_logprior(const NmaState& state, const Network& network);

/// Compound-symmetric covariance tau^2 (I + J) / 2 of a study's random effects.
Eigen::MatrixXd between_covariance(std::size_t dimension, double tau);

/// Draw a study's random effects from the sequential conditionals.
Eigen::VectorXd sample_random_effects(const std::vector<double>& d, const std::vector<std::size_t>& arms, double tau,
                                      Rng& rng);

/// Risk-of-bias category -> power-likelihood weight.
double rob_weight(const std::string& category);

struct NmaFit {
    Network network;
    inference::PosteriorDraws draws; // d.<treatment> (reference included, constant 0), tau, delta[...]
    std::vector<double> weights;

    /// Draws of all d (K columns, reference first) as a draws x K matrix.
    Eigen::MatrixXd d_matrix() const;
};

/// Random-effects NMA posterior. Sampling: tau by adaptive Metropolis on log tau with the
/// random effects integrated out, then d and the random effects by exact Gaussian draws.
NmaFit fit(const std::vector<ContrastData>& data, const std::vector<std::string>& treatments,
           const std::vector<double>& weights, const FitOptions& options, const inference::McmcConfig& mcmc);

/// P(treatment k has rank r) with rank 1 = largest d. Rows: treatments; columns: ranks.
Eigen::MatrixXd rank_probabilities(const Eigen::MatrixXd& d_draws);

std::vector<double> sucra(const Eigen::MatrixXd& rank_matrix);

struct LeagueEntry {
    double mean = 0;
    double lower = 0;
    double upper = 0;
};

/// entry(k, l) summarises draws of d_k - d_l.
std::vector<std::vector<LeagueEntry>> league_table(const Eigen::MatrixXd& d_draws);

/// Draws of d_k - d_l.
Eigen::VectorXd contrast_draws(const Eigen::MatrixXd& d_draws, std::size_t k, std::size_t l);

} // namespace survnma::nma
