#pragma once

#include "survnma/common.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace survnma::decision {

enum class Loss { zero_one, regret, squared_regret };

std::string to_string(Loss loss);

/// Posterior risk of choosing each treatment, plus the Bayes rule.
struct BayesRuleResult {
    Loss loss = Loss::zero_one;
    std::size_t chosen = 0;
    std::vector<double> risks;
    std::vector<double> prob_best; // P(d_k is the maximum), ties resolved per draw by lowest index
    std::vector<double> means;
    bool tie = false;
};

/// `d_draws` is draws x K with column 0 the network reference (all zeros).
BayesRuleResult bayes_rule(const Eigen::MatrixXd& d_draws, Loss loss);

/// P(treatment k is best), ties resolved per draw by lowest index.
std::vector<double> probability_best(const Eigen::MatrixXd& d_draws);

struct LaevResult {
    std::vector<std::size_t> after_screening; // stage 1: E[d_k] >= E[d_ref]
    std::vector<std::size_t> survivors;       // stage 2: within mcid of the best stage-1 mean
    std::optional<std::size_t> recommendation;
    std::vector<double> means;
};

/// Two-stage rule on posterior means. `mcid` may be +infinity.
LaevResult laev(const Eigen::MatrixXd& d_draws, std::size_t reference, double mcid);

struct GradeResult {
    std::optional<std::size_t> recommendation;
    std::size_t leader = 0;
    double leader_probability = 0;
    double cutoff = 0;
};

/// Recommend the most-probably-best treatment iff P(best) >= cutoff; cutoff in (0.5, 1].
GradeResult grade_decide(const Eigen::MatrixXd& d_draws, double cutoff);
GradeResult grade_decide(const std::vector<double>& prob_best, double cutoff);

struct CostSpec {
    std::string treatment;
    double mean_cost = 0;
    double cv = 0;
};

/// draws x K matrix of sampled costs, columns in `specs` order.
struct CostDraws {
    std::vector<std::string> treatments;
    Eigen::MatrixXd values;
};

/// Gamma(shape = 1/CV^2, scale = mean * CV^2) per treatment.
CostDraws sample_costs(const std::vector<CostSpec>& specs, std::size_t n, std::uint64_t seed);

/// Parses "start:stop:step" (inclusive of stop when on the grid) or a single value.
std::vector<double> parse_lambda_grid(const std::string& text);

struct IcerEntry {
    std::size_t treatment = 0;
    double delta_effect = 0;
    double delta_cost = 0;
    std::optional<double> icer; // empty when |E[dx]| < 1e-9
};

struct CeaResult {
    std::vector<double> lambdas;
    std::vector<double> mean_effect;              // E[d_k]
    std::vector<double> mean_cost;                // E[c_k]
    Eigen::MatrixXd expected_net_benefit;         // lambdas x K
    Eigen::MatrixXd eib;                          // lambdas x K, vs reference
    Eigen::MatrixXd ceac;                         // lambdas x K
    std::vector<std::size_t> optimal;             // per lambda, argmax E[NB] (ties: lowest index)
    std::vector<IcerEntry> icers;                 // every k != reference, vs reference
    std::vector<std::pair<double, std::size_t>> switch_points; // (lambda, new optimal) where the decision changes
};

/// NB_k = lambda d_k - c_k per draw; effect and cost draws are paired by row.
CeaResult cea(const Eigen::MatrixXd& d_draws, const Eigen::MatrixXd& cost_draws, const std::vector<double>& lambdas,
              std::size_t reference = 0);

/// Net benefit per draw for one lambda (draws x K).
Eigen::MatrixXd net_benefit(const Eigen::MatrixXd& d_draws, const Eigen::MatrixXd& cost_draws, double lambda);

/// Resample rows of `costs` to `n` draws with a fixed seed (no-op when already n).
Eigen::MatrixXd match_draws(const Eigen::MatrixXd& costs, std::size_t n, std::uint64_t seed);

} // namespace survnma::decision
