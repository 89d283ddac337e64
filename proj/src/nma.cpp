#include "survnma/nma.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>

namespace survnma::nma {

namespace {
constexpr double neg_inf = -std::numeric_limits<double>::infinity();
const double log_two_pi = std::log(2.0 * std::numbers::pi);

double normal_logpdf(double x, double mean, double var) {
    return -0.5 * (log_two_pi + std::log(var)) - 0.5 * (x - mean) * (x - mean) / var;
}
} // namespace

Network::Network(std::vector<std::string> treatments, const std::vector<ContrastData>& data)
    : treatments_(std::move(treatments)) {
    if (treatments_.empty()) throw ValidationError("network: empty treatment list");
    for (const auto& study : data) {
        if (study.treatments.size() < 2) throw ValidationError(fmt::format("study {}: needs at least two arms", study.study));
        if (study.dimension() != study.treatments.size() - 1)
            throw ValidationError(fmt::format("study {}: contrast vector has {} entries for {} arms", study.study,
                                              study.dimension(), study.treatments.size()));
        std::vector<std::size_t> arms;
        for (const auto& t : study.treatments) {
            auto it = std::find(treatments_.begin(), treatments_.end(), t);
            if (it == treatments_.end())
                throw ReferenceError(fmt::format("study {}: treatment '{}' is not in the treatment list", study.study, t));
            arms.push_back(static_cast<std::size_t>(it - treatments_.begin()));
        }
        arms_.push_back(std::move(arms));
    }
}

std::size_t Network::index_of(const std::string& treatment) const {
    auto it = std::find(treatments_.begin(), treatments_.end(), treatment);
    if (it == treatments_.end()) throw ReferenceError("unknown treatment '" + treatment + "'");
    return static_cast<std::size_t>(it - treatments_.begin());
}

std::vector<std::vector<std::size_t>> Network::components() const {
    std::vector<std::size_t> parent(size());
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (const auto& arms : arms_)
        for (std::size_t k = 1; k < arms.size(); ++k) parent[find(arms[k])] = find(arms[0]);
    std::vector<std::vector<std::size_t>> groups;
    std::vector<std::ptrdiff_t> slot(size(), -1);
    for (std::size_t t = 0; t < size(); ++t) {
        std::size_t root = find(t);
        if (slot[root] < 0) {
            slot[root] = static_cast<std::ptrdiff_t>(groups.size());
            groups.emplace_back();
        }
        groups[static_cast<std::size_t>(slot[root])].push_back(t);
    }
    return groups;
}

void Network::require_connected() const {
    auto groups = components();
    if (groups.size() == 1) return;
    std::string listing;
    for (const auto& g : groups) {
        listing += " {";
        for (std::size_t i = 0; i < g.size(); ++i) listing += (i ? ", " : "") + treatments_[g[i]];
        listing += "}";
    }
    throw ValidationError("network is disconnected; components:" + listing);
}

double study_log_density(const ContrastData& study, const Eigen::VectorXd& delta) {
    const auto m = study.y.size();
    Eigen::LLT<Eigen::MatrixXd> llt(study.covariance);
    if (llt.info() != Eigen::Success)
        throw ValidationError(fmt::format("study {}: observation covariance is singular (enable jitter to proceed)", study.study));
    Eigen::VectorXd r = study.y - delta;
    double quad = llt.matrixL().solve(r).squaredNorm();
    double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    return -0.5 * (static_cast<double>(m) * log_two_pi + log_det) - 0.5 * quad;
}

double standard_log_likelihood(const NmaState& state, const std::vector<ContrastData>& data) {
    double total = 0;
    for (std::size_t j = 0; j < data.size(); ++j) total += study_log_density(data[j], state.delta[j]);
    return total;
}

double log_likelihood(const NmaState& state, const std::vector<ContrastData>& data, const std::vector<double>& weights) {
    if (weights.size() != data.size()) throw ValidationError("log_likelihood: one weight per study required");
    double total = 0;
    for (std::size_t j = 0; j < data.size(); ++j) {
        if (!(weights[j] > 0 && weights[j] <= 1))
            throw ValidationError(fmt::format("study {}: weight {} outside (0, 1]", data[j].study, weights[j]));
        total += weights[j] * study_log_density(data[j], state.delta[j]);
    }
    return total;
}

Eigen::MatrixXd between_covariance(std::size_t dimension, double tau) {
    const auto m = static_cast<Eigen::Index>(dimension);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Constant(m, m, 0.5 * tau * tau);
    cov.diagonal().setConstant(tau * tau);
    return cov;
}

double random_effects_logprior(const NmaState& state, const Network& network) {
    if (!(state.tau > 0)) throw ValidationError("random_effects_logprior: tau must be > 0");
    double total = 0;
    for (std::size_t j = 0; j < network.studies(); ++j) {
        const auto& arms = network.arms(j);
        const auto& d = state.d;
        // Arm numbering follows the sequential construction: arm 1 is the control (delta = 0).
        double running = 0; // sum over earlier arms w of (delta_w - d_{T_w} + d_{T_1})
        for (std::size_t k = 2; k <= arms.size(); ++k) {
            const double kk = static_cast<double>(k);
            double nu = d[arms[k - 1]] - d[arms[0]] + running / (kk - 1.0);
            double var = kk / (2.0 * (kk - 1.0)) * state.tau * state.tau;
            double delta = state.delta[j][static_cast<Eigen::Index>(k - 2)];
            total += normal_logpdf(delta, nu, var);
            running += delta - d[arms[k - 1]] + d[arms[0]];
        }
    }
    return total;
}

Eigen::VectorXd sample_random_effects(const std::vector<double>& d, const std::vector<std::size_t>& arms, double tau,
                                      Rng& rng) {
    std::normal_distribution<double> z(0.0, 1.0);
    Eigen::VectorXd out(static_cast<Eigen::Index>(arms.size() - 1));
    double running = 0;
    for (std::size_t k = 2; k <= arms.size(); ++k) {
        const double kk = static_cast<double>(k);
        double nu = d[arms[k - 1]] - d[arms[0]] + running / (kk - 1.0);
        double sd = std::sqrt(kk / (2.0 * (kk - 1.0))) * tau;
        double delta = nu + sd * z(rng);
        out[static_cast<Eigen::Index>(k - 2)] = delta;
        running += delta - d[arms[k - 1]] + d[arms[0]];
    }
    return out;
}

double rob_weight(const std::string& category) {
    if (category == "low") return 1.0;
    if (category == "medium") return 0.6;
    if (category == "high") return 0.3;
    throw ValidationError("unknown risk-of-bias category '" + category + "'");
}

Eigen::MatrixXd NmaFit::d_matrix() const {
    const auto n = static_cast<Eigen::Index>(draws.total_draws());
    Eigen::MatrixXd out(n, static_cast<Eigen::Index>(network.size()));
    for (std::size_t k = 0; k < network.size(); ++k) {
        auto col = draws.pooled("d." + network.treatments()[k]);
        out.col(static_cast<Eigen::Index>(k)) = Eigen::Map<Eigen::VectorXd>(col.data(), n);
    }
    return out;
}

namespace {

struct StudyTerms {
    Eigen::Index m = 0;
    Eigen::MatrixXd X;        // m x (K-1): maps basic parameters to the study's contrasts
    Eigen::VectorXd y;
    Eigen::MatrixXd S;        // Sigma_obs / omega
    Eigen::MatrixXd P;        // omega Sigma_obs^{-1}
    Eigen::VectorXd Py;       // P y
    std::size_t offset = 0;   // position of this study's deltas in the state vector
};

struct Problem {
    std::size_t K = 0;
    std::vector<StudyTerms> studies;
    Priors priors;
    std::size_t tau_index = 0;
};

Eigen::VectorXd basic(std::span<const double> state, std::size_t K) {
    Eigen::VectorXd d(static_cast<Eigen::Index>(K - 1));
    for (std::size_t k = 0; k + 1 < K; ++k) d[static_cast<Eigen::Index>(k)] = state[k];
    return d;
}

double tau_of(const Problem& p, std::span<const double> state) {
    return p.priors.fixed_tau ? *p.priors.fixed_tau : std::exp(state[p.tau_index]);
}

// log p(y | d, tau) with the random effects integrated out.
double marginal_loglik(const Problem& p, const Eigen::VectorXd& d, double tau) {
    double total = 0;
    const double t2 = tau * tau;
    for (const auto& s : p.studies) {
        if (s.m == 1) {
            double v = s.S(0, 0) + t2;
            double mu = s.X.row(0).dot(d);
            total += normal_logpdf(s.y[0], mu, v);
            continue;
        }
        Eigen::MatrixXd V = s.S + between_covariance(static_cast<std::size_t>(s.m), tau);
        Eigen::LLT<Eigen::MatrixXd> llt(V);
        if (llt.info() != Eigen::Success) return neg_inf;
        Eigen::VectorXd r = s.y - s.X * d;
        Eigen::MatrixXd L = llt.matrixL();
        total += -0.5 * (static_cast<double>(s.m) * log_two_pi + 2.0 * L.diagonal().array().log().sum()) -
                 0.5 * llt.matrixL().solve(r).squaredNorm();
    }
    return total;
}

void draw_basic(const Problem& p, std::span<double> state, Rng& rng) {
    const auto dim = static_cast<Eigen::Index>(p.K - 1);
    if (dim == 0) return;
    const double tau = tau_of(p, state);
    Eigen::MatrixXd Q = Eigen::MatrixXd::Identity(dim, dim) / (p.priors.d_sd * p.priors.d_sd);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(dim);
    for (const auto& s : p.studies) {
        Eigen::MatrixXd V = s.S + between_covariance(static_cast<std::size_t>(s.m), tau);
        Eigen::LLT<Eigen::MatrixXd> llt(V);
        Eigen::MatrixXd VinvX = llt.solve(s.X);
        Q.noalias() += s.X.transpose() * VinvX;
        b.noalias() += VinvX.transpose() * s.y;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(Q);
    Eigen::VectorXd mean = llt.solve(b);
    std::normal_distribution<double> z(0.0, 1.0);
    Eigen::VectorXd e(dim);
    for (Eigen::Index i = 0; i < dim; ++i) e[i] = z(rng);
    Eigen::VectorXd draw = mean + llt.matrixU().solve(e);
    for (Eigen::Index i = 0; i < dim; ++i) state[static_cast<std::size_t>(i)] = draw[i];
}

void draw_effects(const Problem& p, std::span<double> state, Rng& rng) {
    const double tau = tau_of(p, state);
    const Eigen::VectorXd d = basic(state, p.K);
    std::normal_distribution<double> z(0.0, 1.0);
    for (const auto& s : p.studies) {
        Eigen::VectorXd mu = s.X * d;
        if (tau == 0.0) {
            for (Eigen::Index i = 0; i < s.m; ++i) state[s.offset + static_cast<std::size_t>(i)] = mu[i];
            continue;
        }
        if (s.m == 1) {
            double prior_prec = 1.0 / (tau * tau);
            double prec = prior_prec + s.P(0, 0);
            double mean = (prior_prec * mu[0] + s.Py[0]) / prec;
            state[s.offset] = mean + z(rng) / std::sqrt(prec);
            continue;
        }
        Eigen::MatrixXd prior_prec = between_covariance(static_cast<std::size_t>(s.m), tau).inverse();
        Eigen::MatrixXd prec = prior_prec + s.P;
        Eigen::LLT<Eigen::MatrixXd> llt(prec);
        Eigen::VectorXd mean = llt.solve(prior_prec * mu + s.Py);
        Eigen::VectorXd e(s.m);
        for (Eigen::Index i = 0; i < s.m; ++i) e[i] = z(rng);
        Eigen::VectorXd draw = mean + llt.matrixU().solve(e);
        for (Eigen::Index i = 0; i < s.m; ++i) state[s.offset + static_cast<std::size_t>(i)] = draw[i];
    }
}

} // namespace

NmaFit fit(const std::vector<ContrastData>& data, const std::vector<std::string>& treatments,
           const std::vector<double>& weights, const FitOptions& options, const inference::McmcConfig& mcmc) {
    Network network(treatments, data);
    network.require_connected();
    if (weights.size() != data.size()) throw ValidationError("nma fit: one weight per study required");
    if (options.priors.fixed_tau && *options.priors.fixed_tau < 0) throw ValidationError("nma fit: fixed tau must be >= 0");

    auto problem = std::make_shared<Problem>();
    problem->K = network.size();
    problem->priors = options.priors;
    problem->tau_index = problem->K - 1;
    std::size_t offset = problem->K;
    for (std::size_t j = 0; j < data.size(); ++j) {
        const auto& study = data[j];
        if (!(weights[j] > 0 && weights[j] <= 1))
            throw ValidationError(fmt::format("study {}: weight {} outside (0, 1]", study.study, weights[j]));
        StudyTerms s;
        s.m = study.y.size();
        s.y = study.y;
        s.X = Eigen::MatrixXd::Zero(s.m, static_cast<Eigen::Index>(problem->K - 1));
        const auto& arms = network.arms(j);
        for (Eigen::Index k = 0; k < s.m; ++k) {
            std::size_t treat = arms[static_cast<std::size_t>(k) + 1];
            if (treat > 0) s.X(k, static_cast<Eigen::Index>(treat - 1)) += 1.0;
            if (arms[0] > 0) s.X(k, static_cast<Eigen::Index>(arms[0] - 1)) -= 1.0;
        }
        Eigen::MatrixXd cov = study.covariance;
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() != Eigen::Success || study.degenerate) {
            if (!options.jitter_singular)
                throw ValidationError(fmt::format(
                    "study {}: observation covariance is singular; rerun with the jitter option", study.study));
            cov.diagonal().array() += 1e-8;
            llt.compute(cov);
            if (llt.info() != Eigen::Success)
                throw ValidationError(fmt::format("study {}: covariance not positive definite after jitter", study.study));
        }
        s.S = cov / weights[j];
        s.P = weights[j] * llt.solve(Eigen::MatrixXd::Identity(s.m, s.m));
        s.Py = s.P * s.y;
        s.offset = offset;
        offset += static_cast<std::size_t>(s.m);
        problem->studies.push_back(std::move(s));
    }

    inference::Model model;
    for (std::size_t k = 1; k < problem->K; ++k) model.names.push_back("d." + treatments[k]);
    model.names.push_back("log_tau");
    for (std::size_t j = 0; j < data.size(); ++j)
        for (std::size_t k = 1; k < data[j].treatments.size(); ++k)
            model.names.push_back(fmt::format("delta[{},{}]", data[j].study, data[j].treatments[k]));
    model.init.assign(offset, 0.0);
    model.init[problem->tau_index] = std::log(0.5);

    const double tau_sd = options.priors.tau_sd;
    if (!options.priors.fixed_tau) {
        inference::MetropolisBlock tau_block;
        tau_block.indices = {problem->tau_index};
        tau_block.log_density = [problem, tau_sd](std::span<const double> x) {
            double log_tau = x[problem->tau_index];
            if (!std::isfinite(log_tau) || log_tau > 20 || log_tau < -30) return neg_inf;
            double tau = std::exp(log_tau);
            double lp = -0.5 * (tau / tau_sd) * (tau / tau_sd) + log_tau;
            return lp + marginal_loglik(*problem, basic(x, problem->K), tau);
        };
        model.blocks.emplace_back(std::move(tau_block));
    }
    model.blocks.emplace_back(inference::GibbsBlock{[problem](std::span<double> x, Rng& rng) { draw_basic(*problem, x, rng); }});
    model.blocks.emplace_back(inference::GibbsBlock{[problem](std::span<double> x, Rng& rng) { draw_effects(*problem, x, rng); }});
    model.jitter = 0.5;

    for (const auto& t : treatments) model.output_names.push_back("d." + t);
    model.output_names.push_back("tau");
    for (std::size_t i = problem->K; i < offset; ++i) model.output_names.push_back(model.names[i]);
    model.transform = [problem, offset](std::span<const double> x, std::span<double> out) {
        out[0] = 0.0;
        for (std::size_t k = 1; k < problem->K; ++k) out[k] = x[k - 1];
        out[problem->K] = tau_of(*problem, x);
        for (std::size_t i = problem->K; i < offset; ++i) out[i + 1] = x[i];
    };

    return {std::move(network), inference::sample(model, mcmc), weights};
}

Eigen::MatrixXd rank_probabilities(const Eigen::MatrixXd& d_draws) {
    const auto K = d_draws.cols();
    const auto n = d_draws.rows();
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(K, K);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(K));
    for (Eigen::Index i = 0; i < n; ++i) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](Eigen::Index a, Eigen::Index b) { return d_draws(i, a) > d_draws(i, b); });
        for (Eigen::Index r = 0; r < K; ++r) counts(order[static_cast<std::size_t>(r)], r) += 1.0;
    }
    return counts / static_cast<double>(n);
}

std::vector<double> sucra(const Eigen::MatrixXd& rank_matrix) {
    const auto K = rank_matrix.rows();
    std::vector<double> out(static_cast<std::size_t>(K), 1.0);
    if (K < 2) return out;
    for (Eigen::Index k = 0; k < K; ++k) {
        double cumulative = 0, total = 0;
        for (Eigen::Index r = 0; r + 1 < K; ++r) {
            cumulative += rank_matrix(k, r);
            total += cumulative;
        }
        out[static_cast<std::size_t>(k)] = total / static_cast<double>(K - 1);
    }
    return out;
}

Eigen::VectorXd contrast_draws(const Eigen::MatrixXd& d_draws, std::size_t k, std::size_t l) {
    return d_draws.col(static_cast<Eigen::Index>(k)) - d_draws.col(static_cast<Eigen::Index>(l));
}

std::vector<std::vector<LeagueEntry>> league_table(const Eigen::MatrixXd& d_draws) {
    const auto K = static_cast<std::size_t>(d_draws.cols());
    std::vector<std::vector<LeagueEntry>> table(K, std::vector<LeagueEntry>(K));
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t l = 0; l < K; ++l) {
            Eigen::VectorXd diff = contrast_draws(d_draws, k, l);
            std::vector<double> v(diff.data(), diff.data() + diff.size());
            table[k][l] = {diff.mean(), inference::quantile(v, 0.025), inference::quantile(v, 0.975)};
        }
    return table;
}

} // namespace survnma::nma
