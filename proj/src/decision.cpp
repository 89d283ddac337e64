#include "survnma/decision.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace survnma::decision {

std::string to_string(Loss loss) {
    switch (loss) {
    case Loss::zero_one: return "zero_one";
    case Loss::regret: return "regret";
    case Loss::squared_regret: return "squared_regret";
    }
    return "unknown";
}

namespace {

std::size_t argmax_row(const Eigen::MatrixXd& m, Eigen::Index row) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < m.cols(); ++k)
        if (m(row, k) > m(row, best)) best = k;
    return static_cast<std::size_t>(best);
}

void require_draws(const Eigen::MatrixXd& d) {
    if (d.rows() < 1 || d.cols() < 1) throw ValidationError("decision: need at least one draw and one treatment");
}

} // namespace

std::vector<double> probability_best(const Eigen::MatrixXd& d_draws) {
    require_draws(d_draws);
    std::vector<double> p(static_cast<std::size_t>(d_draws.cols()), 0.0);
    for (Eigen::Index i = 0; i < d_draws.rows(); ++i) p[argmax_row(d_draws, i)] += 1.0;
    for (double& v : p) v /= static_cast<double>(d_draws.rows());
    return p;
}

BayesRuleResult bayes_rule(const Eigen::MatrixXd& d_draws, Loss loss) {
    require_draws(d_draws);
    const auto K = static_cast<std::size_t>(d_draws.cols());
    const auto n = static_cast<double>(d_draws.rows());
    BayesRuleResult out;
    out.loss = loss;
    out.prob_best = probability_best(d_draws);
    out.means.resize(K);
    out.risks.assign(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) out.means[k] = d_draws.col(static_cast<Eigen::Index>(k)).mean();

    if (loss == Loss::zero_one) {
        for (std::size_t k = 0; k < K; ++k) out.risks[k] = 1.0 - out.prob_best[k];
    } else {
        for (Eigen::Index i = 0; i < d_draws.rows(); ++i) {
            double best = d_draws.row(i).maxCoeff();
            for (std::size_t k = 0; k < K; ++k) {
                double miss = best - d_draws(i, static_cast<Eigen::Index>(k));
                out.risks[k] += loss == Loss::regret ? miss : miss * miss;
            }
        }
        for (double& r : out.risks) r /= n;
    }
    out.chosen = static_cast<std::size_t>(std::min_element(out.risks.begin(), out.risks.end()) - out.risks.begin());
    out.tie = std::count(out.risks.begin(), out.risks.end(), out.risks[out.chosen]) > 1;
    return out;
}

LaevResult laev(const Eigen::MatrixXd& d_draws, std::size_t reference, double mcid) {
    require_draws(d_draws);
    if (!(mcid >= 0)) throw ValidationError("laev: mcid must be >= 0");
    const auto K = static_cast<std::size_t>(d_draws.cols());
    if (reference >= K) throw ValidationError("laev: reference treatment out of range");
    LaevResult out;
    for (std::size_t k = 0; k < K; ++k) out.means.push_back(d_draws.col(static_cast<Eigen::Index>(k)).mean());
    for (std::size_t k = 0; k < K; ++k)
        if (!(out.means[k] < out.means[reference])) out.after_screening.push_back(k);
    double best = -std::numeric_limits<double>::infinity();
    for (auto k : out.after_screening) best = std::max(best, out.means[k]);
    for (auto k : out.after_screening)
        if (out.means[k] >= best - mcid) out.survivors.push_back(k);
    if (out.survivors.size() == 1) out.recommendation = out.survivors.front();
    return out;
}

GradeResult grade_decide(const std::vector<double>& prob_best, double cutoff) {
    if (!(cutoff > 0.5 && cutoff <= 1.0)) throw ValidationError("grade: cutoff must lie in (0.5, 1]");
    GradeResult out;
    out.cutoff = cutoff;
    out.leader = static_cast<std::size_t>(std::max_element(prob_best.begin(), prob_best.end()) - prob_best.begin());
    out.leader_probability = prob_best[out.leader];
    if (out.leader_probability >= cutoff) out.recommendation = out.leader;
    return out;
}

GradeResult grade_decide(const Eigen::MatrixXd& d_draws, double cutoff) {
    return grade_decide(probability_best(d_draws), cutoff);
}

CostDraws sample_costs(const std::vector<CostSpec>& specs, std::size_t n, std::uint64_t seed) {
    if (n < 1) throw ValidationError("sample_costs: n must be >= 1");
    CostDraws out;
    out.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(specs.size()));
    for (std::size_t k = 0; k < specs.size(); ++k) {
        const auto& s = specs[k];
        if (!(s.mean_cost > 0 && std::isfinite(s.mean_cost)) || !(s.cv > 0 && std::isfinite(s.cv)))
            throw ValidationError(fmt::format("cost for '{}': mean and cv must be finite and positive", s.treatment));
        out.treatments.push_back(s.treatment);
        Rng rng = make_rng(seed, k);
        std::gamma_distribution<double> gamma(1.0 / (s.cv * s.cv), s.mean_cost * s.cv * s.cv);
        for (std::size_t i = 0; i < n; ++i) out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = gamma(rng);
    }
    return out;
}

std::vector<double> parse_lambda_grid(const std::string& text) {
    std::vector<double> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ':')) {
        try {
            std::size_t used = 0;
            parts.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ValidationError("lambda grid: cannot parse '" + text + "'");
        }
    }
    std::vector<double> out;
    if (parts.size() == 1) {
        out.push_back(parts[0]);
    } else if (parts.size() == 3) {
        const double start = parts[0], stop = parts[1], step = parts[2];
        if (!(step > 0) || stop < start) throw ValidationError("lambda grid: need start <= stop and step > 0");
        auto count = static_cast<long>(std::floor((stop - start) / step + 1e-9));
        for (long i = 0; i <= count; ++i) out.push_back(start + static_cast<double>(i) * step);
    } else {
        throw ValidationError("lambda grid: expected 'start:stop:step' or a single value");
    }
    for (double l : out)
        if (!(l >= 0)) throw ValidationError("lambda grid: values must be >= 0");
    return out;
}

Eigen::MatrixXd net_benefit(const Eigen::MatrixXd& d_draws, const Eigen::MatrixXd& cost_draws, double lambda) {
    return lambda * d_draws - cost_draws;
}

Eigen::MatrixXd match_draws(const Eigen::MatrixXd& costs, std::size_t n, std::uint64_t seed) {
    if (static_cast<std::size_t>(costs.rows()) == n) return costs;
    Rng rng = make_rng(seed, 0xC057);
    std::uniform_int_distribution<Eigen::Index> pick(0, costs.rows() - 1);
    Eigen::MatrixXd out(static_cast<Eigen::Index>(n), costs.cols());
    for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = costs.row(pick(rng));
    return out;
}

CeaResult cea(const Eigen::MatrixXd& d_draws, const Eigen::MatrixXd& cost_draws, const std::vector<double>& lambdas,
              std::size_t reference) {
    require_draws(d_draws);
    if (lambdas.empty()) throw ValidationError("cea: lambda grid is empty");
    if (cost_draws.rows() != d_draws.rows() || cost_draws.cols() != d_draws.cols())
        throw ValidationError("cea: effect and cost draws must have the same shape");
    for (double l : lambdas)
        if (!(l >= 0)) throw ValidationError("cea: lambda must be >= 0");
    const auto K = d_draws.cols();
    const auto L = static_cast<Eigen::Index>(lambdas.size());
    if (reference >= static_cast<std::size_t>(K)) throw ValidationError("cea: reference out of range");

    CeaResult out;
    out.lambdas = lambdas;
    for (Eigen::Index k = 0; k < K; ++k) {
        out.mean_effect.push_back(d_draws.col(k).mean());
        out.mean_cost.push_back(cost_draws.col(k).mean());
    }
    out.expected_net_benefit.resize(L, K);
    out.eib.resize(L, K);
    out.ceac = Eigen::MatrixXd::Zero(L, K);
    const auto ref = static_cast<Eigen::Index>(reference);
    for (Eigen::Index l = 0; l < L; ++l) {
        const double lambda = lambdas[static_cast<std::size_t>(l)];
        for (Eigen::Index k = 0; k < K; ++k) {
            // Linearity of expectation keeps the switch point at the exact ICER.
            out.expected_net_benefit(l, k) = lambda * out.mean_effect[k] - out.mean_cost[k];
            out.eib(l, k) = lambda * (out.mean_effect[k] - out.mean_effect[ref]) - (out.mean_cost[k] - out.mean_cost[ref]);
        }
        out.optimal.push_back(argmax_row(out.expected_net_benefit, l));
        Eigen::MatrixXd nb = net_benefit(d_draws, cost_draws, lambda);
        for (Eigen::Index i = 0; i < nb.rows(); ++i) out.ceac(l, static_cast<Eigen::Index>(argmax_row(nb, i))) += 1.0;
        out.ceac.row(l) /= static_cast<double>(nb.rows());
    }
    for (Eigen::Index k = 0; k < K; ++k) {
        if (k == ref) continue;
        IcerEntry e;
        e.treatment = static_cast<std::size_t>(k);
        e.delta_effect = out.mean_effect[k] - out.mean_effect[ref];
        e.delta_cost = out.mean_cost[k] - out.mean_cost[ref];
        if (std::abs(e.delta_effect) >= 1e-9) e.icer = e.delta_cost / e.delta_effect;
        out.icers.push_back(e);
    }
    for (std::size_t l = 1; l < out.optimal.size(); ++l) {
        std::size_t from = out.optimal[l - 1], to = out.optimal[l];
        if (from == to) continue;
        double de = out.mean_effect[to] - out.mean_effect[from];
        double lambda = std::abs(de) >= 1e-9 ? (out.mean_cost[to] - out.mean_cost[from]) / de : lambdas[l];
        out.switch_points.emplace_back(lambda, to);
    }
    return out;
}

} // namespace survnma::decision
