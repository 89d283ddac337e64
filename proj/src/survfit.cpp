#include "survnma/survfit.hpp"

#include "survnma/common.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace survnma::survfit {

using survmodels::Family;
using survmodels::Group;
using survmodels::HazardComponent;
using survmodels::JointPolyHazard;

namespace {
constexpr double neg_inf = -std::numeric_limits<double>::infinity();
}

PreparedData::PreparedData(std::span<const Observation> data) {
    for (const auto& o : data) {
        time.push_back(o.time);
        log_time.push_back(std::log(o.time));
        event.push_back(o.event ? 1 : 0);
    }
}

double fast_group_loglik(const JointPolyHazard& model, Group g, const PreparedData& data) {
    struct Term {
        double shape, log_scale, multiplier;
        bool loglogistic;
    };
    std::vector<Term> terms;
    for (std::size_t m = 0; m < model.components(); ++m) {
        const HazardComponent* c = &model.population_component(m);
        double mult = 1.0;
        if (g == Group::disease) {
            if (m == 0 && model.coupling().first_proportional) mult = model.proportionality();
            else c = &model.disease_component(m);
        }
        terms.push_back({c->shape, std::log(c->scale), mult, c->family == Family::loglogistic});
    }
    double total = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        double h = 0, H = 0;
        for (const auto& term : terms) {
            double q = std::exp(term.shape * (data.log_time[i] - term.log_scale));
            if (term.loglogistic) {
                H += term.multiplier * std::log1p(q);
                h += term.multiplier * term.shape * q / (data.time[i] * (1.0 + q));
            } else {
                H += term.multiplier * q;
                h += term.multiplier * term.shape * q / data.time[i];
            }
        }
        total -= H;
        if (data.event[i]) total += std::log(h);
    }
    return std::isnan(total) ? neg_inf : total;
}

double poly_hazard_log_posterior(const survmodels::PolyHazardLayout& layout, std::span<const double> x,
                                 const PreparedData& disease, const PreparedData& population) {
    for (double v : x)
        if (!std::isfinite(v) || std::abs(v) > 30) return neg_inf;
    if (!layout.ordered(x)) return neg_inf;
    const JointPolyHazard model = layout.build(x);
    double lp = layout.log_prior(x);
    lp += fast_group_loglik(model, Group::disease, disease);
    if (!std::isfinite(lp)) return neg_inf;
    lp += fast_group_loglik(model, Group::population, population);
    return std::isfinite(lp) ? lp : neg_inf;
}

JointPolyHazard PolyHazardFit::model(std::size_t draw) const { return layout.build(draws.draw(draw)); }

PolyHazardFit fit_poly_hazard(const survmodels::PolyHazardLayout& layout, std::span<const Observation> disease,
                              std::span<const Observation> population, const inference::McmcConfig& mcmc,
                              bool allow_unanchored) {
    if (disease.empty()) throw ValidationError("fit_poly_hazard: disease data is empty");
    if (population.empty() && !allow_unanchored)
        throw ValidationError("fit_poly_hazard: external population sample is empty (enable unanchored fitting to allow)");
    auto d = std::make_shared<PreparedData>(disease);
    auto p = std::make_shared<PreparedData>(population);

    inference::Model model;
    model.names = layout.names();
    // Prior means in the unconstrained space (zero), spread so the scale ordering can hold.
    model.init.assign(layout.size(), 0.0);
    for (std::size_t m = 0; m < layout.components(); ++m) model.init[2 * m + 1] = static_cast<double>(m);
    model.log_density = [layout, d, p](std::span<const double> x) {
        return poly_hazard_log_posterior(layout, x, *d, *p);
    };
    // Mixture components leave well-separated local modes; tempered replicas let chains cross them.
    model.replicas = 6;
    model.max_temperature = 30.0;
    return {layout, inference::sample(model, mcmc)};
}

std::vector<double> alr_inverse(std::span<const double> logits) {
    double m = 0;
    for (double z : logits) m = std::max(m, z);
    std::vector<double> p(logits.size() + 1);
    double sum = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) sum += p[i] = std::exp(logits[i] - m);
    sum += p.back() = std::exp(-m);
    for (double& v : p) v /= sum;
    return p;
}

survmodels::MSplineHazard MSplineFit::model(std::size_t draw) const {
    auto x = draws.draw(draw);
    std::vector<double> p(x.begin() + 1, x.begin() + 1 + static_cast<std::ptrdiff_t>(basis.size()));
    double sum = 0;
    for (double v : p) sum += v;
    for (double& v : p) v /= sum; // guard the 1e-12 simplex tolerance against CSV round-off
    return {basis, std::move(p), x[0], background};
}

MSplineFit fit_mspline(std::span<const Observation> disease, survmodels::MSplineBasis basis,
                       survmodels::PiecewiseConstantHazard background, const inference::McmcConfig& mcmc) {
    if (disease.empty()) throw ValidationError("fit_mspline: disease data is empty");
    const std::size_t n = basis.size();
    if (n < 2) throw ValidationError("fit_mspline: need at least two basis functions");

    // Basis terms do not depend on parameters; tabulate them once.
    struct Row {
        std::vector<double> b, cum;
        double hp, Hp;
        bool event;
    };
    auto rows = std::make_shared<std::vector<Row>>();
    for (const auto& o : disease) {
        double s = std::min(o.time, basis.upper());
        Row r;
        r.b = basis.values(s);
        r.cum = basis.integrals(s);
        for (std::size_t i = 0; i < n; ++i) r.cum[i] += (o.time - s) * r.b[i];
        r.hp = background.hazard(o.time);
        r.Hp = background.cumulative_hazard(o.time);
        r.event = o.event;
        rows->push_back(std::move(r));
    }

    // State: [log eta, z_1..z_{n-1}, log sigma_p].
    inference::Model model;
    model.names.push_back("log_eta");
    for (std::size_t i = 1; i < n; ++i) model.names.push_back(fmt::format("logit[{}]", i));
    model.names.push_back("log_sigma_p");
    model.init.assign(n + 1, 0.0);
    model.log_density = [rows, n](std::span<const double> x) {
        for (double v : x)
            if (!std::isfinite(v) || std::abs(v) > 30) return neg_inf;
        const double log_eta = x[0];
        const double log_sigma = x[n];
        const double sigma = std::exp(log_sigma);
        double lp = -0.5 * (log_eta / 2.0) * (log_eta / 2.0);
        lp += -0.5 * sigma * sigma + log_sigma; // half-Normal(0,1) on sigma_p, log-Jacobian
        double prev = x[1];
        for (std::size_t i = 2; i <= n; ++i) {
            double z = i < n ? x[i] : 0.0;
            double diff = z - prev;
            lp += -0.5 * (diff / sigma) * (diff / sigma) - log_sigma;
            prev = z;
        }
        auto p = alr_inverse(x.subspan(1, n - 1));
        const double eta = std::exp(log_eta);
        for (const auto& r : *rows) {
            double h = 0, H = 0;
            for (std::size_t i = 0; i < n; ++i) {
                h += p[i] * r.b[i];
                H += p[i] * r.cum[i];
            }
            lp -= eta * H + r.Hp;
            if (r.event) lp += std::log(eta * h + r.hp);
        }
        return std::isfinite(lp) ? lp : neg_inf;
    };
    model.output_names.push_back("eta");
    for (std::size_t i = 1; i <= n; ++i) model.output_names.push_back(fmt::format("p[{}]", i));
    model.output_names.push_back("sigma_p");
    model.transform = [n](std::span<const double> x, std::span<double> out) {
        out[0] = std::exp(x[0]);
        auto p = alr_inverse(x.subspan(1, n - 1));
        std::copy(p.begin(), p.end(), out.begin() + 1);
        out[n + 1] = std::exp(x[n]);
    };
    return {std::move(basis), std::move(background), inference::sample(model, mcmc)};
}

} // namespace survnma::survfit
