#include "survnma/mortality.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace survnma::mortality {

namespace {

constexpr double kPriorVar = 100.0; // N(0, 10^2) on alpha, beta, u and kappa_1
constexpr double kIgShape = 1e-3;
constexpr double kIgRate = 1e-3;

double inverse_gamma(double shape, double rate, Rng& rng) {
    std::gamma_distribution<double> g(shape, 1.0 / rate);
    return 1.0 / g(rng);
}

struct Layout {
    std::size_t X, T;
    std::size_t alpha(std::size_t x) const { return x; }
    std::size_t beta(std::size_t x) const { return X + x; }
    std::size_t kappa(std::size_t t) const { return 2 * X + t; }
    std::size_t u() const { return 2 * X + T; }
    std::size_t var_eps() const { return u() + 1; }
    std::size_t var_v() const { return u() + 2; }
    std::size_t size() const { return u() + 3; }
};

// Draws kappa ~ N(Q^{-1} b, Q^{-1}) for a tridiagonal Q (diag, off-diagonal).
void sample_tridiagonal(std::vector<double> diag, const std::vector<double>& off, std::vector<double> b,
                        std::span<double> out, Rng& rng) {
    const std::size_t n = diag.size();
    std::vector<double> l(n), m(n, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        if (t > 0) {
            m[t] = off[t - 1] / l[t - 1];
            diag[t] -= m[t] * m[t];
        }
        l[t] = std::sqrt(diag[t]);
    }
    // L w = b
    for (std::size_t t = 0; t < n; ++t) b[t] = (b[t] - (t > 0 ? m[t] * b[t - 1] : 0.0)) / l[t];
    std::normal_distribution<double> z(0.0, 1.0);
    for (std::size_t t = 0; t < n; ++t) b[t] += z(rng);
    // L^T x = w + z
    for (std::size_t k = n; k-- > 0;) {
        double v = b[k] - (k + 1 < n ? m[k + 1] * out[k + 1] : 0.0);
        out[k] = v / l[k];
    }
}

} // namespace

double LeeCarterDraws::alpha(std::size_t draw, int age) const {
    auto d = static_cast<int>(draw / draws.iterations());
    auto i = static_cast<int>(draw % draws.iterations());
    return draws.at(d, i, static_cast<std::size_t>(age - first_age));
}

double LeeCarterDraws::beta(std::size_t draw, int age) const {
    auto d = static_cast<int>(draw / draws.iterations());
    auto i = static_cast<int>(draw % draws.iterations());
    return draws.at(d, i, static_cast<std::size_t>(ages + age - first_age));
}

double LeeCarterDraws::kappa(std::size_t draw, int year) const {
    auto d = static_cast<int>(draw / draws.iterations());
    auto i = static_cast<int>(draw % draws.iterations());
    return draws.at(d, i, static_cast<std::size_t>(2 * ages + year - first_year));
}

double LeeCarterDraws::drift(std::size_t draw) const {
    auto d = static_cast<int>(draw / draws.iterations());
    auto i = static_cast<int>(draw % draws.iterations());
    return draws.at(d, i, static_cast<std::size_t>(2 * ages + years));
}

double LeeCarterDraws::sigma_eps(std::size_t draw) const {
    auto d = static_cast<int>(draw / draws.iterations());
    auto i = static_cast<int>(draw % draws.iterations());
    return draws.at(d, i, static_cast<std::size_t>(2 * ages + years + 1));
}

double LeeCarterDraws::sigma_v(std::size_t draw) const {
    auto d = static_cast<int>(draw / draws.iterations());
    auto i = static_cast<int>(draw % draws.iterations());
    return draws.at(d, i, static_cast<std::size_t>(2 * ages + years + 2));
}

LeeCarterDraws fit_lee_carter(const MortalityTable& table, const inference::McmcConfig& mcmc) {
    if (table.years() < 2)
        throw ValidationError(fmt::format("Lee-Carter fit for {}/{} needs at least 2 years of data, got {}",
                                          table.country, data_io::to_string(table.sex), table.years()));
    if (!(table.rates.array() > 0).all() || !table.rates.allFinite())
        throw ValidationError("Lee-Carter fit: rates must be positive and finite");
    mcmc.validate();

    const Layout L{static_cast<std::size_t>(table.ages()), static_cast<std::size_t>(table.years())};
    const Eigen::MatrixXd y = table.rates.array().log().matrix();
    const auto X = L.X, T = L.T;

    inference::Model model;
    model.names.resize(L.size());
    model.output_names.resize(L.size());
    for (std::size_t x = 0; x < X; ++x) {
        int age = table.first_age + static_cast<int>(x);
        model.names[L.alpha(x)] = fmt::format("alpha[{}]", age);
        model.names[L.beta(x)] = fmt::format("beta[{}]", age);
    }
    for (std::size_t t = 0; t < T; ++t)
        model.names[L.kappa(t)] = fmt::format("kappa[{}]", table.first_year + static_cast<int>(t));
    model.names[L.u()] = "u";
    model.names[L.var_eps()] = "var_eps";
    model.names[L.var_v()] = "var_v";
    model.output_names = model.names;
    model.output_names[L.var_eps()] = "sigma_eps";
    model.output_names[L.var_v()] = "sigma_v";

    // Crude moment start: alpha = row means, kappa = centred column means, beta flat.
    model.init.assign(L.size(), 0.0);
    const Eigen::VectorXd row_mean = y.rowwise().mean();
    const double grand = row_mean.mean();
    for (std::size_t x = 0; x < X; ++x) {
        model.init[L.alpha(x)] = row_mean(static_cast<Eigen::Index>(x));
        model.init[L.beta(x)] = 1.0 / static_cast<double>(X);
    }
    for (std::size_t t = 0; t < T; ++t)
        model.init[L.kappa(t)] = (y.col(static_cast<Eigen::Index>(t)).mean() - grand) * static_cast<double>(X);
    model.init[L.var_eps()] = 1.0;
    model.init[L.var_v()] = 1.0;
    model.jitter = 0.1;

    model.blocks.push_back(inference::GibbsBlock{[=](std::span<double> s, Rng& rng) {
        std::normal_distribution<double> z(0.0, 1.0);
        double ve = s[L.var_eps()];
        double vv = s[L.var_v()];

        for (std::size_t x = 0; x < X; ++x) {
            double sum = 0;
            for (std::size_t t = 0; t < T; ++t)
                sum += y(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(t)) - s[L.beta(x)] * s[L.kappa(t)];
            double prec = static_cast<double>(T) / ve + 1.0 / kPriorVar;
            s[L.alpha(x)] = (sum / ve) / prec + z(rng) / std::sqrt(prec);
        }

        double kk = 0;
        for (std::size_t t = 0; t < T; ++t) kk += s[L.kappa(t)] * s[L.kappa(t)];
        for (std::size_t x = 0; x < X; ++x) {
            double cross = 0;
            for (std::size_t t = 0; t < T; ++t)
                cross += s[L.kappa(t)] * (y(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(t)) - s[L.alpha(x)]);
            double prec = kk / ve + 1.0 / kPriorVar;
            s[L.beta(x)] = (cross / ve) / prec + z(rng) / std::sqrt(prec);
        }

        {
            double bb = 0;
            for (std::size_t x = 0; x < X; ++x) bb += s[L.beta(x)] * s[L.beta(x)];
            std::vector<double> diag(T, bb / ve), off(T - 1, -1.0 / vv), b(T, 0.0);
            for (std::size_t t = 0; t < T; ++t) {
                for (std::size_t x = 0; x < X; ++x)
                    b[t] += s[L.beta(x)] * (y(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(t)) - s[L.alpha(x)]) / ve;
                if (t > 0) {
                    diag[t] += 1.0 / vv;
                    b[t] += s[L.u()] / vv;
                }
                if (t + 1 < T) {
                    diag[t] += 1.0 / vv;
                    b[t] -= s[L.u()] / vv;
                }
            }
            diag[0] += 1.0 / kPriorVar;
            sample_tridiagonal(std::move(diag), off, std::move(b), s.subspan(L.kappa(0), T), rng);
        }

        {
            double sum = s[L.kappa(T - 1)] - s[L.kappa(0)];
            double prec = static_cast<double>(T - 1) / vv + 1.0 / kPriorVar;
            s[L.u()] = (sum / vv) / prec + z(rng) / std::sqrt(prec);
        }

        double sse = 0;
        for (std::size_t x = 0; x < X; ++x)
            for (std::size_t t = 0; t < T; ++t) {
                double r = y(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(t)) - s[L.alpha(x)] -
                           s[L.beta(x)] * s[L.kappa(t)];
                sse += r * r;
            }
        s[L.var_eps()] = inverse_gamma(kIgShape + 0.5 * static_cast<double>(X * T), kIgRate + 0.5 * sse, rng);

        double ssv = 0;
        for (std::size_t t = 1; t < T; ++t) {
            double r = s[L.kappa(t)] - s[L.kappa(t - 1)] - s[L.u()];
            ssv += r * r;
        }
        s[L.var_v()] = inverse_gamma(kIgShape + 0.5 * static_cast<double>(T - 1), kIgRate + 0.5 * ssv, rng);
    }});

    model.post_sweep = [=](std::span<double> s) {
        double c = 0;
        for (std::size_t t = 0; t < T; ++t) c += s[L.kappa(t)];
        c /= static_cast<double>(T);
        for (std::size_t x = 0; x < X; ++x) s[L.alpha(x)] += s[L.beta(x)] * c;
        for (std::size_t t = 0; t < T; ++t) s[L.kappa(t)] -= c;
        double b = 0;
        for (std::size_t x = 0; x < X; ++x) b += s[L.beta(x)];
        if (b == 0 || !std::isfinite(b)) return;
        for (std::size_t x = 0; x < X; ++x) s[L.beta(x)] /= b;
        for (std::size_t t = 0; t < T; ++t) s[L.kappa(t)] *= b;
        s[L.u()] *= b;
        s[L.var_v()] *= b * b;
    };

    model.transform = [=](std::span<const double> s, std::span<double> out) {
        std::copy(s.begin(), s.end(), out.begin());
        out[L.var_eps()] = std::sqrt(s[L.var_eps()]);
        out[L.var_v()] = std::sqrt(s[L.var_v()]);
    };

    LeeCarterDraws out;
    out.first_age = table.first_age;
    out.first_year = table.first_year;
    out.ages = table.ages();
    out.years = table.years();
    out.draws = inference::sample(model, mcmc);
    if (out.draws.chains() > 1) {
        out.max_rhat = inference::max_rhat(out.draws);
        out.converged = out.max_rhat <= 1.05;
        if (!out.converged)
            out.warning = fmt::format("Lee-Carter fit for {}/{}: max R-hat {:.3f} exceeds 1.05", table.country,
                                      data_io::to_string(table.sex), out.max_rhat);
    }
    return out;
}

Eigen::MatrixXd project_kappa(const LeeCarterDraws& draws, int horizon, std::uint64_t seed) {
    if (horizon < 1) throw ValidationError("project_kappa: horizon must be >= 1");
    const auto n = draws.size();
    Eigen::MatrixXd out(static_cast<Eigen::Index>(n), horizon);
    Rng rng = make_rng(seed, 0x1EE);
    std::normal_distribution<double> z(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        double k = draws.kappa(i, draws.last_year());
        const double u = draws.drift(i), sv = draws.sigma_v(i);
        for (int h = 0; h < horizon; ++h) {
            k += u + (sv > 0 ? sv * z(rng) : 0.0);
            out(static_cast<Eigen::Index>(i), h) = k;
        }
    }
    return out;
}

MortalityProjection MortalityProjection::from_table(const MortalityTable& table) {
    if (table.ages() < 1 || table.years() < 1) throw ValidationError("mortality table is empty");
    if (table.last_age() < kLastTabulatedAge)
        throw ValidationError(fmt::format("mortality table must cover ages up to {}", kLastTabulatedAge));
    MortalityProjection p;
    p.draws_ = 1;
    p.first_year_ = table.first_year;
    p.last_year_ = table.last_year();
    p.first_age_ = table.first_age;
    p.table_ = table.rates;
    return p;
}

MortalityProjection MortalityProjection::from_lee_carter(const LeeCarterDraws& draws, int horizon, std::uint64_t seed,
                                                         std::size_t max_draws) {
    if (horizon < 0) throw ValidationError("projection horizon must be >= 0");
    if (draws.first_age + draws.ages - 1 < kLastTabulatedAge)
        throw ValidationError(fmt::format("Lee-Carter fit must cover ages up to {}", kLastTabulatedAge));
    const std::size_t total = draws.size();
    const std::size_t n = std::max<std::size_t>(1, std::min(max_draws, total));
    Eigen::MatrixXd projected;
    if (horizon > 0) projected = project_kappa(draws, horizon, seed);

    MortalityProjection p;
    p.draws_ = n;
    p.first_year_ = draws.first_year;
    p.last_year_ = draws.last_year() + horizon;
    p.first_age_ = draws.first_age;
    p.alpha_.resize(static_cast<Eigen::Index>(n), draws.ages);
    p.beta_.resize(static_cast<Eigen::Index>(n), draws.ages);
    p.kappa_.resize(static_cast<Eigen::Index>(n), draws.years + horizon);
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = j * total / n;
        const auto r = static_cast<Eigen::Index>(j);
        for (int a = 0; a < draws.ages; ++a) {
            p.alpha_(r, a) = draws.alpha(src, draws.first_age + a);
            p.beta_(r, a) = draws.beta(src, draws.first_age + a);
        }
        for (int t = 0; t < draws.years; ++t) p.kappa_(r, t) = draws.kappa(src, draws.first_year + t);
        for (int h = 0; h < horizon; ++h) p.kappa_(r, draws.years + h) = projected(static_cast<Eigen::Index>(src), h);
    }
    return p;
}

double MortalityProjection::rate(std::size_t draw, int age, int year) const {
    if (draw >= draws_) throw std::out_of_range("mortality projection: draw index out of range");
    if (year < first_year_ || year > last_year_)
        throw ValidationError(fmt::format("mortality projection covers years {}-{}, requested {}", first_year_,
                                          last_year_, year));
    if (age < first_age_) throw ValidationError(fmt::format("mortality projection starts at age {}", first_age_));
    const auto a = static_cast<Eigen::Index>(std::min(age, kLastTabulatedAge) - first_age_);
    const auto t = static_cast<Eigen::Index>(year - first_year_);
    if (table_.size() > 0) return table_(a, t);
    const auto d = static_cast<Eigen::Index>(draw);
    return std::exp(alpha_(d, a) + beta_(d, a) * kappa_(d, t));
}

CohortSurvival cohort_survival(const MortalityProjection& projection, int start_age, int start_year, int horizon) {
    if (horizon < 0) throw ValidationError("cohort survival: horizon must be >= 0");
    if (start_age < 0 || start_age > kClosingAge)
        throw ValidationError(fmt::format("cohort survival: start age {} outside 0..{}", start_age, kClosingAge));
    // Rates are needed for years Y .. Y + min(H, 110 - x) - 1.
    const int needed = std::min(horizon, kClosingAge - start_age);
    if (needed > 0 && (start_year < projection.first_year() || start_year + needed - 1 > projection.last_year()))
        throw ValidationError(fmt::format("cohort survival from age {} in {} over {} years needs rates for {}-{}; "
                                          "projection covers {}-{}",
                                          start_age, start_year, horizon, start_year, start_year + needed - 1,
                                          projection.first_year(), projection.last_year()));
    CohortSurvival out;
    out.start_age = start_age;
    out.start_year = start_year;
    out.values.resize(static_cast<Eigen::Index>(projection.size()), horizon + 1);
    for (std::size_t d = 0; d < projection.size(); ++d) {
        const auto r = static_cast<Eigen::Index>(d);
        double cumulative = 0;
        out.values(r, 0) = 1.0;
        for (int h = 1; h <= horizon; ++h) {
            if (start_age + h >= kClosingAge) {
                out.values(r, h) = 0.0;
                continue;
            }
            cumulative += projection.rate(d, start_age + h - 1, start_year + h - 1);
            out.values(r, h) = std::exp(-cumulative);
        }
    }
    return out;
}

std::vector<CellKey> required_cells(const data_io::StudyMeta& meta) {
    std::vector<CellKey> cells;
    for (Sex sex : {Sex::female, Sex::male}) {
        double sw = sex == Sex::female ? meta.female_proportion : 1.0 - meta.female_proportion;
        if (sw <= 0) continue;
        for (const auto& [country, cw] : meta.country_weights) {
            if (cw <= 0) continue;
            for (const auto& [age, aw] : meta.age_distribution)
                if (aw > 0) cells.emplace_back(country, sex, age);
        }
    }
    return cells;
}

ExternalPopulation synthesize_external(const CohortCurves& curves, const data_io::StudyMeta& meta) {
    meta.validate();
    const auto cells = required_cells(meta);
    if (cells.empty()) throw ValidationError(fmt::format("study {}: no population cell has positive weight", meta.study));

    std::vector<std::string> missing;
    for (const auto& c : cells)
        if (!curves.count(c))
            missing.push_back(fmt::format("{}/{}/{}", std::get<0>(c), data_io::to_string(std::get<1>(c)), std::get<2>(c)));
    if (!missing.empty()) {
        std::string list;
        for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
        throw ReferenceError(fmt::format("study {}: no mortality curve for {}", meta.study, list));
    }

    Eigen::Index n_draws = -1, n_times = 0;
    for (const auto& c : cells) {
        const auto& cs = curves.at(c);
        if (n_draws < 0) n_draws = cs.values.rows();
        if (cs.values.rows() != n_draws)
            throw ValidationError(fmt::format("study {}: cohort curves carry different draw counts", meta.study));
        n_times = std::max(n_times, cs.values.cols());
    }

    std::map<std::string, double> cw(meta.country_weights.begin(), meta.country_weights.end());
    std::map<int, double> aw;
    for (const auto& [age, w] : meta.age_distribution) aw[age] += w;

    // A curve that ends early has closed (S = 0) beyond its last column.
    auto extended = [&](const CohortSurvival& cs) {
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n_draws, n_times);
        m.leftCols(cs.values.cols()) = cs.values;
        return m;
    };

    Eigen::MatrixXd agg = Eigen::MatrixXd::Zero(n_draws, n_times);
    for (Sex sex : {Sex::female, Sex::male}) {
        const double sw = sex == Sex::female ? meta.female_proportion : 1.0 - meta.female_proportion;
        if (sw <= 0) continue;
        Eigen::MatrixXd within = Eigen::MatrixXd::Zero(n_draws, n_times);
        for (const auto& c : cells) {
            if (std::get<1>(c) != sex) continue;
            within += cw.at(std::get<0>(c)) * aw.at(std::get<2>(c)) * extended(curves.at(c));
        }
        agg += sw * within;
    }

    ExternalPopulation out;
    out.study = meta.study;
    out.draws = agg;
    out.curve.times.resize(static_cast<std::size_t>(n_times));
    out.curve.values.resize(static_cast<std::size_t>(n_times));
    out.lower.resize(static_cast<std::size_t>(n_times));
    out.upper.resize(static_cast<std::size_t>(n_times));
    for (Eigen::Index t = 0; t < n_times; ++t) {
        const auto i = static_cast<std::size_t>(t);
        out.curve.times[i] = static_cast<double>(t);
        std::vector<double> col(agg.col(t).data(), agg.col(t).data() + n_draws);
        out.curve.values[i] = std::clamp(agg.col(t).mean(), 0.0, 1.0);
        out.lower[i] = inference::quantile(col, 0.025);
        out.upper[i] = inference::quantile(col, 0.975);
    }
    out.curve.values[0] = 1.0;
    for (std::size_t i = 1; i < out.curve.values.size(); ++i)
        out.curve.values[i] = std::min(out.curve.values[i], out.curve.values[i - 1]);
    out.curve.epsilon = 0.0;
    out.notes.push_back(fmt::format("ages above {} use the age-{} rate; curves close at age {}", kLastTabulatedAge,
                                    kLastTabulatedAge, kClosingAge));
    return out;
}

std::vector<survmodels::Observation> sample_synthetic_times(const mst::SurvivalCurve& curve, std::size_t n,
                                                            std::uint64_t seed, std::vector<std::string>* warnings) {
    if (n < 1) throw ValidationError("synthetic sample size must be >= 1");
    curve.validate();
    if (curve.times.size() < 2) throw ValidationError("synthetic sampling needs a curve with at least two points");
    if (warnings && curve.terminal() >= 0.5)
        warnings->push_back(fmt::format("external curve never drops below 0.5 (terminal S = {:.3f}); median undefined",
                                        curve.terminal()));
    const auto& S = curve.values;
    const auto& t = curve.times;
    const double t_end = curve.t_max();
    Rng rng = make_rng(seed, 0x5E7);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<survmodels::Observation> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double u = unif(rng); // u in [0, 1): target S(T) = u
        if (u <= curve.terminal()) {
            out.push_back({t_end, false});
            continue;
        }
        // First grid point strictly below u; S is nonincreasing so this is a binary search.
        auto it = std::partition_point(S.begin(), S.end(), [u](double s) { return s >= u; });
        const auto j = static_cast<std::size_t>(it - S.begin());
        const double frac = (S[j - 1] - u) / (S[j - 1] - S[j]);
        out.push_back({t[j - 1] + frac * (t[j] - t[j - 1]), true});
    }
    return out;
}

} // namespace survnma::mortality
