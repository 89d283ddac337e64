#include "survnma/simharness.hpp"

#include "survnma/data_io.hpp"
#include "survnma/plot.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <numeric>
#include <set>

namespace survnma::simharness {

void PowerSimConfig::validate() const {
    if (n_studies < 1) throw ValidationError("power simulation: n_studies must be >= 1");
    if (n_treatments < 2) throw ValidationError("power simulation: n_treatments must be >= 2");
    if (patients_per_arm < 1) throw ValidationError("power simulation: patients_per_arm must be >= 1");
    if (!(within_sd > 0)) throw ValidationError("power simulation: within_sd must be > 0");
    if (n_poor < 0 || n_poor % 2 != 0) throw ValidationError("power simulation: n_poor must be even and >= 0");
    if (n_poor > n_studies) throw ValidationError("power simulation: n_poor exceeds n_studies");
    if (!(tau_true >= 0)) throw ValidationError("power simulation: tau must be >= 0");
    if (!(omega_medium > 0 && omega_medium <= 1) || !(omega_high > 0 && omega_high <= 1))
        throw ValidationError("power simulation: weights must lie in (0, 1]");
    if (replications < 1) throw ValidationError("power simulation: replications must be >= 1");
    mcmc.validate();
}

namespace {

bool connected(int K, const std::vector<std::pair<int, int>>& pairs) {
    std::vector<int> parent(static_cast<std::size_t>(K));
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int x) {
        while (parent[static_cast<std::size_t>(x)] != x) x = parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
        return x;
    };
    for (auto [a, b] : pairs) parent[static_cast<std::size_t>(find(a))] = find(b);
    for (int k = 1; k < K; ++k)
        if (find(k) != find(0)) return false;
    return true;
}

} // namespace

PowerDataset generate_power_dataset(const PowerSimConfig& cfg, int replication) {
    cfg.validate();
    Rng rng = make_rng(cfg.seed, 2 * static_cast<std::uint64_t>(replication));
    const int K = cfg.n_treatments, J = cfg.n_studies;

    PowerDataset out;
    for (int k = 0; k < K; ++k) {
        out.treatments.push_back(fmt::format("T{}", k + 1));
        out.true_d.push_back(cfg.d_step * k);
    }

    std::vector<std::pair<int, int>> all_pairs;
    for (int a = 0; a < K; ++a)
        for (int b = a + 1; b < K; ++b) all_pairs.emplace_back(a, b);
    std::uniform_int_distribution<std::size_t> pick(0, all_pairs.size() - 1);
    std::vector<std::pair<int, int>> pairs;
    bool ok = false;
    for (int attempt = 0; attempt < 10000 && !ok; ++attempt) {
        pairs.clear();
        for (int j = 0; j < J; ++j) pairs.push_back(all_pairs[pick(rng)]);
        ok = connected(K, pairs);
    }
    if (!ok)
        throw ValidationError(fmt::format("power simulation: no connected network of {} two-arm studies on {} treatments", J, K));

    std::vector<int> order(static_cast<std::size_t>(J));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    out.labels.assign(static_cast<std::size_t>(J), "low");
    out.bias.assign(static_cast<std::size_t>(J), 0.0);
    out.weights.assign(static_cast<std::size_t>(J), 1.0);
    for (int i = 0; i < cfg.n_poor; ++i) {
        const auto j = static_cast<std::size_t>(order[static_cast<std::size_t>(i)]);
        const bool medium = i < cfg.n_poor / 2;
        out.labels[j] = medium ? "medium" : "high";
        out.bias[j] = medium ? cfg.medium_bias_fraction * cfg.bias_magnitude : cfg.bias_magnitude;
        out.weights[j] = medium ? cfg.omega_medium : cfg.omega_high;
    }

    std::normal_distribution<double> z;
    const double arm_sd = cfg.within_sd / std::sqrt(static_cast<double>(cfg.patients_per_arm));
    const double variance = 2.0 * cfg.within_sd * cfg.within_sd / cfg.patients_per_arm;
    for (int j = 0; j < J; ++j) {
        const auto [a, b] = pairs[static_cast<std::size_t>(j)];
        const double delta = out.true_d[static_cast<std::size_t>(b)] - out.true_d[static_cast<std::size_t>(a)] + cfg.tau_true * z(rng);
        const double baseline = z(rng);
        const double mean_a = baseline + arm_sd * z(rng);
        const double mean_b = baseline + delta + arm_sd * z(rng);
        mst::ContrastData c;
        c.study = fmt::format("S{}", j + 1);
        c.treatments = {out.treatments[static_cast<std::size_t>(a)], out.treatments[static_cast<std::size_t>(b)]};
        c.y = Eigen::VectorXd::Constant(1, mean_b - mean_a + out.bias[static_cast<std::size_t>(j)]);
        c.covariance = Eigen::MatrixXd::Constant(1, 1, variance);
        c.provenance = "simulated";
        out.data.push_back(std::move(c));
    }
    return out;
}

double crps(const std::vector<double>& draws, double truth, std::size_t max_draws) {
    if (draws.empty()) throw ValidationError("crps: no draws");
    std::vector<double> x;
    const std::size_t n = std::min(draws.size(), std::max<std::size_t>(max_draws, 1));
    x.reserve(n);
    for (std::size_t i = 0; i < n; ++i) x.push_back(draws[i * draws.size() / n]);
    std::sort(x.begin(), x.end());
    double abs_err = 0, pair_sum = 0;
    const double m = static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        abs_err += std::abs(x[i] - truth);
        pair_sum += (2.0 * static_cast<double>(i + 1) - m - 1.0) * x[i];
    }
    // sum_{i,j} |x_i - x_j| = 2 sum_i (2i - n - 1) x_(i)
    return abs_err / m - pair_sum / (m * m);
}

namespace {

ParameterRecord summarise(const std::vector<std::vector<double>>& chains, double truth) {
    ParameterRecord r;
    std::vector<double> pooled;
    for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
    const double n = static_cast<double>(pooled.size());
    r.truth = truth;
    r.mean = std::accumulate(pooled.begin(), pooled.end(), 0.0) / n;
    for (double v : pooled) r.variance += (v - r.mean) * (v - r.mean);
    r.variance /= std::max(n - 1.0, 1.0);
    r.lower = inference::quantile(pooled, 0.025);
    r.upper = inference::quantile(pooled, 0.975);
    r.ess = inference::ess(chains).value_or(n);
    r.crps = crps(pooled, truth);
    return r;
}

} // namespace

std::vector<ParameterRecord> evaluate_fit(const nma::NmaFit& fit, const std::vector<double>& true_d, int replication,
                                          const std::string& model) {
    const auto& treatments = fit.network.treatments();
    const std::size_t K = treatments.size();
    std::vector<std::vector<std::vector<double>>> chains(K);
    for (std::size_t k = 1; k < K; ++k) {
        const auto p = fit.draws.index_of("d." + treatments[k]);
        for (int c = 0; c < fit.draws.chains(); ++c) chains[k].push_back(fit.draws.chain(c, p));
    }
    std::vector<ParameterRecord> out;
    auto finish = [&](ParameterRecord r, std::string name, bool basic) {
        r.replication = replication;
        r.model = model;
        r.parameter = std::move(name);
        r.basic = basic;
        r.runtime = fit.draws.runtime_seconds;
        r.iterations_per_second = fit.draws.iterations_per_second;
        out.push_back(std::move(r));
    };
    for (std::size_t k = 1; k < K; ++k) finish(summarise(chains[k], true_d[k] - true_d[0]), "d." + treatments[k], true);
    for (std::size_t k = 1; k < K; ++k)
        for (std::size_t l = k + 1; l < K; ++l) {
            auto diff = chains[l];
            for (std::size_t c = 0; c < diff.size(); ++c)
                for (std::size_t i = 0; i < diff[c].size(); ++i) diff[c][i] -= chains[k][c][i];
            finish(summarise(diff, true_d[l] - true_d[k]), treatments[l] + "-" + treatments[k], false);
        }
    return out;
}

SimMetrics aggregate(const std::vector<ParameterRecord>& records, const std::string& model, std::size_t failures) {
    SimMetrics m;
    m.failures = failures;
    std::map<int, std::pair<double, std::size_t>> per_rep_error;
    std::map<int, std::pair<double, double>> per_rep_time;
    std::map<std::string, std::pair<double, std::size_t>> per_param;
    std::size_t n = 0, n_all = 0;
    double sq = 0;
    for (const auto& r : records) {
        if (r.model != model) continue;
        const double err = r.mean - r.truth;
        m.mean_bias_all_contrasts += err;
        ++n_all;
        if (!r.basic) continue;
        ++n;
        m.mean_bias += err;
        sq += err * err;
        m.mae += std::abs(err);
        m.coverage += (r.lower <= r.truth && r.truth <= r.upper) ? 1.0 : 0.0;
        m.cri_width += r.upper - r.lower;
        m.posterior_variance += r.variance;
        m.ess += r.ess;
        m.ess_per_second += r.ess / std::max(r.runtime, 1e-9);
        m.crps += r.crps;
        auto& e = per_rep_error[r.replication];
        e.first += err;
        ++e.second;
        per_rep_time[r.replication] = {r.runtime, r.iterations_per_second};
        auto& p = per_param[r.parameter];
        p.first += err;
        ++p.second;
    }
    if (n_all > 0) m.mean_bias_all_contrasts /= static_cast<double>(n_all);
    if (n == 0) return m;
    const double dn = static_cast<double>(n);
    m.mean_bias /= dn;
    m.rmse = std::sqrt(sq / dn);
    m.mae /= dn;
    m.coverage /= dn;
    m.cri_width /= dn;
    m.posterior_variance /= dn;
    m.ess /= dn;
    m.ess_per_second /= dn;
    m.crps /= dn;
    for (const auto& [name, p] : per_param) m.mean_abs_bias += std::abs(p.first / static_cast<double>(p.second));
    m.mean_abs_bias /= static_cast<double>(per_param.size());
    m.replications = per_rep_error.size();
    for (const auto& [rep, t] : per_rep_time) {
        m.runtime += t.first;
        m.iterations_per_second += t.second;
    }
    const double R = static_cast<double>(m.replications);
    m.runtime /= R;
    m.iterations_per_second /= R;
    if (m.replications > 1) {
        std::vector<double> e;
        for (const auto& [rep, v] : per_rep_error) e.push_back(v.first / static_cast<double>(v.second));
        const double mean = std::accumulate(e.begin(), e.end(), 0.0) / R;
        double var = 0;
        for (double v : e) var += (v - mean) * (v - mean);
        m.bias_se = std::sqrt(var / (R - 1) / R);
    }
    return m;
}

std::map<std::string, ParameterMoments> parameter_moments(const std::vector<ParameterRecord>& records,
                                                           const std::string& model) {
    std::map<std::string, std::vector<double>> errors;
    for (const auto& r : records)
        if (r.model == model) errors[r.parameter].push_back(r.mean - r.truth);
    std::map<std::string, ParameterMoments> out;
    for (const auto& [name, e] : errors) {
        ParameterMoments pm;
        const double n = static_cast<double>(e.size());
        for (double v : e) {
            pm.bias += v / n;
            pm.mse += v * v / n;
        }
        for (double v : e) pm.variance += (v - pm.bias) * (v - pm.bias) / n;
        out[name] = pm;
    }
    return out;
}

namespace {

double paired_difference_se(const std::vector<ParameterRecord>& records, const std::string& a, const std::string& b) {
    std::map<int, std::array<double, 2>> sums;
    std::map<int, std::array<std::size_t, 2>> counts;
    for (const auto& r : records) {
        if (!r.basic || (r.model != a && r.model != b)) continue;
        const int i = r.model == a ? 0 : 1;
        sums[r.replication][static_cast<std::size_t>(i)] += r.mean - r.truth;
        ++counts[r.replication][static_cast<std::size_t>(i)];
    }
    std::vector<double> diff;
    for (const auto& [rep, s] : sums) {
        const auto& c = counts[rep];
        if (c[0] == 0 || c[1] == 0) continue;
        diff.push_back(s[0] / static_cast<double>(c[0]) - s[1] / static_cast<double>(c[1]));
    }
    if (diff.size() < 2) return 0;
    const double n = static_cast<double>(diff.size());
    const double mean = std::accumulate(diff.begin(), diff.end(), 0.0) / n;
    double var = 0;
    for (double v : diff) var += (v - mean) * (v - mean);
    return std::sqrt(var / (n - 1) / n);
}

nma::NmaFit fit_once(const PowerDataset& ds, const std::vector<double>& weights, const nma::Priors& priors,
                     inference::McmcConfig mcmc, std::uint64_t seed) {
    mcmc.seed = seed;
    nma::FitOptions options;
    options.priors = priors;
    return nma::fit(ds.data, ds.treatments, weights, options, mcmc);
}

} // namespace

PowerStudyResult run_power_study(const PowerSimConfig& cfg) {
    cfg.validate();
    PowerStudyResult result;
    result.config = cfg;
    for (int rep = 0; rep < cfg.replications; ++rep) {
        try {
            const auto ds = generate_power_dataset(cfg, rep);
            const std::uint64_t seed = mix_seed(cfg.seed, 2 * static_cast<std::uint64_t>(rep) + 1);
            const std::vector<double> ones(ds.data.size(), 1.0);
            auto typical = evaluate_fit(fit_once(ds, ones, cfg.priors, cfg.mcmc, seed), ds.true_d, rep, "typical");
            auto power = evaluate_fit(fit_once(ds, ds.weights, cfg.priors, cfg.mcmc, seed), ds.true_d, rep, "power");
            result.records.insert(result.records.end(), typical.begin(), typical.end());
            result.records.insert(result.records.end(), power.begin(), power.end());
        } catch (const std::exception& e) {
            ++result.failures;
            result.log.push_back(fmt::format("replication {} failed: {}", rep, e.what()));
        }
    }
    for (const char* model : {"typical", "power"}) result.metrics[model] = aggregate(result.records, model, result.failures);
    result.bias_difference_se = paired_difference_se(result.records, "power", "typical");
    return result;
}

std::string EngineCell::label() const { return fmt::format("studies{}_treatments{}_tau{}", studies, treatments, tau); }

std::vector<EngineCell> EngineStudyConfig::cells() const {
    std::vector<EngineCell> out;
    for (int s : studies)
        for (int t : treatments)
            for (double tau : taus) out.push_back({s, t, tau});
    return out;
}

EngineStudyResult run_engine_study(const EngineStudyConfig& cfg) {
    if (cfg.replications < 1) throw ValidationError("engine simulation: replications must be >= 1");
    EngineStudyResult result;
    result.cells = cfg.cells();
    for (std::size_t c = 0; c < result.cells.size(); ++c) {
        const auto& cell = result.cells[c];
        PowerSimConfig sim;
        sim.n_studies = cell.studies;
        sim.n_treatments = cell.treatments;
        sim.tau_true = cell.tau;
        sim.n_poor = 0;
        sim.bias_magnitude = 0;
        sim.patients_per_arm = cfg.patients_per_arm;
        sim.within_sd = cfg.within_sd;
        sim.d_step = cfg.d_step;
        sim.replications = cfg.replications;
        sim.seed = mix_seed(cfg.seed, c);
        sim.mcmc = cfg.mcmc;
        const auto label = cell.label();
        std::size_t failures = 0;
        for (int rep = 0; rep < cfg.replications; ++rep) {
            try {
                const auto ds = generate_power_dataset(sim, rep);
                auto fit = fit_once(ds, ds.weights, cfg.priors, cfg.mcmc, mix_seed(sim.seed, 2 * static_cast<std::uint64_t>(rep) + 1));
                auto recs = evaluate_fit(fit, ds.true_d, rep, label);
                result.records.insert(result.records.end(), recs.begin(), recs.end());
            } catch (const std::exception&) {
                ++failures;
            }
        }
        result.failures[label] = failures;
        result.metrics[label] = aggregate(result.records, label, failures);
    }
    return result;
}

std::string format_records(const std::vector<ParameterRecord>& records) {
    std::string out = "replication,model,parameter,basic,truth,mean,variance,lower,upper,ess,crps,runtime,iterations_per_second\n";
    for (const auto& r : records)
        out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{}\n", r.replication, r.model, r.parameter, r.basic ? 1 : 0,
                           r.truth, r.mean, r.variance, r.lower, r.upper, r.ess, r.crps, r.runtime, r.iterations_per_second);
    return out;
}

std::vector<ParameterRecord> parse_records(const std::string& text) {
    std::vector<ParameterRecord> out;
    std::size_t pos = 0, line_no = 0;
    auto num = [&](const std::string& s) {
        double v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size()) throw ParseError("simulation records: bad number '" + s + "'", line_no);
        return v;
    };
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        if (++line_no == 1 || line.empty()) continue;
        auto f = data_io::split_csv_line(line);
        if (f.size() != 13) throw ParseError("simulation records: expected 13 fields", line_no);
        ParameterRecord r;
        r.replication = static_cast<int>(num(f[0]));
        r.model = f[1];
        r.parameter = f[2];
        r.basic = f[3] == "1";
        r.truth = num(f[4]);
        r.mean = num(f[5]);
        r.variance = num(f[6]);
        r.lower = num(f[7]);
        r.upper = num(f[8]);
        r.ess = num(f[9]);
        r.crps = num(f[10]);
        r.runtime = num(f[11]);
        r.iterations_per_second = num(f[12]);
        out.push_back(std::move(r));
    }
    return out;
}

std::string format_metrics(const std::map<std::string, SimMetrics>& metrics) {
    std::string out = "model,replications,failures,mean_bias,mean_abs_bias,bias_se,mean_bias_all_contrasts,rmse,mae,coverage,"
                      "cri_width,posterior_variance,ess,ess_per_second,runtime,iterations_per_second,crps\n";
    for (const auto& [name, m] : metrics)
        out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", name, m.replications, m.failures, m.mean_bias,
                           m.mean_abs_bias, m.bias_se, m.mean_bias_all_contrasts, m.rmse, m.mae, m.coverage, m.cri_width,
                           m.posterior_variance, m.ess, m.ess_per_second, m.runtime, m.iterations_per_second, m.crps);
    return out;
}

std::string power_figure(const std::vector<std::string>& scenarios, const std::vector<std::map<std::string, SimMetrics>>& results) {
    struct Metric {
        const char* title;
        double SimMetrics::*field;
    };
    const Metric metrics[] = {{"Mean bias", &SimMetrics::mean_bias},
                              {"RMSE", &SimMetrics::rmse},
                              {"95% CrI width", &SimMetrics::cri_width},
                              {"Posterior variance", &SimMetrics::posterior_variance}};
    std::vector<plot::Panel> panels;
    for (const auto& metric : metrics) {
        plot::Panel p;
        p.title = metric.title;
        p.categories = scenarios;
        for (const char* model : {"typical", "power"}) {
            plot::Series s{model, {}};
            for (const auto& r : results) {
                auto it = r.find(model);
                s.values.push_back(it == r.end() ? std::nan("") : it->second.*metric.field);
            }
            p.series.push_back(std::move(s));
        }
        panels.push_back(std::move(p));
    }
    return plot::panels_svg(panels, "Typical versus power-likelihood NMA");
}

} // namespace survnma::simharness
