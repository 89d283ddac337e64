#include "survnma/inference.hpp"

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace survnma::inference {

void McmcConfig::validate() const {
    if (chains < 1) throw ValidationError("mcmc: chains must be >= 1");
    if (warmup < 0) throw ValidationError("mcmc: warmup must be >= 0");
    if (samples < 1) throw ValidationError("mcmc: samples must be > 0");
    if (thin < 1) throw ValidationError("mcmc: thin must be >= 1");
    if (samples < thin) throw ValidationError("mcmc: samples must be >= thin");
    if (target_accept && (*target_accept <= 0 || *target_accept >= 1))
        throw ValidationError("mcmc: target_accept must lie in (0, 1)");
}

PosteriorDraws::PosteriorDraws(std::vector<std::string> names, int chains, int iterations)
    : names_(std::move(names)), chains_(chains), iterations_(iterations),
      values_(static_cast<std::size_t>(chains) * iterations * names_.size(), 0.0) {}

double& PosteriorDraws::at(int chain, int iteration, std::size_t param) {
    return values_[(static_cast<std::size_t>(chain) * iterations_ + iteration) * names_.size() + param];
}

double PosteriorDraws::at(int chain, int iteration, std::size_t param) const {
    return values_[(static_cast<std::size_t>(chain) * iterations_ + iteration) * names_.size() + param];
}

std::size_t PosteriorDraws::index_of(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return static_cast<std::size_t>(it - names_.begin());
}

bool PosteriorDraws::contains(const std::string& name) const {
    return std::find(names_.begin(), names_.end(), name) != names_.end();
}

std::vector<double> PosteriorDraws::pooled(std::size_t param) const {
    std::vector<double> out;
    out.reserve(total_draws());
    for (int c = 0; c < chains_; ++c)
        for (int i = 0; i < iterations_; ++i) out.push_back(at(c, i, param));
    return out;
}

std::vector<double> PosteriorDraws::chain(int c, std::size_t param) const {
    std::vector<double> out(iterations_);
    for (int i = 0; i < iterations_; ++i) out[i] = at(c, i, param);
    return out;
}

std::vector<double> PosteriorDraws::draw(std::size_t d) const {
    auto begin = values_.begin() + static_cast<std::ptrdiff_t>(d * names_.size());
    return {begin, begin + static_cast<std::ptrdiff_t>(names_.size())};
}

double quantile(std::vector<double> values, double p) {
    if (values.empty()) throw std::invalid_argument("quantile of empty sample");
    std::sort(values.begin(), values.end());
    double h = (static_cast<double>(values.size()) - 1.0) * p;
    auto lo = static_cast<std::size_t>(std::floor(h));
    auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

ParameterSummary PosteriorDraws::summary(std::size_t param) const {
    ParameterSummary s;
    s.name = names_[param];
    auto v = pooled(param);
    double n = static_cast<double>(v.size());
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = v.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
    s.q025 = quantile(v, 0.025);
    s.q50 = quantile(v, 0.5);
    s.q975 = quantile(v, 0.975);
    s.rhat = rhat(*this, param);
    s.ess = ess(*this, param);
    return s;
}

std::vector<ParameterSummary> PosteriorDraws::summaries() const {
    std::vector<ParameterSummary> out;
    for (std::size_t p = 0; p < names_.size(); ++p) out.push_back(summary(p));
    return out;
}

namespace {

struct BlockAdapter {
    std::vector<std::size_t> indices;
    LogDensity log_density;
    double target = 0.234;
    double log_scale = std::log(0.1);
    Eigen::MatrixXd chol; // lower Cholesky factor of the unscaled proposal covariance

    // Welford accumulators for the current adaptation window.
    Eigen::VectorXd mean;
    Eigen::MatrixXd m2;
    long count = 0;
    long since_reset = 0;

    long accepted = 0;
    long proposed = 0;
};

struct Replica {
    double beta = 1.0;
    std::vector<double> state;
    std::vector<BlockAdapter> adapters;
    std::vector<double> cached;
    std::vector<char> valid;
};

// Doubling adaptation windows between 15% and 90% of warmup; the final stretch tunes scale only.
std::vector<int> window_ends(int warmup) {
    std::vector<int> ends;
    int start = static_cast<int>(0.15 * warmup);
    int stop = static_cast<int>(0.9 * warmup);
    int len = 25;
    int pos = start;
    while (pos + len <= stop) {
        int next = pos + len;
        if (next + 2 * len > stop) next = stop;
        ends.push_back(next);
        pos = next;
        len *= 2;
    }
    return ends;
}

double evaluate(const LogDensity& f, std::span<const double> x) {
    double v = f(x);
    return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
}

} // namespace

PosteriorDraws sample(const Model& model, const McmcConfig& config) {
    config.validate();
    const std::size_t dim = model.init.size();
    if (dim == 0) throw std::invalid_argument("sample: model has no parameters");
    if (!model.log_density && model.blocks.empty())
        throw std::invalid_argument("sample: model needs a log density or blocks");
    if (model.replicas < 1) throw std::invalid_argument("sample: replicas must be >= 1");
    const bool tempered = model.replicas > 1;
    if (tempered) {
        if (!model.log_density) throw std::invalid_argument("sample: tempering needs the full log density");
        if (!(model.max_temperature > 1.0)) throw std::invalid_argument("sample: max_temperature must exceed 1");
        for (const auto& b : model.blocks)
            if (std::holds_alternative<GibbsBlock>(b))
                throw std::invalid_argument("sample: tempering supports Metropolis blocks only");
    }

    const bool transformed = static_cast<bool>(model.transform);
    const auto& out_names = transformed ? model.output_names : model.names;
    const int kept = config.samples / config.thin;
    PosteriorDraws draws(out_names, config.chains, kept);
    draws.acceptance_rates.assign(config.chains, 1.0);

    std::vector<Block> blocks = model.blocks;
    if (blocks.empty()) {
        MetropolisBlock all;
        all.indices.resize(dim);
        std::iota(all.indices.begin(), all.indices.end(), 0);
        blocks.emplace_back(std::move(all));
    }
    const auto windows = window_ends(config.warmup);
    const int window_start = static_cast<int>(0.15 * config.warmup);

    std::vector<double> betas(static_cast<std::size_t>(model.replicas), 1.0);
    for (int r = 1; r < model.replicas; ++r)
        betas[r] = std::pow(model.max_temperature, -static_cast<double>(r) / (model.replicas - 1));

    auto started = std::chrono::steady_clock::now();
    std::vector<double> out(out_names.size());

    for (int c = 0; c < config.chains; ++c) {
        Rng rng = make_rng(config.seed, static_cast<std::uint64_t>(c));
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        std::normal_distribution<double> stdnorm(0.0, 1.0);

        std::vector<Replica> reps(betas.size());
        for (std::size_t r = 0; r < reps.size(); ++r) {
            auto& rep = reps[r];
            rep.beta = betas[r];
            // Initial point: prior means plus uniform jitter, retried until the target is finite.
            rep.state.resize(dim);
            bool found = false;
            for (int attempt = 0; attempt < 200 && !found; ++attempt) {
                for (std::size_t i = 0; i < dim; ++i)
                    rep.state[i] = model.init[i] + (attempt == 199 ? 0.0 : model.jitter * (2.0 * unif(rng) - 1.0));
                found = !model.log_density || std::isfinite(evaluate(model.log_density, rep.state));
            }
            if (!found)
                throw std::runtime_error(
                    fmt::format("sample: log density is not finite at any initial point (chain {})", c));
            for (const auto& b : blocks) {
                if (const auto* mb = std::get_if<MetropolisBlock>(&b)) {
                    BlockAdapter a;
                    a.indices = mb->indices;
                    a.log_density = mb->log_density ? mb->log_density : model.log_density;
                    const auto k = static_cast<Eigen::Index>(a.indices.size());
                    a.target = config.target_accept.value_or(k == 1 ? 0.44 : 0.234);
                    a.chol = Eigen::MatrixXd::Identity(k, k);
                    a.mean = Eigen::VectorXd::Zero(k);
                    a.m2 = Eigen::MatrixXd::Zero(k, k);
                    rep.adapters.push_back(std::move(a));
                }
            }
            rep.cached.assign(rep.adapters.size(), 0.0);
            rep.valid.assign(rep.adapters.size(), 0);
        }

        std::vector<double> proposal(dim);
        // Cached block log densities; invalidated whenever another update touches the state.
        auto invalidate = [](Replica& rep, std::size_t except) {
            for (std::size_t i = 0; i < rep.valid.size(); ++i)
                if (i != except) rep.valid[i] = 0;
        };

        auto sweep = [&](Replica& rep, bool warm) {
            std::size_t adapter_index = 0;
            for (const auto& b : blocks) {
                if (const auto* gb = std::get_if<GibbsBlock>(&b)) {
                    gb->update(rep.state, rng);
                    invalidate(rep, rep.adapters.size());
                    continue;
                }
                const std::size_t self = adapter_index++;
                auto& a = rep.adapters[self];
                const auto k = static_cast<Eigen::Index>(a.indices.size());
                if (!rep.valid[self]) {
                    rep.cached[self] = evaluate(a.log_density, rep.state);
                    rep.valid[self] = 1;
                }
                double current = rep.cached[self];
                Eigen::VectorXd z(k);
                for (Eigen::Index i = 0; i < k; ++i) z[i] = stdnorm(rng);
                Eigen::VectorXd step = std::exp(a.log_scale) * (a.chol * z);
                proposal = rep.state;
                for (Eigen::Index i = 0; i < k; ++i) proposal[a.indices[i]] += step[i];
                double candidate = evaluate(a.log_density, proposal);
                double log_ratio = rep.beta * (candidate - current);
                double accept_prob = std::isfinite(candidate) ? std::min(1.0, std::exp(log_ratio)) : 0.0;
                if (!std::isfinite(current) && std::isfinite(candidate)) accept_prob = 1.0;
                bool accept = unif(rng) < accept_prob;
                if (accept) {
                    rep.state.swap(proposal);
                    rep.cached[self] = candidate;
                    invalidate(rep, self);
                }
                if (!warm) {
                    ++a.proposed;
                    a.accepted += accept ? 1 : 0;
                } else {
                    ++a.since_reset;
                    a.log_scale += (accept_prob - a.target) / std::pow(static_cast<double>(a.since_reset) + 1.0, 0.6);
                    a.log_scale = std::clamp(a.log_scale, -30.0, 10.0);
                }
            }
            if (model.post_sweep) {
                model.post_sweep(rep.state);
                invalidate(rep, rep.adapters.size());
            }
        };

        // Accumulate window statistics and refresh proposal covariances at window ends.
        auto adapt = [&](Replica& rep, bool window_end) {
            for (auto& a : rep.adapters) {
                const auto k = static_cast<Eigen::Index>(a.indices.size());
                Eigen::VectorXd x(k);
                for (Eigen::Index i = 0; i < k; ++i) x[i] = rep.state[a.indices[i]];
                ++a.count;
                Eigen::VectorXd delta = x - a.mean;
                a.mean += delta / static_cast<double>(a.count);
                a.m2 += delta * (x - a.mean).transpose();
                if (!window_end) continue;
                if (a.count > 2) {
                    double n = static_cast<double>(a.count);
                    Eigen::MatrixXd cov = a.m2 / (n - 1.0);
                    // Shrink towards a small diagonal so the factorisation exists.
                    cov = (n / (n + 5.0)) * cov + 1e-3 * (5.0 / (n + 5.0)) * Eigen::MatrixXd::Identity(k, k);
                    Eigen::LLT<Eigen::MatrixXd> llt(cov);
                    if (llt.info() == Eigen::Success && cov.allFinite()) {
                        a.chol = llt.matrixL();
                        a.log_scale = std::log(2.38 / std::sqrt(static_cast<double>(k)));
                        a.since_reset = 0;
                    }
                }
                a.count = 0;
                a.mean.setZero();
                a.m2.setZero();
            }
        };

        // One exchange attempt between a random adjacent pair of the ladder.
        auto exchange = [&]() {
            auto r = static_cast<std::size_t>(unif(rng) * static_cast<double>(reps.size() - 1));
            r = std::min(r, reps.size() - 2);
            auto& hot = reps[r + 1];
            auto& cold = reps[r];
            double lc = evaluate(model.log_density, cold.state);
            double lh = evaluate(model.log_density, hot.state);
            if (!std::isfinite(lh)) return;
            double log_ratio = (cold.beta - hot.beta) * (lh - lc);
            if (!std::isfinite(lc) || std::log(unif(rng)) < log_ratio) {
                cold.state.swap(hot.state);
                invalidate(cold, cold.adapters.size());
                invalidate(hot, hot.adapters.size());
            }
        };

        const int total = config.warmup + config.samples;
        std::size_t next_window = 0;
        int kept_index = 0;
        for (int it = 0; it < total; ++it) {
            const bool warm = it < config.warmup;
            for (auto& rep : reps) sweep(rep, warm);
            if (tempered) exchange();

            if (warm) {
                if (it >= window_start && next_window < windows.size()) {
                    bool window_end = it + 1 == windows[next_window];
                    for (auto& rep : reps) adapt(rep, window_end);
                    if (window_end) ++next_window;
                }
                continue;
            }

            int sampling_index = it - config.warmup;
            if (sampling_index % config.thin != 0 || kept_index >= kept) continue;
            const auto& state = reps.front().state;
            if (transformed) {
                model.transform(state, out);
            } else {
                out = state;
            }
            for (std::size_t p = 0; p < out.size(); ++p) {
                if (!std::isfinite(out[p]))
                    throw std::runtime_error(fmt::format("sample: non-finite recorded value for '{}'", out_names[p]));
                draws.at(c, kept_index, p) = out[p];
            }
            ++kept_index;
        }

        long acc = 0, prop = 0;
        for (const auto& a : reps.front().adapters) {
            acc += a.accepted;
            prop += a.proposed;
        }
        draws.acceptance_rates[c] = prop > 0 ? static_cast<double>(acc) / static_cast<double>(prop) : 1.0;
    }

    draws.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    double iterations = static_cast<double>(config.chains) * (config.warmup + config.samples);
    draws.iterations_per_second = iterations / std::max(draws.runtime_seconds, 1e-9);
    return draws;
}

PosteriorDraws sample(LogDensity target, std::vector<double> init, std::vector<std::string> names,
                      const McmcConfig& config) {
    Model model;
    model.names = std::move(names);
    model.init = std::move(init);
    model.log_density = std::move(target);
    return sample(model, config);
}

namespace {

std::vector<std::vector<double>> split_chains(const std::vector<std::vector<double>>& chains) {
    std::vector<std::vector<double>> out;
    for (const auto& c : chains) {
        std::size_t half = c.size() / 2;
        if (half == 0) continue;
        out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
        out.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
    }
    return out;
}

bool is_constant(const std::vector<std::vector<double>>& chains) {
    std::optional<double> first;
    for (const auto& c : chains)
        for (double v : c) {
            if (!first) first = v;
            else if (v != *first) return false;
        }
    return true;
}

double classic_rhat(const std::vector<std::vector<double>>& chains) {
    const double m = static_cast<double>(chains.size());
    const double n = static_cast<double>(chains.front().size());
    std::vector<double> means, vars;
    for (const auto& c : chains) {
        double mu = std::accumulate(c.begin(), c.end(), 0.0) / n;
        double ss = 0;
        for (double v : c) ss += (v - mu) * (v - mu);
        means.push_back(mu);
        vars.push_back(ss / (n - 1.0));
    }
    double w = std::accumulate(vars.begin(), vars.end(), 0.0) / m;
    double grand = std::accumulate(means.begin(), means.end(), 0.0) / m;
    double b = 0;
    for (double mu : means) b += (mu - grand) * (mu - grand);
    b = m > 1 ? b / (m - 1.0) : 0.0; // B/n
    if (w <= 0) return b > 0 ? std::numeric_limits<double>::infinity() : 1.0;
    double var_plus = (n - 1.0) / n * w + b;
    return std::sqrt(var_plus / w);
}

std::vector<std::vector<double>> rank_normalize(const std::vector<std::vector<double>>& chains) {
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t c = 0; c < chains.size(); ++c)
        for (std::size_t i = 0; i < chains[c].size(); ++i) all.emplace_back(chains[c][i], c * chains[0].size() + i);
    std::sort(all.begin(), all.end());
    const double total = static_cast<double>(all.size());
    std::vector<double> ranks(all.size());
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        while (j < all.size() && all[j].first == all[i].first) ++j;
        double avg = 0.5 * static_cast<double>(i + 1 + j); // average 1-based rank of ties
        for (std::size_t k = i; k < j; ++k) ranks[all[k].second] = avg;
        i = j;
    }
    boost::math::normal_distribution<double> norm;
    auto out = chains;
    for (std::size_t c = 0; c < chains.size(); ++c)
        for (std::size_t i = 0; i < chains[c].size(); ++i) {
            double r = ranks[c * chains[0].size() + i];
            out[c][i] = boost::math::quantile(norm, (r - 0.375) / (total + 0.25));
        }
    return out;
}

} // namespace

std::optional<double> rhat(const std::vector<std::vector<double>>& chains) {
    if (chains.empty() || is_constant(chains)) return std::nullopt;
    auto split = split_chains(chains);
    if (split.size() < 2 || split.front().size() < 2) return std::nullopt;
    double bulk = classic_rhat(rank_normalize(split));
    std::vector<double> pooled;
    for (const auto& c : split) pooled.insert(pooled.end(), c.begin(), c.end());
    double median = quantile(pooled, 0.5);
    auto folded = split;
    for (auto& c : folded)
        for (double& v : c) v = std::abs(v - median);
    double tail = is_constant(folded) ? 1.0 : classic_rhat(rank_normalize(folded));
    return std::max(bulk, tail);
}

std::optional<double> rhat(const PosteriorDraws& draws, std::size_t param) {
    std::vector<std::vector<double>> chains;
    for (int c = 0; c < draws.chains(); ++c) chains.push_back(draws.chain(c, param));
    return rhat(chains);
}

std::optional<double> ess(const std::vector<std::vector<double>>& input) {
    if (input.empty() || is_constant(input)) return std::nullopt;
    auto chains = split_chains(input);
    if (chains.empty() || chains.front().size() < 2) return std::nullopt;
    const std::size_t m = chains.size();
    const std::size_t n = chains.front().size();
    const double nd = static_cast<double>(n);

    std::vector<double> means(m), var0(m);
    for (std::size_t c = 0; c < m; ++c) {
        means[c] = std::accumulate(chains[c].begin(), chains[c].end(), 0.0) / nd;
        double ss = 0;
        for (double v : chains[c]) ss += (v - means[c]) * (v - means[c]);
        var0[c] = ss / nd;
    }
    // Mean over chains of the (biased) lag-t autocovariance.
    auto mean_acov = [&](std::size_t lag) {
        double total = 0;
        for (std::size_t c = 0; c < m; ++c) {
            double s = 0;
            for (std::size_t i = 0; i + lag < n; ++i) s += (chains[c][i] - means[c]) * (chains[c][i + lag] - means[c]);
            total += s / nd;
        }
        return total / static_cast<double>(m);
    };

    double mean_var = 0;
    for (double v : var0) mean_var += v * nd / (nd - 1.0);
    mean_var /= static_cast<double>(m);
    double var_plus = mean_var * (nd - 1.0) / nd;
    if (m > 1) {
        double grand = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(m);
        double b = 0;
        for (double mu : means) b += (mu - grand) * (mu - grand);
        var_plus += b / static_cast<double>(m - 1);
    }
    if (var_plus <= 0) return std::nullopt;

    std::vector<double> rho(n + 1, 0.0);
    rho[0] = 1.0;
    double rho_even = 1.0;
    double rho_odd = n > 1 ? 1.0 - (mean_var - mean_acov(1)) / var_plus : 0.0;
    if (n > 1) rho[1] = rho_odd;
    std::size_t t = 1;
    while (t + 5 < n && rho_even + rho_odd > 0) {
        rho_even = 1.0 - (mean_var - mean_acov(t + 1)) / var_plus;
        rho_odd = 1.0 - (mean_var - mean_acov(t + 2)) / var_plus;
        if (rho_even + rho_odd >= 0) {
            rho[t + 1] = rho_even;
            rho[t + 2] = rho_odd;
        }
        t += 2;
    }
    std::size_t max_t = t;
    if (rho_even > 0 && max_t + 1 <= n) rho[max_t + 1] = rho_even;

    // Initial monotone sequence.
    for (std::size_t s = 1; s + 2 <= max_t; s += 2) {
        if (rho[s + 1] + rho[s + 2] > rho[s - 1] + rho[s]) {
            rho[s + 1] = (rho[s - 1] + rho[s]) / 2.0;
            rho[s + 2] = rho[s + 1];
        }
    }
    const double total = static_cast<double>(m) * nd;
    double tau = -1.0;
    for (std::size_t s = 0; s <= max_t && s <= n; ++s) tau += 2.0 * rho[s];
    if (max_t + 1 <= n) tau += rho[max_t + 1];
    tau = std::max(tau, 1.0 / std::log10(std::max(total, 10.0)));
    return total / tau;
}

std::optional<double> ess(const PosteriorDraws& draws, std::size_t param) {
    std::vector<std::vector<double>> chains;
    for (int c = 0; c < draws.chains(); ++c) chains.push_back(draws.chain(c, param));
    return ess(chains);
}

double max_rhat(const PosteriorDraws& draws) {
    double worst = 1.0;
    for (std::size_t p = 0; p < draws.parameters(); ++p)
        if (auto r = rhat(draws, p)) worst = std::max(worst, *r);
    return worst;
}

NormalPosterior conjugate_normal_check(double prior_mean, double prior_var, std::span<const double> obs_means,
                                       std::span<const double> obs_vars) {
    if (obs_means.size() != obs_vars.size()) throw std::invalid_argument("conjugate_normal_check: size mismatch");
    if (!(prior_var > 0)) throw std::invalid_argument("conjugate_normal_check: prior variance must be > 0");
    double precision = std::isinf(prior_var) ? 0.0 : 1.0 / prior_var;
    double weighted = precision * prior_mean;
    for (std::size_t i = 0; i < obs_means.size(); ++i) {
        if (!(obs_vars[i] > 0)) throw std::invalid_argument("conjugate_normal_check: variances must be > 0");
        precision += 1.0 / obs_vars[i];
        weighted += obs_means[i] / obs_vars[i];
    }
    if (precision <= 0) throw std::invalid_argument("conjugate_normal_check: improper posterior");
    return {weighted / precision, 1.0 / precision};
}

} // namespace survnma::inference
