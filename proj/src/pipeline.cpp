#include "survnma/pipeline.hpp"

#include "survnma/decision.hpp"
#include "survnma/mortality.hpp"
#include "survnma/mst.hpp"
#include "survnma/survfit.hpp"

#include <fmt/format.h>
#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

namespace survnma::pipeline {

using nlohmann::ordered_json;

std::string sha256(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256: digest failed");
    std::string out;
    for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", digest[i]);
    return out;
}

std::string sha256_file(const fs::path& path) { return sha256(data_io::read_file(path)); }

std::uint64_t stream_id(const std::string& name) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

std::string safe(const std::string& s) {
    std::string out;
    for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
    return out;
}

const std::set<std::string> kPolyModels{"bi-weibull", "bi-loglogistic", "tri-loglogistic"};

void check_model(const std::string& model) {
    if (!kPolyModels.count(model) && model != "mspline")
        throw ValidationError(fmt::format("unknown model '{}' (bi-weibull, bi-loglogistic, tri-loglogistic, mspline)", model));
}

std::string curve_csv(const mst::SurvivalCurve& c, const std::vector<double>& lower, const std::vector<double>& upper) {
    std::string out = "time,survival,lower,upper\n";
    for (std::size_t i = 0; i < c.times.size(); ++i)
        out += fmt::format("{},{},{},{}\n", c.times[i], c.values[i], lower[i], upper[i]);
    return out;
}

mst::SurvivalCurve read_curve(const fs::path& path) {
    const auto text = data_io::read_file(path);
    mst::SurvivalCurve c;
    std::size_t pos = text.find('\n') + 1;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        auto f = data_io::split_csv_line(text.substr(pos, end - pos));
        pos = end + 1;
        if (f.size() < 2) continue;
        c.times.push_back(std::stod(f[0]));
        c.values.push_back(std::stod(f[1]));
    }
    c.epsilon = 0.0;
    c.validate();
    return c;
}

std::vector<survmodels::Observation> read_observations(const fs::path& path) {
    const auto text = data_io::read_file(path);
    std::vector<survmodels::Observation> out;
    std::size_t pos = text.find('\n') + 1;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        auto f = data_io::split_csv_line(text.substr(pos, end - pos));
        pos = end + 1;
        if (f.size() != 2) continue;
        out.push_back({std::stod(f[0]), f[1] == "1"});
    }
    return out;
}

double min_age(const data_io::StudyMeta& meta) {
    int a = mortality::kClosingAge;
    for (const auto& [age, w] : meta.age_distribution)
        if (w > 0) a = std::min(a, age);
    return a;
}

} // namespace

Pipeline::Pipeline(data_io::RunConfig config, Options options)
    : config_(std::move(config)), options_(std::move(options)) {
    models_ = options_.models.empty() ? std::vector<std::string>{config_.model} : options_.models;
    for (const auto& m : models_) check_model(m);
    if (config_.treatments.size() < 2) throw ValidationError("config: at least two treatments are required");
    if (config_.study_order.empty()) throw ValidationError("config: no studies declared");
    snapshot_ = data_io::format_run_config(config_);
    const auto manifest_path = options_.out / "manifest.json";
    if (!options_.force && fs::exists(manifest_path)) {
        try {
            manifest_ = ordered_json::parse(data_io::read_file(manifest_path));
        } catch (const std::exception&) {
            manifest_ = ordered_json::object();
        }
    }
    if (!manifest_.is_object()) manifest_ = ordered_json::object();
    if (!manifest_.contains("stages")) manifest_["stages"] = ordered_json::object();
}

void Pipeline::log(const std::string& message) const {
    if (options_.log) options_.log(message);
}

void Pipeline::save_manifest() {
    manifest_["tool"] = "survnma";
    manifest_["version"] = "1.0.0";
    manifest_["seed"] = config_.seed;
    manifest_["config_sha256"] = sha256(snapshot_);
    data_io::write_file(options_.out / "config.snapshot.yaml", snapshot_);
    data_io::write_file(options_.out / "manifest.json", manifest_.dump(2) + "\n");
}

StageReport Pipeline::stage(const std::string& id, const std::vector<std::string>& inputs,
                            const std::function<StageReport()>& body) {
    std::string key_material = id + "\n" + snapshot_;
    for (const auto& in : inputs) {
        const fs::path p = fs::path(in).is_absolute() ? fs::path(in) : options_.out / in;
        if (!fs::exists(p))
            throw ValidationError(fmt::format("stage {}: missing input '{}' (run the preceding stage first)", id, p.string()));
        key_material += "\n" + in + "=" + sha256_file(p);
    }
    const std::string key = sha256(key_material);

    auto& stages = manifest_["stages"];
    if (!options_.force && stages.contains(id) && stages[id]["key"] == key) {
        bool intact = true;
        for (const auto& [file, hash] : stages[id]["outputs"].items()) {
            const auto p = options_.out / file;
            if (!fs::exists(p) || sha256_file(p) != hash.get<std::string>()) {
                intact = false;
                break;
            }
        }
        if (intact) {
            log(fmt::format("[{}] unchanged, skipped", id));
            StageReport r;
            r.id = id;
            r.skipped = true;
            for (const auto& [file, hash] : stages[id]["outputs"].items()) r.outputs.push_back(file);
            for (const auto& w : stages[id]["warnings"]) r.warnings.push_back(w.get<std::string>());
            r.convergence_warning = stages[id].value("convergence_warning", false);
            return r;
        }
    }

    log(fmt::format("[{}] running", id));
    const auto started = std::chrono::steady_clock::now();
    StageReport r = body();
    r.id = id;
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    ordered_json entry;
    entry["key"] = key;
    entry["outputs"] = ordered_json::object();
    for (const auto& file : r.outputs) entry["outputs"][file] = sha256_file(options_.out / file);
    entry["warnings"] = r.warnings;
    entry["convergence_warning"] = r.convergence_warning;
    stages[id] = entry;
    save_manifest();

    // Timing lives outside the hashed outputs.
    ordered_json timing = ordered_json::object();
    const auto timing_path = options_.out / "timing.json";
    if (fs::exists(timing_path)) {
        try {
            timing = ordered_json::parse(data_io::read_file(timing_path));
        } catch (const std::exception&) {
        }
    }
    timing[id] = seconds;
    data_io::write_file(timing_path, timing.dump(2) + "\n");
    for (const auto& w : r.warnings) log(fmt::format("[{}] warning: {}", id, w));
    return r;
}

// ---- 1. mortality projection and external populations -----------------------------

StageReport Pipeline::project_mortality() {
    const fs::path mortality_file = config_.resolve(config_.mortality);
    if (config_.mortality.empty()) throw ValidationError("config: 'mortality' file not set");
    return stage("project-mortality", {fs::absolute(mortality_file).string()}, [&] {
        StageReport report;
        std::vector<std::string> parse_warnings;
        auto tables = data_io::parse_mortality(mortality_file, {config_.lenient, &parse_warnings});
        report.warnings = parse_warnings;
        const auto& opts = config_.mortality_options;
        const int Y = opts.projection_start_year;

        // Every (country, sex) with a nonzero-weight cell, plus the youngest age it is needed for.
        std::map<data_io::MortalityKey, int> needed;
        std::set<mortality::CellKey> cells;
        for (const auto& id : config_.study_order) {
            for (const auto& c : mortality::required_cells(config_.studies.at(id))) {
                cells.insert(c);
                auto key = data_io::MortalityKey{std::get<0>(c), std::get<1>(c)};
                auto [it, inserted] = needed.try_emplace(key, std::get<2>(c));
                if (!inserted) it->second = std::min(it->second, std::get<2>(c));
            }
        }
        std::vector<std::string> missing;
        for (const auto& [key, age] : needed)
            if (!tables.count(key)) missing.push_back(fmt::format("{}/{}", key.first, data_io::to_string(key.second)));
        if (!missing.empty()) {
            std::string list;
            for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
            throw ReferenceError(fmt::format("mortality file has no table for {}", list));
        }

        mortality::CohortCurves curves;
        for (const auto& [key, youngest] : needed) {
            const auto& table = tables.at(key);
            const std::string tag = fmt::format("{}_{}", safe(key.first), data_io::to_string(key.second));
            auto mcmc = opts.mcmc;
            mcmc.seed = mix_seed(config_.seed, stream_id("lee-carter/" + tag));
            auto fit = mortality::fit_lee_carter(table, mcmc);
            if (!fit.converged) {
                report.convergence_warning = true;
                report.warnings.push_back(fmt::format("Lee-Carter {}: max R-hat {:.3f} > 1.05", tag, fit.max_rhat));
            }
            if (Y < table.first_year)
                throw ValidationError(fmt::format("projection start year {} precedes the {} table ({})", Y, tag, table.first_year));
            const int last_needed = Y + (mortality::kClosingAge - youngest) - 1;
            const int horizon = std::max(0, last_needed - table.last_year());
            auto projection = mortality::MortalityProjection::from_lee_carter(
                fit, horizon, mix_seed(config_.seed, stream_id("projection/" + tag)), static_cast<std::size_t>(opts.max_draws));

            ordered_json diag;
            diag["country"] = key.first;
            diag["sex"] = data_io::to_string(key.second);
            diag["years"] = {table.first_year, table.last_year()};
            diag["projected_to"] = projection.last_year();
            diag["max_rhat"] = fit.max_rhat;
            diag["converged"] = fit.converged;
            double drift = 0;
            for (std::size_t i = 0; i < fit.size(); ++i) drift += fit.drift(i) / static_cast<double>(fit.size());
            diag["drift_mean"] = drift;
            diag["old_ages"] = fmt::format("ages above {} reuse the age-{} rate; cohorts close at age {}",
                                           mortality::kLastTabulatedAge, mortality::kLastTabulatedAge,
                                           mortality::kClosingAge);
            diag["synthetic_times"] = opts.projection_draws > 0
                                          ? fmt::format("spread over {} projection draws", opts.projection_draws)
                                          : std::string("posterior-mean curve");
            const auto rel = fmt::format("mortality/lee_carter_{}.json", tag);
            data_io::write_file(options_.out / rel, diag.dump(2) + "\n");
            report.outputs.push_back(rel);

            for (const auto& c : cells) {
                if (std::get<0>(c) != key.first || std::get<1>(c) != key.second) continue;
                const int age = std::get<2>(c);
                const int h = std::max(1, mortality::kClosingAge - age);
                curves[c] = mortality::cohort_survival(projection, age, Y, h);
            }
        }

        for (const auto& id : config_.study_order) {
            const auto& meta = config_.studies.at(id);
            auto ext = mortality::synthesize_external(curves, meta);
            std::vector<survmodels::Observation> synthetic;
            const auto n = static_cast<std::size_t>(opts.synthetic_n);
            const std::uint64_t seed = mix_seed(config_.seed, stream_id("synthetic/" + id));
            if (opts.projection_draws <= 0) {
                synthetic = mortality::sample_synthetic_times(ext.curve, n, seed, &report.warnings);
            } else {
                // Spread the sample over evenly spaced projection draws.
                const auto draws = static_cast<std::size_t>(ext.draws.rows());
                const auto used = std::min<std::size_t>(static_cast<std::size_t>(opts.projection_draws), draws);
                for (std::size_t d = 0; d < used; ++d) {
                    mst::SurvivalCurve c = ext.curve;
                    const auto row = static_cast<Eigen::Index>(d * draws / used);
                    for (std::size_t t = 1; t < c.values.size(); ++t)
                        c.values[t] = std::clamp(std::min(ext.draws(row, static_cast<Eigen::Index>(t)), c.values[t - 1]), 0.0, 1.0);
                    const std::size_t share = n / used + (d < n % used ? 1 : 0);
                    if (share == 0) continue;
                    auto part = mortality::sample_synthetic_times(c, share, mix_seed(seed, d), d == 0 ? &report.warnings : nullptr);
                    synthetic.insert(synthetic.end(), part.begin(), part.end());
                }
            }
            const auto curve_rel = fmt::format("mortality/external_{}.csv", safe(id));
            data_io::write_file(options_.out / curve_rel, curve_csv(ext.curve, ext.lower, ext.upper));
            std::string syn = "time,event\n";
            for (const auto& o : synthetic) syn += fmt::format("{},{}\n", o.time, o.event ? 1 : 0);
            const auto syn_rel = fmt::format("mortality/synthetic_{}.csv", safe(id));
            data_io::write_file(options_.out / syn_rel, syn);
            report.outputs.push_back(curve_rel);
            report.outputs.push_back(syn_rel);
        }
        return report;
    });
}

// ---- 2. survival fits and MST draws --------------------------------------------------

StageReport Pipeline::fit_survival(const std::string& model) {
    check_model(model);
    if (config_.ipd.empty()) throw ValidationError("config: 'ipd' file not set");
    const fs::path ipd_file = config_.resolve(config_.ipd);
    std::vector<std::string> inputs{fs::absolute(ipd_file).string()};
    for (const auto& id : config_.study_order) {
        inputs.push_back(fmt::format("mortality/external_{}.csv", safe(id)));
        inputs.push_back(fmt::format("mortality/synthetic_{}.csv", safe(id)));
    }
    return stage("fit-survival/" + model, inputs, [&, model] {
        StageReport report;
        std::vector<std::string> parse_warnings;
        auto ipd = data_io::parse_ipd(ipd_file, &config_.studies, {config_.lenient, &parse_warnings});
        report.warnings = parse_warnings;
        const auto dir = fs::path("survival") / model;
        std::string mst_csv = "study,arm,treatment,draw,mst\n";
        std::string curves_csv = "study,treatment,time,survival\n";
        std::string diag_csv = "study,treatment,events,n,max_rhat,heavy_tail_draws\n";
        const survmodels::Coupling coupling{config_.proportional_first, config_.shared_third};

        for (const auto& id : config_.study_order) {
            const auto& meta = config_.studies.at(id);
            const auto external = read_curve(options_.out / fmt::format("mortality/external_{}.csv", safe(id)));
            const auto population = read_observations(options_.out / fmt::format("mortality/synthetic_{}.csv", safe(id)));
            const double cap = config_.extrapolation.hard_cap.value_or(mortality::kClosingAge - min_age(meta));
            const mst::ExtrapolationOptions ex{config_.extrapolation.step, config_.extrapolation.epsilon, cap};

            for (std::size_t k = 0; k < meta.arms.size(); ++k) {
                const auto& arm = meta.arms[k];
                std::vector<survmodels::Observation> disease;
                std::vector<double> event_times;
                double follow_up = 0;
                for (const auto& r : ipd)
                    if (r.study == id && r.arm == arm) {
                        disease.push_back({r.time, r.event});
                        if (r.event) event_times.push_back(r.time);
                        follow_up = std::max(follow_up, r.time);
                    }
                if (disease.empty()) throw ValidationError(fmt::format("study {} arm {}: no IPD rows", id, arm));

                auto mcmc = config_.mcmc;
                mcmc.seed = mix_seed(config_.seed, stream_id(fmt::format("survival/{}/{}/{}", model, id, arm)));
                std::function<double(std::size_t, double)> survival;
                std::size_t total = 0;
                double rhat = 1.0;
                std::optional<survfit::PolyHazardFit> poly;
                std::optional<survfit::MSplineFit> spline;
                if (model == "mspline") {
                    const int interior = std::clamp(static_cast<int>(event_times.size()) / 20, 1, 5);
                    survmodels::MSplineBasis basis(survmodels::default_knots(event_times, follow_up, interior), 3);
                    auto bg = survmodels::PiecewiseConstantHazard::from_survival(external.times, external.values);
                    spline = survfit::fit_mspline(disease, basis, bg, mcmc);
                    total = spline->draws.total_draws();
                    rhat = inference::max_rhat(spline->draws);
                    survival = [&spline](std::size_t i, double t) { return spline->model(i).survival(t); };
                } else {
                    auto layout = survmodels::PolyHazardLayout::from_model_name(model, coupling);
                    poly = survfit::fit_poly_hazard(layout, disease, population, mcmc, config_.allow_unanchored);
                    total = poly->draws.total_draws();
                    rhat = inference::max_rhat(poly->draws);
                    survival = [&poly](std::size_t i, double t) {
                        return poly->model(i).survival(survmodels::Group::disease, t);
                    };
                }
                if (rhat > 1.05) {
                    report.convergence_warning = true;
                    report.warnings.push_back(fmt::format("{} {} {}: max R-hat {:.3f} > 1.05", model, id, arm, rhat));
                }

                const auto n_mst = std::min<std::size_t>(static_cast<std::size_t>(config_.extrapolation.mst_draws), total);
                std::size_t heavy = 0;
                std::vector<double> mean_curve;
                for (std::size_t d = 0; d < n_mst; ++d) {
                    const std::size_t i = d * total / n_mst;
                    auto curve = mst::extrapolate([&](double t) { return survival(i, t); }, ex);
                    if (curve.heavy_tail) ++heavy;
                    mst_csv += fmt::format("{},{},{},{},{}\n", id, k + 1, arm, d + 1, mst::mst(curve));
                    const auto years = static_cast<std::size_t>(std::ceil(cap));
                    if (mean_curve.empty()) mean_curve.assign(years + 1, 0.0);
                    for (std::size_t y = 0; y <= years; ++y)
                        mean_curve[y] += curve.at(static_cast<double>(y)) / static_cast<double>(n_mst);
                }
                for (std::size_t y = 0; y < mean_curve.size(); ++y)
                    curves_csv += fmt::format("{},{},{},{}\n", id, arm, y, mean_curve[y]);
                diag_csv += fmt::format("{},{},{},{},{},{}\n", id, arm, event_times.size(), disease.size(), rhat, heavy);
                if (heavy > 0)
                    report.warnings.push_back(fmt::format("{} {} {}: {} of {} extrapolated curves hit the {}-year cap with S >= 0.01",
                                                          model, id, arm, heavy, n_mst, cap));
            }
        }
        for (const auto& [name, content] : {std::pair<std::string, std::string>{"mst_draws.csv", mst_csv},
                                            {"curves.csv", curves_csv}, {"diagnostics.csv", diag_csv}}) {
            data_io::write_file(options_.out / dir / name, content);
            report.outputs.push_back((dir / name).generic_string());
        }
        return report;
    });
}

// ---- 3. contrasts ---------------------------------------------------------------------

StageReport Pipeline::extract_contrasts(const std::string& model) {
    const auto in = (fs::path("survival") / model / "mst_draws.csv").generic_string();
    return stage("extract-contrasts/" + model, {in}, [&, model, in] {
        StageReport report;
        const auto text = data_io::read_file(options_.out / in);
        // study -> arm index -> (treatment, draws)
        std::map<std::string, std::map<int, std::pair<std::string, std::vector<double>>>> arms;
        std::size_t pos = text.find('\n') + 1;
        std::size_t line = 1;
        while (pos < text.size()) {
            auto end = text.find('\n', pos);
            if (end == std::string::npos) end = text.size();
            auto f = data_io::split_csv_line(text.substr(pos, end - pos));
            pos = end + 1;
            ++line;
            if (f.size() != 5) throw ParseError("mst_draws: expected 5 fields", line);
            auto& slot = arms[f[0]][std::stoi(f[1])];
            slot.first = f[2];
            slot.second.push_back(std::stod(f[4]));
        }
        std::vector<mst::ContrastData> data;
        for (const auto& id : config_.study_order) {
            auto it = arms.find(id);
            if (it == arms.end()) throw ValidationError(fmt::format("mst_draws: study {} missing", id));
            std::vector<std::string> treatments;
            std::vector<std::vector<double>> draws;
            for (const auto& [k, slot] : it->second) {
                treatments.push_back(slot.first);
                draws.push_back(slot.second);
            }
            auto c = mst::study_contrasts(id, treatments, draws, config_.covariance);
            if (c.provenance.find("clipped") != std::string::npos)
                report.warnings.push_back(fmt::format("study {}: covariance clipped to positive semi-definite", id));
            data.push_back(std::move(c));
        }
        const auto dir = fs::path("contrasts") / model;
        data_io::write_contrasts(options_.out / dir, data);
        report.outputs = {(dir / "contrasts.csv").generic_string(), (dir / "covariance.csv").generic_string()};
        return report;
    });
}

// ---- 4. NMA --------------------------------------------------------------------------

std::vector<std::string> write_nma_outputs(const fs::path& dir, const nma::NmaFit& fit) {
    const auto& treatments = fit.network.treatments();
    const auto K = treatments.size();
    std::vector<std::string> files;
    auto put = [&](const std::string& name, const std::string& content) {
        data_io::write_file(dir / name, content);
        files.push_back(name);
    };

    std::string summary = "treatment,mean,sd,q2.5,q50,q97.5,rhat,ess\n";
    for (const auto& t : treatments) {
        const auto s = fit.draws.summary(fit.draws.index_of("d." + t));
        summary += fmt::format("{},{},{},{},{},{},{},{}\n", t, s.mean, s.sd, s.q025, s.q50, s.q975,
                               s.rhat ? fmt::format("{}", *s.rhat) : "", s.ess ? fmt::format("{}", *s.ess) : "");
    }
    put("d_summary.csv", summary);

    const Eigen::MatrixXd d = fit.d_matrix();
    const Eigen::MatrixXd ranks = nma::rank_probabilities(d);
    std::string rank_csv = "treatment";
    for (std::size_t r = 1; r <= K; ++r) rank_csv += fmt::format(",rank{}", r);
    rank_csv += "\n";
    for (std::size_t k = 0; k < K; ++k) {
        rank_csv += treatments[k];
        for (std::size_t r = 0; r < K; ++r) rank_csv += fmt::format(",{}", ranks(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(r)));
        rank_csv += "\n";
    }
    put("ranks.csv", rank_csv);

    const auto s = nma::sucra(ranks);
    std::string sucra_csv = "treatment,sucra\n";
    for (std::size_t k = 0; k < K; ++k) sucra_csv += fmt::format("{},{}\n", treatments[k], s[k]);
    put("sucra.csv", sucra_csv);

    const auto league = nma::league_table(d);
    std::string league_csv = "row,col,mean,lower,upper\n";
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t l = 0; l < K; ++l)
            if (k != l)
                league_csv += fmt::format("{},{},{},{},{}\n", treatments[k], treatments[l], league[k][l].mean, league[k][l].lower,
                                          league[k][l].upper);
    put("league.csv", league_csv);

    plot::ForestSeries series;
    series.name = "NMA";
    for (std::size_t k = 1; k < K; ++k) {
        const auto sm = fit.draws.summary(fit.draws.index_of("d." + treatments[k]));
        series.rows.push_back({treatments[k] + " vs " + treatments[0], sm.mean, sm.q025, sm.q975});
    }
    put("forest.svg", plot::forest_svg(series, std::nullopt, "LYG versus " + treatments[0]));
    return files;
}

StageReport Pipeline::nma(const std::string& model) {
    const auto dir = fs::path("contrasts") / model;
    return stage("nma/" + model, {(dir / "contrasts.csv").generic_string(), (dir / "covariance.csv").generic_string()},
                 [&, model, dir] {
                     StageReport report;
                     auto data = data_io::read_contrasts(options_.out / dir);
                     std::vector<double> weights;
                     for (const auto& c : data) weights.push_back(config_.weight_for(c.study));
                     nma::FitOptions options;
                     options.priors = {config_.nma.prior_d_sd, config_.nma.prior_tau_sd, config_.nma.fixed_tau};
                     options.jitter_singular = config_.nma.jitter;
                     auto mcmc = config_.mcmc;
                     mcmc.seed = mix_seed(config_.seed, stream_id("nma/" + model));
                     auto fit = nma::fit(data, config_.treatments, weights, options, mcmc);
                     const double rhat = inference::max_rhat(fit.draws);
                     if (rhat > 1.05) {
                         report.convergence_warning = true;
                         report.warnings.push_back(fmt::format("NMA {}: max R-hat {:.3f} > 1.05", model, rhat));
                     }
                     const auto out_dir = fs::path("nma") / model;
                     data_io::write_draws(options_.out / out_dir / "draws.csv", fit.draws);
                     data_io::write_diagnostics(options_.out / out_dir / "diagnostics.json", fit.draws, false);
                     report.outputs = {(out_dir / "draws.csv").generic_string(), (out_dir / "diagnostics.json").generic_string()};
                     for (const auto& f : write_nma_outputs(options_.out / out_dir, fit))
                         report.outputs.push_back((out_dir / f).generic_string());
                     return report;
                 });
}

// ---- 5. decisions and CEA ------------------------------------------------------------

Eigen::MatrixXd read_d_matrix(const fs::path& draws_csv, const std::vector<std::string>& treatments) {
    const auto draws = data_io::read_draws(draws_csv);
    const auto n = static_cast<Eigen::Index>(draws.total_draws());
    Eigen::MatrixXd d(n, static_cast<Eigen::Index>(treatments.size()));
    for (std::size_t k = 0; k < treatments.size(); ++k) {
        const auto name = "d." + treatments[k];
        if (!draws.contains(name)) throw ReferenceError(fmt::format("{}: no draws for treatment {}", draws_csv.string(), treatments[k]));
        auto col = draws.pooled(name);
        d.col(static_cast<Eigen::Index>(k)) = Eigen::Map<Eigen::VectorXd>(col.data(), n);
    }
    return d;
}

ordered_json decision_report(const Eigen::MatrixXd& d, const std::vector<std::string>& treatments,
                             const data_io::DecisionConfig& config, const std::string& model) {
    std::size_t reference = 0;
    if (config.reference) {
        auto it = std::find(treatments.begin(), treatments.end(), *config.reference);
        if (it == treatments.end()) throw ReferenceError(fmt::format("decision reference '{}' is not a treatment", *config.reference));
        reference = static_cast<std::size_t>(it - treatments.begin());
    }
    auto name_of = [&](std::size_t k) { return treatments[k]; };
    auto names = [&](const std::vector<std::size_t>& ks) {
        std::vector<std::string> out;
        for (auto k : ks) out.push_back(name_of(k));
        return out;
    };

    ordered_json j;
    j["model"] = model;
    j["outcome"] = "life years gained versus " + treatments[0];
    j["treatments"] = treatments;
    j["draws"] = d.rows();
    const auto pb = decision::probability_best(d);
    const auto ranks = nma::rank_probabilities(d);
    const auto s = nma::sucra(ranks);
    auto& post = j["posterior"] = ordered_json::array();
    for (std::size_t k = 0; k < treatments.size(); ++k) {
        std::vector<double> col(d.col(static_cast<Eigen::Index>(k)).data(), d.col(static_cast<Eigen::Index>(k)).data() + d.rows());
        ordered_json p;
        p["treatment"] = treatments[k];
        p["mean"] = d.col(static_cast<Eigen::Index>(k)).mean();
        p["q2.5"] = inference::quantile(col, 0.025);
        p["q97.5"] = inference::quantile(col, 0.975);
        p["prob_best"] = pb[k];
        p["sucra"] = s[k];
        post.push_back(p);
    }
    auto& rules = j["bayes_rules"] = ordered_json::object();
    for (auto loss : {decision::Loss::zero_one, decision::Loss::regret, decision::Loss::squared_regret}) {
        const auto r = decision::bayes_rule(d, loss);
        ordered_json e;
        e["chosen"] = name_of(r.chosen);
        e["risks"] = r.risks;
        e["tie"] = r.tie;
        rules[decision::to_string(loss)] = e;
    }
    const auto lv = decision::laev(d, reference, config.mcid_years);
    j["laev"] = {{"reference", name_of(reference)},
                 {"mcid_years", config.mcid_years},
                 {"screening", "posterior means"},
                 {"after_screening", names(lv.after_screening)},
                 {"survivors", names(lv.survivors)},
                 {"recommendation", lv.recommendation ? ordered_json(name_of(*lv.recommendation)) : ordered_json(nullptr)}};
    const auto g = decision::grade_decide(pb, config.grade_cutoff);
    j["grade"] = {{"cutoff", g.cutoff},
                  {"leader", name_of(g.leader)},
                  {"leader_probability", g.leader_probability},
                  {"recommendation", g.recommendation ? ordered_json(name_of(*g.recommendation)) : ordered_json(nullptr)}};
    return j;
}

namespace {

Eigen::MatrixXd cost_matrix(const data_io::RunConfig& cfg, std::size_t n) {
    std::vector<decision::CostSpec> ordered;
    for (const auto& t : cfg.treatments) {
        auto it = std::find_if(cfg.costs.begin(), cfg.costs.end(), [&](const auto& c) { return c.treatment == t; });
        if (it == cfg.costs.end()) throw ValidationError(fmt::format("costs: no cost given for treatment {}", t));
        ordered.push_back(*it);
    }
    return decision::sample_costs(ordered, n, cfg.decision.cost_seed).values;
}

} // namespace

StageReport Pipeline::decide(const std::string& model) {
    const auto in = (fs::path("nma") / model / "draws.csv").generic_string();
    return stage("decide/" + model, {in}, [&, model, in] {
        StageReport report;
        const auto d = read_d_matrix(options_.out / in, config_.treatments);
        auto j = decision_report(d, config_.treatments, config_.decision, model);
        if (!config_.costs.empty()) {
            const auto costs = cost_matrix(config_, static_cast<std::size_t>(d.rows()));
            const auto lambdas = decision::parse_lambda_grid(config_.decision.lambda);
            const auto r = decision::cea(d, costs, lambdas, 0);
            auto& c = j["cost_effectiveness"];
            c["reference"] = config_.treatments[0];
            c["mean_cost"] = r.mean_cost;
            auto& icers = c["icers"] = ordered_json::array();
            for (const auto& e : r.icers)
                icers.push_back({{"treatment", config_.treatments[e.treatment]},
                                 {"delta_effect", e.delta_effect},
                                 {"delta_cost", e.delta_cost},
                                 {"icer", e.icer ? ordered_json(*e.icer) : ordered_json(nullptr)}});
            auto& sw = c["switch_points"] = ordered_json::array();
            for (const auto& [lambda, k] : r.switch_points) sw.push_back({{"lambda", lambda}, {"optimal", config_.treatments[k]}});
            c["optimal_at_lowest_lambda"] = config_.treatments[r.optimal.front()];
            c["optimal_at_highest_lambda"] = config_.treatments[r.optimal.back()];
        }
        const auto rel = (fs::path("decision") / model / "decision_report.json").generic_string();
        data_io::write_file(options_.out / rel, j.dump(2) + "\n");
        report.outputs = {rel};
        return report;
    });
}

StageReport Pipeline::cea(const std::string& model) {
    if (config_.costs.empty()) throw ValidationError("cea: the config has no 'costs' section");
    const auto in = (fs::path("nma") / model / "draws.csv").generic_string();
    return stage("cea/" + model, {in}, [&, model, in] {
        StageReport report;
        const auto d = read_d_matrix(options_.out / in, config_.treatments);
        const auto costs = cost_matrix(config_, static_cast<std::size_t>(d.rows()));
        const auto lambdas = decision::parse_lambda_grid(config_.decision.lambda);
        const auto r = decision::cea(d, costs, lambdas, 0);
        const auto K = config_.treatments.size();

        std::string csv = "lambda,treatment,expected_net_benefit,eib,ceac,optimal\n";
        for (std::size_t i = 0; i < lambdas.size(); ++i)
            for (std::size_t k = 0; k < K; ++k) {
                const auto ii = static_cast<Eigen::Index>(i), kk = static_cast<Eigen::Index>(k);
                csv += fmt::format("{},{},{},{},{},{}\n", lambdas[i], config_.treatments[k], r.expected_net_benefit(ii, kk),
                                   r.eib(ii, kk), r.ceac(ii, kk), r.optimal[i] == k ? 1 : 0);
            }
        std::string icer = "treatment,delta_effect,delta_cost,icer\n";
        for (const auto& e : r.icers)
            icer += fmt::format("{},{},{},{}\n", config_.treatments[e.treatment], e.delta_effect, e.delta_cost,
                                e.icer ? fmt::format("{}", *e.icer) : "");
        std::vector<plot::Series> ceac, eib;
        for (std::size_t k = 0; k < K; ++k) {
            const auto kk = static_cast<Eigen::Index>(k);
            ceac.push_back({config_.treatments[k], std::vector<double>(r.ceac.col(kk).data(), r.ceac.col(kk).data() + r.ceac.rows())});
            if (k > 0)
                eib.push_back({config_.treatments[k] + " vs " + config_.treatments[0],
                               std::vector<double>(r.eib.col(kk).data(), r.eib.col(kk).data() + r.eib.rows())});
        }
        const auto dir = fs::path("cea") / model;
        data_io::write_file(options_.out / dir / "cea.csv", csv);
        data_io::write_file(options_.out / dir / "icer.csv", icer);
        data_io::write_file(options_.out / dir / "ceac.svg",
                            plot::line_chart_svg(lambdas, ceac, "Cost-effectiveness acceptability", "Willingness to pay per life year",
                                                 "P(maximal net benefit)"));
        data_io::write_file(options_.out / dir / "eib.svg",
                            plot::line_chart_svg(lambdas, eib, "Expected incremental benefit", "Willingness to pay per life year",
                                                 "EIB", true));
        for (const char* f : {"cea.csv", "icer.csv", "ceac.svg", "eib.svg"}) report.outputs.push_back((dir / f).generic_string());
        return report;
    });
}

// ---- plots -----------------------------------------------------------------------------

plot::ForestSeries read_forest_series(const fs::path& d_summary, const std::string& name) {
    const auto text = data_io::read_file(d_summary);
    std::vector<std::vector<std::string>> rows;
    std::size_t pos = text.find('\n') + 1;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        auto f = data_io::split_csv_line(text.substr(pos, end - pos));
        pos = end + 1;
        if (f.size() >= 6) rows.push_back(f);
    }
    if (rows.size() < 2) throw ValidationError(fmt::format("{}: need the reference and at least one treatment", d_summary.string()));
    plot::ForestSeries s;
    s.name = name;
    for (std::size_t i = 1; i < rows.size(); ++i)
        s.rows.push_back({rows[i][0] + " vs " + rows[0][0], std::stod(rows[i][1]), std::stod(rows[i][3]), std::stod(rows[i][5])});
    return s;
}

StageReport Pipeline::plot() {
    std::vector<std::string> inputs;
    for (const auto& m : models_) inputs.push_back((fs::path("nma") / m / "d_summary.csv").generic_string());
    return stage("plot", inputs, [&, inputs] {
        StageReport report;
        auto first = read_forest_series(options_.out / inputs[0], models_[0]);
        std::optional<plot::ForestSeries> second;
        if (models_.size() > 1) second = read_forest_series(options_.out / inputs[1], models_[1]);
        data_io::write_file(options_.out / "forest.svg",
                            plot::forest_svg(first, second, "LYG versus " + config_.treatments[0]));
        report.outputs = {"forest.svg"};
        return report;
    });
}

RunResult Pipeline::run() {
    RunResult result;
    auto add = [&](StageReport r) {
        result.convergence_warning = result.convergence_warning || r.convergence_warning;
        for (const auto& w : r.warnings) result.warnings.push_back(r.id + ": " + w);
        result.stages.push_back(std::move(r));
    };
    add(project_mortality());
    for (const auto& m : models_) {
        add(fit_survival(m));
        add(extract_contrasts(m));
        add(nma(m));
    }
    add(decide(models_.front()));
    if (!config_.costs.empty()) add(cea(models_.front()));
    add(plot());
    return result;
}

} // namespace survnma::pipeline
