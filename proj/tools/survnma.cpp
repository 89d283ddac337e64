// survnma: externally anchored survival extrapolation, LYG network meta-analysis and decisions.
#include "survnma/data_io.hpp"
#include "survnma/pipeline.hpp"
#include "survnma/plot.hpp"
#include "survnma/simharness.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include <iostream>

using namespace survnma;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitValidation = 2;
constexpr int kExitConvergence = 3;

struct Globals {
    std::string config;
    std::string out = "out";
    std::optional<std::uint64_t> seed;
    std::optional<int> chains;
    std::optional<int> projection_draws;
    bool strict = false;
    bool force = false;
    bool quiet = false;
};

data_io::RunConfig load_config(const Globals& g) {
    if (g.config.empty()) throw ValidationError("--config is required for this command");
    auto cfg = data_io::parse_run_config(g.config);
    const bool explicit_cost_seed = std::none_of(cfg.defaults_applied.begin(), cfg.defaults_applied.end(),
                                                 [](const std::string& s) { return s.rfind("decision.cost_seed", 0) == 0; });
    if (g.seed) {
        cfg.seed = *g.seed;
        cfg.mcmc.seed = *g.seed;
        cfg.mortality_options.mcmc.seed = *g.seed;
        if (!explicit_cost_seed) cfg.decision.cost_seed = *g.seed;
    }
    if (g.chains) {
        cfg.mcmc.chains = *g.chains;
        cfg.mortality_options.mcmc.chains = *g.chains;
        cfg.mcmc.validate();
    }
    if (g.projection_draws) cfg.mortality_options.projection_draws = *g.projection_draws;
    return cfg;
}

pipeline::Pipeline make_pipeline(const Globals& g, data_io::RunConfig cfg, std::vector<std::string> models = {}) {
    pipeline::Options o;
    o.out = g.out;
    o.models = std::move(models);
    o.force = g.force;
    if (!g.quiet) o.log = [](const std::string& m) { std::cerr << m << "\n"; };
    return pipeline::Pipeline(std::move(cfg), std::move(o));
}

int finish(const Globals& g, const std::vector<pipeline::StageReport>& reports) {
    bool convergence = false;
    for (const auto& r : reports) convergence = convergence || r.convergence_warning;
    if (convergence && g.strict) {
        std::cerr << "error: convergence warning treated as error under --strict\n";
        return kExitConvergence;
    }
    return kExitOk;
}

std::vector<double> as_doubles(const YAML::Node& n) {
    if (n.IsSequence()) return n.as<std::vector<double>>();
    return {n.as<double>()};
}

std::vector<int> as_ints(const YAML::Node& n) {
    if (n.IsSequence()) return n.as<std::vector<int>>();
    return {n.as<int>()};
}

inference::McmcConfig parse_sim_mcmc(const YAML::Node& n, inference::McmcConfig m) {
    if (!n) return m;
    for (const auto& kv : n) {
        const auto key = kv.first.as<std::string>();
        if (key == "chains") m.chains = kv.second.as<int>();
        else if (key == "warmup") m.warmup = kv.second.as<int>();
        else if (key == "samples") m.samples = kv.second.as<int>();
        else if (key == "thin") m.thin = kv.second.as<int>();
        else throw ValidationError(fmt::format("simulation config: unknown key 'mcmc.{}'", key));
    }
    m.validate();
    return m;
}

struct PowerGrid {
    simharness::PowerSimConfig base;
    std::vector<int> n_poor{2, 4, 6};
    std::vector<double> bias{0.0, 0.5, 1.0};
    std::vector<double> tau{0.1, 0.3};
};

YAML::Node load_sim_yaml(const std::string& path) {
    if (path.empty()) return YAML::Node(YAML::NodeType::Map);
    try {
        auto n = YAML::Load(data_io::read_file(path));
        return n.IsNull() ? YAML::Node(YAML::NodeType::Map) : n;
    } catch (const YAML::ParserException& e) {
        throw ParseError(fmt::format("simulation config: {}", e.msg), static_cast<std::size_t>(e.mark.line + 1));
    }
}

PowerGrid parse_power_grid(const std::string& path) {
    PowerGrid g;
    const auto root = load_sim_yaml(path);
    for (const auto& kv : root) {
        const auto key = kv.first.as<std::string>();
        const auto& v = kv.second;
        auto& b = g.base;
        if (key == "n_studies") b.n_studies = v.as<int>();
        else if (key == "n_treatments") b.n_treatments = v.as<int>();
        else if (key == "patients_per_arm") b.patients_per_arm = v.as<int>();
        else if (key == "within_sd") b.within_sd = v.as<double>();
        else if (key == "n_poor") g.n_poor = as_ints(v);
        else if (key == "bias_magnitude") g.bias = as_doubles(v);
        else if (key == "tau") g.tau = as_doubles(v);
        else if (key == "omega_medium") b.omega_medium = v.as<double>();
        else if (key == "omega_high") b.omega_high = v.as<double>();
        else if (key == "medium_bias_fraction") b.medium_bias_fraction = v.as<double>();
        else if (key == "d_step") b.d_step = v.as<double>();
        else if (key == "replications") b.replications = v.as<int>();
        else if (key == "seed") b.seed = v.as<std::uint64_t>();
        else if (key == "mcmc") b.mcmc = parse_sim_mcmc(v, b.mcmc);
        else throw ValidationError(fmt::format("simulation config: unknown key '{}'", key));
    }
    return g;
}

simharness::EngineStudyConfig parse_engine_config(const std::string& path) {
    simharness::EngineStudyConfig c;
    const auto root = load_sim_yaml(path);
    for (const auto& kv : root) {
        const auto key = kv.first.as<std::string>();
        const auto& v = kv.second;
        if (key == "studies") c.studies = as_ints(v);
        else if (key == "treatments") c.treatments = as_ints(v);
        else if (key == "tau") c.taus = as_doubles(v);
        else if (key == "patients_per_arm") c.patients_per_arm = v.as<int>();
        else if (key == "within_sd") c.within_sd = v.as<double>();
        else if (key == "d_step") c.d_step = v.as<double>();
        else if (key == "replications") c.replications = v.as<int>();
        else if (key == "seed") c.seed = v.as<std::uint64_t>();
        else if (key == "mcmc") c.mcmc = parse_sim_mcmc(v, c.mcmc);
        else throw ValidationError(fmt::format("simulation config: unknown key '{}'", key));
    }
    return c;
}

int simulate_power(const Globals& g, std::optional<int> replications) {
    auto grid = parse_power_grid(g.config);
    if (replications) grid.base.replications = *replications;
    if (g.seed) grid.base.seed = *g.seed;
    if (g.chains) grid.base.mcmc.chains = *g.chains;
    const fs::path out = g.out;
    std::vector<std::string> labels;
    std::vector<std::map<std::string, simharness::SimMetrics>> results;
    std::string all_records, all_metrics = "scenario,";
    bool header_done = false;
    std::uint64_t scenario = 0;
    for (int poor : grid.n_poor)
        for (double bias : grid.bias)
            for (double tau : grid.tau) {
                auto cfg = grid.base;
                cfg.n_poor = poor;
                cfg.bias_magnitude = bias;
                cfg.tau_true = tau;
                cfg.seed = mix_seed(grid.base.seed, scenario++);
                const auto label = fmt::format("poor{}_bias{}_tau{}", poor, bias, tau);
                if (!g.quiet) std::cerr << "[simulate-power] " << label << " (" << cfg.replications << " replications)\n";
                auto r = simharness::run_power_study(cfg);
                for (const auto& line : r.log) std::cerr << "  " << line << "\n";
                data_io::write_file(out / "replications" / (label + ".csv"), simharness::format_records(r.records));
                auto metrics = simharness::format_metrics(r.metrics);
                auto body = metrics.substr(metrics.find('\n') + 1);
                if (!header_done) {
                    all_metrics += metrics.substr(0, metrics.find('\n') + 1);
                    header_done = true;
                }
                std::size_t pos = 0;
                while (pos < body.size()) {
                    auto end = body.find('\n', pos);
                    all_metrics += label + "," + body.substr(pos, end - pos) + "\n";
                    pos = end + 1;
                }
                labels.push_back(label);
                results.push_back(r.metrics);
            }
    data_io::write_file(out / "aggregate.csv", all_metrics);
    data_io::write_file(out / "power_simulation.svg", simharness::power_figure(labels, results));
    return kExitOk;
}

int simulate_engine(const Globals& g, std::optional<int> replications) {
    auto cfg = parse_engine_config(g.config);
    if (replications) cfg.replications = *replications;
    if (g.seed) cfg.seed = *g.seed;
    if (g.chains) cfg.mcmc.chains = *g.chains;
    if (!g.quiet) std::cerr << "[simulate-engine] " << cfg.cells().size() << " cells x " << cfg.replications << " replications\n";
    auto r = simharness::run_engine_study(cfg);
    const fs::path out = g.out;
    data_io::write_file(out / "replications.csv", simharness::format_records(r.records));
    data_io::write_file(out / "aggregate.csv", simharness::format_metrics(r.metrics));
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Externally anchored survival extrapolation, LYG network meta-analysis and decision analysis"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "Run configuration (YAML)");
    app.add_option("--out", g.out, "Output directory")->capture_default_str();
    app.add_option("--seed", g.seed, "Master seed (overrides the config)");
    app.add_option("--chains", g.chains, "MCMC chains (overrides the config)")->check(CLI::PositiveNumber);
    app.add_option("--projection-draws", g.projection_draws,
                   "Lee-Carter draws the synthetic times are spread over (0: posterior-mean curve)")
        ->check(CLI::NonNegativeNumber);
    app.add_flag("--strict", g.strict, "Exit with status 3 on convergence warnings");
    app.add_flag("--force", g.force, "Rerun every stage regardless of the manifest");
    app.add_flag("--quiet", g.quiet, "Suppress progress messages");

    std::vector<std::string> models;
    std::string weights_file, costs_file;
    auto model_opt = [&](CLI::App* sub, bool many) {
        auto* o = sub->add_option("--model", models, many ? "Survival model(s); two models give a dual-overlay forest plot"
                                                           : "Survival model");
        if (!many) o->expected(1);
        else o->expected(1, 2);
    };

    auto* mort = app.add_subcommand("project-mortality", "Lee-Carter projection, cohort survival and external populations");
    auto* fit = app.add_subcommand("fit-survival", "Fit survival models per arm and extrapolate MST draws");
    model_opt(fit, false);
    auto* contr = app.add_subcommand("extract-contrasts", "Per-study LYG means and covariances");
    model_opt(contr, false);
    auto* nma_cmd = app.add_subcommand("nma", "Power-likelihood random-effects NMA");
    model_opt(nma_cmd, false);
    nma_cmd->add_option("--weights", weights_file, "YAML file with weights: and/or rob: maps");
    auto* dec = app.add_subcommand("decide", "Bayes rules, LaEV and GRADE decisions");
    model_opt(dec, false);
    auto* cea_cmd = app.add_subcommand("cea", "Net benefit, EIB, ICER and CEAC");
    model_opt(cea_cmd, false);
    cea_cmd->add_option("--costs", costs_file, "YAML file with a costs: section");
    auto* run = app.add_subcommand("run", "Full pipeline");
    model_opt(run, true);

    auto* plot_cmd = app.add_subcommand("plot", "Render SVG plots");
    std::string kind = "forest", output;
    std::vector<std::string> inputs, names;
    plot_cmd->add_option("--kind", kind, "forest, ceac or eib")->check(CLI::IsMember({"forest", "ceac", "eib"}));
    plot_cmd->add_option("--input", inputs, "d_summary.csv (forest, up to two) or cea.csv")->expected(0, 2);
    plot_cmd->add_option("--name", names, "Series names for the forest plot")->expected(0, 2);
    plot_cmd->add_option("--output", output, "SVG file (default: <out>/<kind>.svg)");
    model_opt(plot_cmd, true);

    std::optional<int> replications;
    auto* sp = app.add_subcommand("simulate-power", "Typical versus power-likelihood NMA simulation");
    sp->add_option("--replications", replications, "Replications per scenario")->check(CLI::PositiveNumber);
    auto* se = app.add_subcommand("simulate-engine", "Statistical and computational efficiency of the sampler");
    se->add_option("--replications", replications, "Replications per cell")->check(CLI::PositiveNumber);

    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (sp->parsed()) return simulate_power(g, replications);
        if (se->parsed()) return simulate_engine(g, replications);

        if (plot_cmd->parsed() && !inputs.empty()) {
            const fs::path file = output.empty() ? fs::path(g.out) / (kind + ".svg") : fs::path(output);
            if (kind == "forest") {
                auto first = pipeline::read_forest_series(inputs[0], names.size() > 0 ? names[0] : "model 1");
                std::optional<plot::ForestSeries> second;
                if (inputs.size() > 1) second = pipeline::read_forest_series(inputs[1], names.size() > 1 ? names[1] : "model 2");
                data_io::write_file(file, plot::forest_svg(first, second, "LYG versus reference"));
            } else {
                // cea.csv: lambda,treatment,expected_net_benefit,eib,ceac,optimal
                const auto text = data_io::read_file(inputs[0]);
                std::vector<double> lambdas;
                std::vector<plot::Series> series;
                std::size_t pos = text.find('\n') + 1;
                while (pos < text.size()) {
                    auto end = text.find('\n', pos);
                    if (end == std::string::npos) end = text.size();
                    auto f = data_io::split_csv_line(text.substr(pos, end - pos));
                    pos = end + 1;
                    if (f.size() != 6) continue;
                    const double lambda = std::stod(f[0]);
                    if (lambdas.empty() || lambdas.back() != lambda) lambdas.push_back(lambda);
                    auto it = std::find_if(series.begin(), series.end(), [&](const auto& s) { return s.name == f[1]; });
                    if (it == series.end()) it = series.insert(series.end(), plot::Series{f[1], {}});
                    it->values.push_back(std::stod(kind == "ceac" ? f[4] : f[3]));
                }
                if (kind == "eib" && !series.empty()) series.erase(series.begin());
                data_io::write_file(file, kind == "ceac" ? plot::line_chart_svg(lambdas, series, "Cost-effectiveness acceptability",
                                                                                "Willingness to pay per life year", "P(maximal net benefit)")
                                                         : plot::line_chart_svg(lambdas, series, "Expected incremental benefit",
                                                                                "Willingness to pay per life year", "EIB", true));
            }
            if (!g.quiet) std::cerr << "wrote " << file.string() << "\n";
            return kExitOk;
        }

        auto cfg = load_config(g);
        if (!weights_file.empty())
            for (const auto& [id, w] : data_io::parse_weights(weights_file)) cfg.weights[id] = w;
        if (!costs_file.empty()) cfg.costs = data_io::parse_costs(costs_file);
        auto p = make_pipeline(g, cfg, models);
        const std::string model = p.models().front();
        std::vector<pipeline::StageReport> reports;
        if (mort->parsed()) reports.push_back(p.project_mortality());
        else if (fit->parsed()) reports.push_back(p.fit_survival(model));
        else if (contr->parsed()) reports.push_back(p.extract_contrasts(model));
        else if (nma_cmd->parsed()) reports.push_back(p.nma(model));
        else if (dec->parsed()) reports.push_back(p.decide(model));
        else if (cea_cmd->parsed()) reports.push_back(p.cea(model));
        else if (plot_cmd->parsed()) reports.push_back(p.plot());
        else if (run->parsed()) {
            auto r = p.run();
            reports = r.stages;
        }
        return finish(g, reports);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}
