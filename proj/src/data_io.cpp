#include "survnma/data_io.hpp"
#include "survnma/nma.hpp"

#include <boost/math/distributions/normal.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace survnma::data_io {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::optional<double> to_double(const std::string& s) {
    double v = 0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || first == last) return std::nullopt;
    return v;
}

std::optional<long> to_long(const std::string& s) {
    long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) out.push_back(line);
    return out;
}

void check_header(const std::string& line, const std::vector<std::string>& expected, const std::string& what) {
    auto got = split_csv_line(line);
    for (auto& g : got) g = lower(trim(g));
    if (got != expected) {
        std::string want;
        for (const auto& e : expected) want += (want.empty() ? "" : ",") + e;
        throw ParseError(fmt::format("{}: expected header '{}'", what, want), 1);
    }
}

// Row-level problem: fatal in strict mode, a warning in lenient mode.
template <typename E>
bool reject(const ParseOptions& options, const E& error) {
    if (!options.lenient) throw error;
    if (options.warnings) options.warnings->push_back(std::string("dropped row: ") + error.what());
    return false;
}

} // namespace

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError(fmt::format("cannot open '{}'", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError(fmt::format("cannot write '{}'", path.string()));
    out << content;
}

std::string format_double(double v) { return fmt::format("{}", v); }

std::string to_string(Sex s) { return s == Sex::female ? "female" : "male"; }

Sex sex_from_string(const std::string& s) {
    const auto v = lower(trim(s));
    if (v == "female" || v == "f") return Sex::female;
    if (v == "male" || v == "m") return Sex::male;
    throw ValidationError(fmt::format("unknown sex '{}' (expected female or male)", s));
}

// ---- StudyMeta ---------------------------------------------------------------

void StudyMeta::validate() const {
    if (arms.size() < 2) throw ValidationError(fmt::format("study {}: needs at least 2 arms", study));
    std::set<std::string> seen(arms.begin(), arms.end());
    if (seen.size() != arms.size()) throw ValidationError(fmt::format("study {}: duplicate arm", study));
    auto check_sum = [&](double total, const char* what) {
        if (std::abs(total - 1.0) > 1e-9)
            throw ValidationError(fmt::format("study {}: {} weights sum to {} (must be 1 within 1e-9)", study, what, total));
    };
    double total = 0;
    for (const auto& [c, w] : country_weights) {
        if (!(w >= 0) || !std::isfinite(w)) throw ValidationError(fmt::format("study {}: bad weight for {}", study, c));
        total += w;
    }
    check_sum(total, "country");
    total = 0;
    for (const auto& [a, w] : age_distribution) {
        if (!(w >= 0) || !std::isfinite(w)) throw ValidationError(fmt::format("study {}: bad weight for age {}", study, a));
        if (a < 0 || a > 110) throw ValidationError(fmt::format("study {}: age {} outside 0..110", study, a));
        total += w;
    }
    check_sum(total, "age");
    if (!(female_proportion >= 0 && female_proportion <= 1))
        throw ValidationError(fmt::format("study {}: female proportion must lie in [0, 1]", study));
    nma::rob_weight(rob);
    if (weight && !(*weight > 0 && *weight <= 1))
        throw ValidationError(fmt::format("study {}: weight must lie in (0, 1]", study));
}

std::vector<std::pair<int, double>> age_distribution_from_moments(double mean, double sd) {
    if (!(sd > 0) || !std::isfinite(mean) || !std::isfinite(sd))
        throw ValidationError("age distribution: need finite mean and sd > 0");
    boost::math::normal_distribution<double> normal(mean, sd);
    std::vector<std::pair<int, double>> out;
    double total = 0;
    for (int age = 18; age <= 101; ++age) {
        double w = boost::math::cdf(normal, age + 0.5) - boost::math::cdf(normal, age - 0.5);
        out.emplace_back(age, w);
        total += w;
    }
    if (!(total > 0)) throw ValidationError("age distribution: no mass within ages 18-101");
    for (auto& [age, w] : out) w /= total;
    std::erase_if(out, [](const auto& p) { return p.second <= 0; });
    return out;
}

// ---- IPD -------------------------------------------------------------------------

std::vector<IpdRecord> parse_ipd_text(const std::string& text, const std::map<std::string, StudyMeta>* studies,
                                      const ParseOptions& options) {
    const auto lines = lines_of(text);
    if (lines.empty()) throw ParseError("IPD: empty file", 1);
    check_header(lines[0], {"study", "arm", "time", "event"}, "IPD");

    std::vector<IpdRecord> rows;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::size_t lineno = i + 1;
        if (trim(lines[i]).empty()) continue;
        auto f = split_csv_line(lines[i]);
        if (f.size() != 4) {
            reject(options, ParseError(fmt::format("IPD: expected 4 fields, got {}", f.size()), lineno));
            continue;
        }
        if (f[0].empty() || f[1].empty()) {
            reject(options, ParseError("IPD: empty study or arm", lineno));
            continue;
        }
        auto t = to_double(f[2]);
        if (!t) {
            reject(options, ParseError(fmt::format("IPD: cannot parse time '{}'", f[2]), lineno));
            continue;
        }
        if (!(*t > 0) || !std::isfinite(*t)) {
            reject(options, ValidationError(fmt::format("IPD line {}: time must be finite and > 0, got {}", lineno, f[2])));
            continue;
        }
        if (f[3] != "0" && f[3] != "1") {
            reject(options, ValidationError(fmt::format("IPD line {}: event must be 0 or 1, got '{}'", lineno, f[3])));
            continue;
        }
        if (studies) {
            auto it = studies->find(f[0]);
            if (it == studies->end()) {
                reject(options, ReferenceError(fmt::format("IPD line {}: unknown study '{}'", lineno, f[0])));
                continue;
            }
            const auto& arms = it->second.arms;
            if (std::find(arms.begin(), arms.end(), f[1]) == arms.end()) {
                reject(options, ReferenceError(fmt::format("IPD line {}: study '{}' has no arm '{}'", lineno, f[0], f[1])));
                continue;
            }
        }
        rows.push_back({f[0], f[1], *t, f[3] == "1"});
    }

    // Stable grouping by (study, arm) in order of first appearance.
    std::vector<std::pair<std::string, std::string>> order;
    std::map<std::pair<std::string, std::string>, std::vector<IpdRecord>> groups;
    for (auto& r : rows) {
        auto key = std::make_pair(r.study, r.arm);
        auto [it, inserted] = groups.try_emplace(key);
        if (inserted) order.push_back(key);
        it->second.push_back(std::move(r));
    }
    std::vector<IpdRecord> out;
    out.reserve(rows.size());
    for (const auto& key : order)
        for (auto& r : groups[key]) out.push_back(std::move(r));
    return out;
}

std::vector<IpdRecord> parse_ipd(const fs::path& path, const std::map<std::string, StudyMeta>* studies,
                                 const ParseOptions& options) {
    return parse_ipd_text(read_file(path), studies, options);
}

std::string format_ipd(const std::vector<IpdRecord>& records) {
    std::string out = "study,arm,time,event\n";
    for (const auto& r : records) out += fmt::format("{},{},{},{}\n", r.study, r.arm, format_double(r.time), r.event ? 1 : 0);
    return out;
}

void write_ipd(const fs::path& path, const std::vector<IpdRecord>& records) { write_file(path, format_ipd(records)); }

// ---- mortality ---------------------------------------------------------------

MortalityTables parse_mortality_text(const std::string& text, const ParseOptions& options) {
    const auto lines = lines_of(text);
    if (lines.empty()) throw ParseError("mortality: empty file", 1);
    check_header(lines[0], {"country", "sex", "age", "year", "rate"}, "mortality");

    std::map<MortalityKey, std::map<std::pair<int, int>, double>> cells;
    std::vector<MortalityKey> order;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::size_t lineno = i + 1;
        if (trim(lines[i]).empty()) continue;
        auto f = split_csv_line(lines[i]);
        if (f.size() != 5) {
            reject(options, ParseError(fmt::format("mortality: expected 5 fields, got {}", f.size()), lineno));
            continue;
        }
        Sex sex;
        try {
            sex = sex_from_string(f[1]);
        } catch (const ValidationError& e) {
            reject(options, ParseError(fmt::format("mortality: {}", e.what()), lineno));
            continue;
        }
        auto age = to_long(f[2]);
        auto year = to_long(f[3]);
        auto rate = to_double(f[4]);
        if (!age || !year || !rate || f[0].empty()) {
            reject(options, ParseError("mortality: cannot parse country/age/year/rate", lineno));
            continue;
        }
        if (*age < 0 || *age > 101) {
            reject(options, ValidationError(fmt::format("mortality line {}: age {} outside 0..101", lineno, *age)));
            continue;
        }
        if (!(*rate > 0) || !std::isfinite(*rate)) {
            reject(options, ValidationError(fmt::format("mortality line {}: rate must be positive and finite, got {}",
                                                        lineno, f[4])));
            continue;
        }
        MortalityKey key{f[0], sex};
        auto [it, inserted] = cells.try_emplace(key);
        if (inserted) order.push_back(key);
        if (!it->second.emplace(std::make_pair(static_cast<int>(*age), static_cast<int>(*year)), *rate).second)
            reject(options, ValidationError(fmt::format("mortality line {}: duplicate cell {}/{}/{}/{}", lineno, f[0],
                                                        to_string(sex), *age, *year)));
    }
    if (cells.empty()) throw ValidationError("mortality: no rows");

    MortalityTables out;
    for (const auto& key : order) {
        const auto& m = cells[key];
        int y0 = m.begin()->first.second, y1 = y0;
        for (const auto& [ay, r] : m) {
            y0 = std::min(y0, ay.second);
            y1 = std::max(y1, ay.second);
        }
        MortalityTable t;
        t.country = key.first;
        t.sex = key.second;
        t.first_age = 0;
        t.first_year = y0;
        t.rates.resize(102, y1 - y0 + 1);
        std::vector<std::string> missing;
        std::size_t n_missing = 0;
        for (int year = y0; year <= y1; ++year)
            for (int age = 0; age <= 101; ++age) {
                auto it = m.find({age, year});
                if (it == m.end()) {
                    if (++n_missing <= 10) missing.push_back(fmt::format("age {} year {}", age, year));
                    continue;
                }
                t.rates(age, year - y0) = it->second;
            }
        if (n_missing > 0) {
            std::string list;
            for (const auto& s : missing) list += (list.empty() ? "" : "; ") + s;
            throw ValidationError(fmt::format("mortality table {}/{} is incomplete: {} missing cells ({}{})", key.first,
                                              to_string(key.second), n_missing, list, n_missing > 10 ? "; ..." : ""));
        }
        out.emplace(key, std::move(t));
    }
    return out;
}

MortalityTables parse_mortality(const fs::path& path, const ParseOptions& options) {
    return parse_mortality_text(read_file(path), options);
}

std::string format_mortality(const MortalityTables& tables) {
    std::string out = "country,sex,age,year,rate\n";
    for (const auto& [key, t] : tables)
        for (int y = 0; y < t.years(); ++y)
            for (int a = 0; a < t.ages(); ++a)
                out += fmt::format("{},{},{},{},{}\n", t.country, to_string(t.sex), t.first_age + a, t.first_year + y,
                                   format_double(t.rates(a, y)));
    return out;
}

void write_mortality(const fs::path& path, const MortalityTables& tables) { write_file(path, format_mortality(tables)); }

// ---- run configuration ---------------------------------------------------------

namespace {

class Section {
public:
    Section(YAML::Node node, std::string path, bool strict, std::vector<std::string>* defaults)
        : node_(std::move(node)), path_(std::move(path)), strict_(strict), defaults_(defaults) {
        if (node_ && !node_.IsNull() && !node_.IsMap()) throw ValidationError(fmt::format("config: '{}' must be a mapping", path_));
    }

    bool has(const std::string& key) {
        used_.insert(key);
        return node_ && node_.IsMap() && node_[key] && !node_[key].IsNull();
    }

    YAML::Node raw(const std::string& key) {
        used_.insert(key);
        return node_[key];
    }

    template <typename T>
    T get(const std::string& key, const T& fallback) {
        if (!has(key)) {
            if (defaults_) defaults_->push_back(fmt::format("{} = {} (default)", qualified(key), show(fallback)));
            return fallback;
        }
        return value<T>(key);
    }

    template <typename T>
    std::optional<T> optional(const std::string& key) {
        if (!has(key)) return std::nullopt;
        return value<T>(key);
    }

    template <typename T>
    T value(const std::string& key) {
        try {
            return node_[key].as<T>();
        } catch (const YAML::Exception&) {
            throw ValidationError(fmt::format("config: '{}' has the wrong type", qualified(key)));
        }
    }

    Section child(const std::string& key) {
        used_.insert(key);
        return Section(node_ ? node_[key] : YAML::Node(), qualified(key), strict_, defaults_);
    }

    void finish() const {
        if (!strict_ || !node_ || !node_.IsMap()) return;
        for (const auto& kv : node_) {
            auto key = kv.first.as<std::string>();
            if (!used_.count(key)) throw ValidationError(fmt::format("config: unknown key '{}'", qualified(key)));
        }
    }

    std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    template <typename T>
    static std::string show(const T& v) {
        if constexpr (std::is_same_v<T, bool>) return v ? "true" : "false";
        else if constexpr (std::is_same_v<T, std::string>) return v;
        else return fmt::format("{}", v);
    }

    YAML::Node node_;
    std::string path_;
    bool strict_;
    std::vector<std::string>* defaults_;
    std::set<std::string> used_;
};

inference::McmcConfig parse_mcmc(Section s, const inference::McmcConfig& base) {
    inference::McmcConfig m = base;
    m.chains = s.get("chains", base.chains);
    m.warmup = s.get("warmup", base.warmup);
    m.samples = s.get("samples", base.samples);
    m.thin = s.get("thin", base.thin);
    m.target_accept = s.optional<double>("target_accept");
    s.finish();
    return m;
}

StudyMeta parse_study(const std::string& id, Section s) {
    StudyMeta meta;
    meta.study = id;
    if (!s.has("arms")) throw ValidationError(fmt::format("config: study {} lists no arms", id));
    meta.arms = s.value<std::vector<std::string>>("arms");
    if (s.has("countries")) {
        for (const auto& kv : s.raw("countries")) meta.country_weights.emplace_back(kv.first.as<std::string>(), kv.second.as<double>());
    } else {
        throw ValidationError(fmt::format("config: study {} lists no countries", id));
    }
    const bool explicit_ages = s.has("ages");
    const bool moments = s.has("age_mean");
    if (explicit_ages && moments) throw ValidationError(fmt::format("config: study {} gives both ages and age_mean", id));
    if (explicit_ages) {
        for (const auto& kv : s.raw("ages")) meta.age_distribution.emplace_back(kv.first.as<int>(), kv.second.as<double>());
    } else if (moments) {
        if (!s.has("age_sd")) throw ValidationError(fmt::format("config: study {} gives age_mean without age_sd", id));
        meta.age_distribution = age_distribution_from_moments(s.value<double>("age_mean"), s.value<double>("age_sd"));
    } else {
        throw ValidationError(fmt::format("config: study {} gives neither ages nor age_mean/age_sd", id));
    }
    s.has("age_sd");
    meta.female_proportion = s.get("female", 0.5);
    meta.rob = s.get<std::string>("rob", "low");
    meta.weight = s.optional<double>("weight");
    s.finish();
    meta.validate();
    return meta;
}

std::vector<decision::CostSpec> parse_cost_section(const YAML::Node& node, bool strict) {
    std::vector<decision::CostSpec> out;
    if (!node) return out;
    if (!node.IsMap()) throw ValidationError("config: 'costs' must map treatments to {mean, cv}");
    for (const auto& kv : node) {
        const auto id = kv.first.as<std::string>();
        Section s(kv.second, "costs." + id, strict, nullptr);
        if (!s.has("mean") || !s.has("cv")) throw ValidationError(fmt::format("config: costs.{} needs mean and cv", id));
        decision::CostSpec c;
        c.treatment = id;
        const double factor = s.get("currency_factor", 1.0);
        c.mean_cost = s.value<double>("mean") * factor;
        c.cv = s.value<double>("cv");
        s.finish();
        if (!(c.mean_cost > 0 && std::isfinite(c.mean_cost)) || !(c.cv > 0 && std::isfinite(c.cv)) || !(factor > 0))
            throw ValidationError(fmt::format("config: costs.{}: mean, cv and currency_factor must be finite and positive", id));
        out.push_back(c);
    }
    return out;
}

std::map<std::string, double> parse_weight_map(const YAML::Node& node) {
    std::map<std::string, double> out;
    if (!node) return out;
    if (!node.IsMap()) throw ValidationError("config: 'weights' must map study ids to weights");
    for (const auto& kv : node) {
        const auto id = kv.first.as<std::string>();
        double w = 0;
        try {
            w = kv.second.as<double>();
        } catch (const YAML::Exception&) {
            throw ValidationError(fmt::format("config: weight for {} is not a number", id));
        }
        if (!(w > 0 && w <= 1)) throw ValidationError(fmt::format("config: weight for {} must lie in (0, 1], got {}", id, w));
        out[id] = w;
    }
    return out;
}

YAML::Node load_yaml(const std::string& text) {
    try {
        return YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ParseError(fmt::format("config: {}", e.msg), static_cast<std::size_t>(e.mark.line + 1));
    }
}

} // namespace

double RunConfig::weight_for(const std::string& study) const {
    if (auto it = weights.find(study); it != weights.end()) return it->second;
    if (auto it = studies.find(study); it != studies.end()) {
        if (it->second.weight) return *it->second.weight;
        return nma::rob_weight(it->second.rob);
    }
    return 1.0;
}

fs::path RunConfig::resolve(const fs::path& p) const {
    if (p.empty() || p.is_absolute() || base_dir.empty()) return p;
    return base_dir / p;
}

RunConfig parse_run_config_text(const std::string& text, const fs::path& base_dir) {
    YAML::Node root = load_yaml(text);
    if (!root || root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
    RunConfig cfg;
    cfg.base_dir = base_dir;
    auto* defaults = &cfg.defaults_applied;

    bool strict = true;
    if (root.IsMap() && root["strict"]) strict = root["strict"].as<bool>();
    Section top(root, "", strict, defaults);
    cfg.strict = top.get("strict", true);

    if (top.has("ipd")) cfg.ipd = top.value<std::string>("ipd");
    if (top.has("mortality")) cfg.mortality = top.value<std::string>("mortality");
    if (top.has("treatments")) cfg.treatments = top.value<std::vector<std::string>>("treatments");
    cfg.model = top.get<std::string>("model", "tri-loglogistic");
    const auto components = top.optional<int>("components");
    cfg.components = components;
    cfg.seed = top.get<std::uint64_t>("seed", 0);
    cfg.lenient = top.get("lenient", false);
    cfg.allow_unanchored = top.get("allow_unanchored", false);

    {
        auto c = top.child("coupling");
        cfg.proportional_first = c.get("proportional_first", true);
        const auto shared = c.optional<bool>("shared_third");
        c.finish();
        if (cfg.model == "tri-loglogistic") {
            cfg.shared_third = shared.value_or(true);
            if (!shared) defaults->push_back("coupling.shared_third = true (default)");
        } else {
            if (shared && *shared)
                throw ValidationError(fmt::format("config: coupling.shared_third needs a 3-component model, not {}", cfg.model));
            cfg.shared_third = false;
        }
    }

    const std::set<std::string> known_models{"bi-weibull", "bi-loglogistic", "tri-loglogistic", "mspline"};
    if (!known_models.count(cfg.model))
        throw ValidationError(fmt::format("config: unknown model '{}' (bi-weibull, bi-loglogistic, tri-loglogistic, mspline)",
                                          cfg.model));
    if (components) {
        const int expected = cfg.model == "tri-loglogistic" ? 3 : cfg.model == "mspline" ? 0 : 2;
        if (expected == 0)
            throw ValidationError("config: 'components' does not apply to the mspline model");
        if (*components != expected)
            throw ValidationError(fmt::format("config: model {} has {} components, config says {}", cfg.model, expected,
                                              *components));
    }

    cfg.mcmc = parse_mcmc(top.child("mcmc"), inference::McmcConfig{});
    cfg.mcmc.seed = cfg.seed;

    {
        auto p = top.child("projection");
        cfg.mortality_options.projection_start_year = p.get("start_year", 2023);
        cfg.mortality_options.projection_draws = p.get("draws", 0);
        cfg.mortality_options.synthetic_n = p.get("synthetic_n", 10000);
        cfg.mortality_options.max_draws = p.get("max_draws", 1000);
        cfg.mortality_options.mcmc = parse_mcmc(p.child("mcmc"), cfg.mortality_options.mcmc);
        cfg.mortality_options.mcmc.seed = cfg.seed;
        p.finish();
        if (cfg.mortality_options.synthetic_n < 1) throw ValidationError("config: projection.synthetic_n must be >= 1");
        if (cfg.mortality_options.projection_draws < 0) throw ValidationError("config: projection.draws must be >= 0");
        if (cfg.mortality_options.max_draws < 1) throw ValidationError("config: projection.max_draws must be >= 1");
    }

    {
        auto e = top.child("extrapolation");
        cfg.extrapolation.step = e.get("step", 0.01);
        cfg.extrapolation.epsilon = e.get("epsilon", 1e-4);
        cfg.extrapolation.hard_cap = e.optional<double>("hard_cap");
        cfg.extrapolation.mst_draws = e.get("mst_draws", 1000);
        e.finish();
        if (!(cfg.extrapolation.step > 0)) throw ValidationError("config: extrapolation.step must be > 0");
        if (!(cfg.extrapolation.epsilon > 0 && cfg.extrapolation.epsilon < 1))
            throw ValidationError("config: extrapolation.epsilon must lie in (0, 1)");
        if (cfg.extrapolation.mst_draws < 2) throw ValidationError("config: extrapolation.mst_draws must be >= 2");
    }

    {
        const auto mode = top.get<std::string>("covariance", "control_variance");
        if (mode == "control_variance") cfg.covariance = mst::CovarianceMode::control_variance;
        else if (mode == "empirical") cfg.covariance = mst::CovarianceMode::empirical;
        else throw ValidationError(fmt::format("config: unknown covariance mode '{}'", mode));
    }

    {
        auto n = top.child("nma");
        cfg.nma.prior_d_sd = n.get("prior_d_sd", 10.0);
        cfg.nma.prior_tau_sd = n.get("prior_tau_sd", 1.0);
        cfg.nma.fixed_tau = n.optional<double>("fixed_tau");
        cfg.nma.jitter = n.get("jitter", false);
        n.finish();
        if (!(cfg.nma.prior_d_sd > 0) || !(cfg.nma.prior_tau_sd > 0))
            throw ValidationError("config: nma prior scales must be > 0");
        if (cfg.nma.fixed_tau && !(*cfg.nma.fixed_tau >= 0)) throw ValidationError("config: nma.fixed_tau must be >= 0");
    }

    {
        auto d = top.child("decision");
        // Decision parameters may also sit at the top level.
        auto pick = [&](const std::string& key, auto fallback) {
            using T = decltype(fallback);
            if (top.has(key)) {
                if (d.has(key)) throw ValidationError(fmt::format("config: '{}' given twice", key));
                return top.value<T>(key);
            }
            return d.get(key, fallback);
        };
        cfg.decision.mcid_years = pick("mcid_years", 0.5);
        cfg.decision.grade_cutoff = pick("grade_cutoff", 0.975);
        cfg.decision.lambda = pick("lambda", std::string("0:50000:100"));
        cfg.decision.reference = d.optional<std::string>("reference");
        cfg.decision.cost_seed = d.get<std::uint64_t>("cost_seed", cfg.seed);
        d.finish();
        if (!(cfg.decision.mcid_years >= 0)) throw ValidationError("config: mcid_years must be >= 0");
        if (!(cfg.decision.grade_cutoff > 0.5 && cfg.decision.grade_cutoff <= 1))
            throw ValidationError("config: grade_cutoff must lie in (0.5, 1]");
        decision::parse_lambda_grid(cfg.decision.lambda);
    }

    cfg.weights = parse_weight_map(top.raw("weights"));

    if (auto rob = top.raw("rob"); rob) {
        if (!rob.IsMap()) throw ValidationError("config: 'rob' must map study ids to low/medium/high");
    }

    // `study: {S1: {...}}`; study order follows the document.
    if (auto studies = top.raw("study"); studies) {
        if (!studies.IsMap()) throw ValidationError("config: 'study' must map study ids to sections");
        for (const auto& kv : studies) {
            const auto id = kv.first.as<std::string>();
            auto meta = parse_study(id, Section(kv.second, "study." + id, strict, nullptr));
            cfg.study_order.push_back(id);
            cfg.studies.emplace(id, std::move(meta));
        }
    }
    if (auto rob = top.raw("rob"); rob) {
        for (const auto& kv : rob) {
            const auto id = kv.first.as<std::string>();
            auto it = cfg.studies.find(id);
            if (it == cfg.studies.end()) throw ReferenceError(fmt::format("config: rob given for unknown study '{}'", id));
            it->second.rob = kv.second.as<std::string>();
            nma::rob_weight(it->second.rob);
        }
    }
    for (const auto& [id, w] : cfg.weights)
        if (!cfg.studies.empty() && !cfg.studies.count(id))
            throw ReferenceError(fmt::format("config: weight given for unknown study '{}'", id));
    for (const auto& id : cfg.study_order)
        if (!cfg.weights.count(id) && !cfg.studies.at(id).weight && cfg.studies.at(id).rob == "low")
            defaults->push_back(fmt::format("weight[{}] = 1 (default)", id));

    cfg.costs = parse_cost_section(top.raw("costs"), strict);

    top.finish();

    if (!cfg.treatments.empty()) {
        std::set<std::string> tset(cfg.treatments.begin(), cfg.treatments.end());
        if (tset.size() != cfg.treatments.size()) throw ValidationError("config: duplicate treatment");
        for (const auto& id : cfg.study_order)
            for (const auto& arm : cfg.studies.at(id).arms)
                if (!tset.count(arm))
                    throw ReferenceError(fmt::format("config: study {} arm '{}' is not in the treatment list", id, arm));
        for (const auto& c : cfg.costs)
            if (!tset.count(c.treatment))
                throw ReferenceError(fmt::format("config: cost given for unknown treatment '{}'", c.treatment));
        if (cfg.decision.reference && !tset.count(*cfg.decision.reference))
            throw ReferenceError(fmt::format("config: decision.reference '{}' is not a treatment", *cfg.decision.reference));
    }
    cfg.mcmc.validate();
    return cfg;
}

RunConfig parse_run_config(const fs::path& path) {
    return parse_run_config_text(read_file(path), path.has_parent_path() ? path.parent_path() : fs::path("."));
}

std::string format_run_config(const RunConfig& c) {
    YAML::Emitter e;
    e.SetDoublePrecision(17);
    e << YAML::BeginMap;
    if (!c.ipd.empty()) e << YAML::Key << "ipd" << YAML::Value << c.ipd.string();
    if (!c.mortality.empty()) e << YAML::Key << "mortality" << YAML::Value << c.mortality.string();
    if (!c.treatments.empty()) e << YAML::Key << "treatments" << YAML::Value << YAML::Flow << c.treatments;
    e << YAML::Key << "model" << YAML::Value << c.model;
    if (c.components) e << YAML::Key << "components" << YAML::Value << *c.components;
    e << YAML::Key << "seed" << YAML::Value << c.seed;
    e << YAML::Key << "strict" << YAML::Value << c.strict;
    e << YAML::Key << "lenient" << YAML::Value << c.lenient;
    e << YAML::Key << "allow_unanchored" << YAML::Value << c.allow_unanchored;
    e << YAML::Key << "coupling" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "proportional_first" << YAML::Value << c.proportional_first;
    if (c.model == "tri-loglogistic") e << YAML::Key << "shared_third" << YAML::Value << c.shared_third;
    e << YAML::EndMap;
    auto mcmc = [&](const inference::McmcConfig& m) {
        e << YAML::BeginMap;
        e << YAML::Key << "chains" << YAML::Value << m.chains;
        e << YAML::Key << "warmup" << YAML::Value << m.warmup;
        e << YAML::Key << "samples" << YAML::Value << m.samples;
        e << YAML::Key << "thin" << YAML::Value << m.thin;
        if (m.target_accept) e << YAML::Key << "target_accept" << YAML::Value << *m.target_accept;
        e << YAML::EndMap;
    };
    e << YAML::Key << "mcmc" << YAML::Value;
    mcmc(c.mcmc);
    e << YAML::Key << "projection" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "start_year" << YAML::Value << c.mortality_options.projection_start_year;
    e << YAML::Key << "draws" << YAML::Value << c.mortality_options.projection_draws;
    e << YAML::Key << "synthetic_n" << YAML::Value << c.mortality_options.synthetic_n;
    e << YAML::Key << "max_draws" << YAML::Value << c.mortality_options.max_draws;
    e << YAML::Key << "mcmc" << YAML::Value;
    mcmc(c.mortality_options.mcmc);
    e << YAML::EndMap;
    e << YAML::Key << "extrapolation" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "step" << YAML::Value << c.extrapolation.step;
    e << YAML::Key << "epsilon" << YAML::Value << c.extrapolation.epsilon;
    if (c.extrapolation.hard_cap) e << YAML::Key << "hard_cap" << YAML::Value << *c.extrapolation.hard_cap;
    e << YAML::Key << "mst_draws" << YAML::Value << c.extrapolation.mst_draws;
    e << YAML::EndMap;
    e << YAML::Key << "covariance" << YAML::Value
      << (c.covariance == mst::CovarianceMode::empirical ? "empirical" : "control_variance");
    e << YAML::Key << "nma" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "prior_d_sd" << YAML::Value << c.nma.prior_d_sd;
    e << YAML::Key << "prior_tau_sd" << YAML::Value << c.nma.prior_tau_sd;
    if (c.nma.fixed_tau) e << YAML::Key << "fixed_tau" << YAML::Value << *c.nma.fixed_tau;
    e << YAML::Key << "jitter" << YAML::Value << c.nma.jitter;
    e << YAML::EndMap;
    e << YAML::Key << "decision" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "mcid_years" << YAML::Value << c.decision.mcid_years;
    e << YAML::Key << "grade_cutoff" << YAML::Value << c.decision.grade_cutoff;
    e << YAML::Key << "lambda" << YAML::Value << c.decision.lambda;
    if (c.decision.reference) e << YAML::Key << "reference" << YAML::Value << *c.decision.reference;
    e << YAML::Key << "cost_seed" << YAML::Value << c.decision.cost_seed;
    e << YAML::EndMap;
    if (!c.weights.empty()) {
        e << YAML::Key << "weights" << YAML::Value << YAML::BeginMap;
        for (const auto& [id, w] : c.weights) e << YAML::Key << id << YAML::Value << w;
        e << YAML::EndMap;
    }
    if (!c.study_order.empty()) {
        e << YAML::Key << "study" << YAML::Value << YAML::BeginMap;
        for (const auto& id : c.study_order) {
            const auto& s = c.studies.at(id);
            e << YAML::Key << id << YAML::Value << YAML::BeginMap;
            e << YAML::Key << "arms" << YAML::Value << YAML::Flow << s.arms;
            e << YAML::Key << "countries" << YAML::Value << YAML::Flow << YAML::BeginMap;
            for (const auto& [k, w] : s.country_weights) e << YAML::Key << k << YAML::Value << w;
            e << YAML::EndMap;
            e << YAML::Key << "ages" << YAML::Value << YAML::Flow << YAML::BeginMap;
            for (const auto& [a, w] : s.age_distribution) e << YAML::Key << a << YAML::Value << w;
            e << YAML::EndMap;
            e << YAML::Key << "female" << YAML::Value << s.female_proportion;
            e << YAML::Key << "rob" << YAML::Value << s.rob;
            if (s.weight) e << YAML::Key << "weight" << YAML::Value << *s.weight;
            e << YAML::EndMap;
        }
        e << YAML::EndMap;
    }
    if (!c.costs.empty()) {
        e << YAML::Key << "costs" << YAML::Value << YAML::BeginMap;
        for (const auto& cs : c.costs) {
            e << YAML::Key << cs.treatment << YAML::Value << YAML::Flow << YAML::BeginMap;
            e << YAML::Key << "mean" << YAML::Value << cs.mean_cost << YAML::Key << "cv" << YAML::Value << cs.cv;
            e << YAML::EndMap;
        }
        e << YAML::EndMap;
    }
    e << YAML::EndMap;
    return std::string(e.c_str()) + "\n";
}

std::map<std::string, double> parse_weights_text(const std::string& text) {
    YAML::Node root = load_yaml(text);
    if (!root || !root.IsMap()) throw ValidationError("weights file: expected a mapping with 'weights' and/or 'rob'");
    std::map<std::string, double> out;
    for (const auto& kv : root) {
        const auto key = kv.first.as<std::string>();
        if (key == "weights") {
            for (const auto& [id, w] : parse_weight_map(kv.second)) out[id] = w;
        } else if (key == "rob") {
            for (const auto& r : kv.second) {
                const auto id = r.first.as<std::string>();
                if (!out.count(id)) out[id] = nma::rob_weight(r.second.as<std::string>());
            }
        } else {
            throw ValidationError(fmt::format("weights file: unknown key '{}'", key));
        }
    }
    return out;
}

std::map<std::string, double> parse_weights(const fs::path& path) { return parse_weights_text(read_file(path)); }

std::vector<decision::CostSpec> parse_costs_text(const std::string& text) {
    YAML::Node root = load_yaml(text);
    if (!root || !root.IsMap() || !root["costs"]) throw ValidationError("costs file: expected a 'costs' section");
    return parse_cost_section(root["costs"], true);
}

std::vector<decision::CostSpec> parse_costs(const fs::path& path) { return parse_costs_text(read_file(path)); }

// ---- draws, diagnostics, contrasts ------------------------------------------------

void write_draws(const fs::path& path, const inference::PosteriorDraws& draws) {
    std::string out = "chain,iteration,param,value\n";
    for (int c = 0; c < draws.chains(); ++c)
        for (int i = 0; i < draws.iterations(); ++i)
            for (std::size_t p = 0; p < draws.parameters(); ++p)
                out += fmt::format("{},{},{},{}\n", c + 1, i + 1, draws.names()[p], format_double(draws.at(c, i, p)));
    write_file(path, out);
}

inference::PosteriorDraws read_draws(const fs::path& path) {
    const auto lines = lines_of(read_file(path));
    if (lines.empty()) throw ParseError("draws: empty file", 1);
    check_header(lines[0], {"chain", "iteration", "param", "value"}, "draws");
    struct Row {
        int chain, iteration;
        std::size_t param;
        double value;
    };
    std::vector<std::string> names;
    std::map<std::string, std::size_t> index;
    std::vector<Row> rows;
    int chains = 0, iterations = 0;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        auto f = split_csv_line(lines[i]);
        // Parameter names such as delta[S1,B] may contain commas.
        while (f.size() > 4) {
            f[2] += "," + f[3];
            f.erase(f.begin() + 3);
        }
        auto c = f.size() == 4 ? to_long(f[0]) : std::nullopt;
        auto it = f.size() == 4 ? to_long(f[1]) : std::nullopt;
        auto v = f.size() == 4 ? to_double(f[3]) : std::nullopt;
        if (!c || !it || !v || *c < 1 || *it < 1) throw ParseError("draws: malformed row", i + 1);
        auto [pos, inserted] = index.try_emplace(f[2], names.size());
        if (inserted) names.push_back(f[2]);
        rows.push_back({static_cast<int>(*c) - 1, static_cast<int>(*it) - 1, pos->second, *v});
        chains = std::max(chains, static_cast<int>(*c));
        iterations = std::max(iterations, static_cast<int>(*it));
    }
    if (rows.size() != static_cast<std::size_t>(chains) * iterations * names.size())
        throw ValidationError(fmt::format("draws '{}': expected a complete chain x iteration x parameter grid", path.string()));
    inference::PosteriorDraws draws(names, chains, iterations);
    for (const auto& r : rows) draws.at(r.chain, r.iteration, r.param) = r.value;
    return draws;
}

void write_diagnostics(const fs::path& path, const inference::PosteriorDraws& draws, bool include_timing) {
    nlohmann::ordered_json j;
    j["chains"] = draws.chains();
    j["iterations"] = draws.iterations();
    if (include_timing) {
        j["runtime_seconds"] = draws.runtime_seconds;
        j["iterations_per_second"] = draws.iterations_per_second;
    }
    j["acceptance_rates"] = draws.acceptance_rates;
    j["max_rhat"] = inference::max_rhat(draws);
    auto& params = j["parameters"] = nlohmann::ordered_json::array();
    for (const auto& s : draws.summaries()) {
        nlohmann::ordered_json p;
        p["name"] = s.name;
        p["mean"] = s.mean;
        p["sd"] = s.sd;
        p["q2.5"] = s.q025;
        p["q50"] = s.q50;
        p["q97.5"] = s.q975;
        p["rhat"] = s.rhat ? nlohmann::ordered_json(*s.rhat) : nlohmann::ordered_json(nullptr);
        p["ess"] = s.ess ? nlohmann::ordered_json(*s.ess) : nlohmann::ordered_json(nullptr);
        params.push_back(std::move(p));
    }
    write_file(path, j.dump(2) + "\n");
}

void write_contrasts(const fs::path& dir, const std::vector<mst::ContrastData>& data) {
    std::string summary = "study,arm,treatment,lyg_mean,lyg_var\n";
    std::string cov = "study,row,col,value\n";
    for (const auto& c : data) {
        summary += fmt::format("{},1,{},,\n", c.study, c.treatments[0]);
        for (std::size_t k = 0; k < c.dimension(); ++k) {
            const auto i = static_cast<Eigen::Index>(k);
            summary += fmt::format("{},{},{},{},{}\n", c.study, k + 2, c.treatments[k + 1], format_double(c.y(i)),
                                   format_double(c.covariance(i, i)));
            for (std::size_t l = 0; l < c.dimension(); ++l)
                cov += fmt::format("{},{},{},{}\n", c.study, k + 1, l + 1,
                                   format_double(c.covariance(i, static_cast<Eigen::Index>(l))));
        }
    }
    write_file(dir / "contrasts.csv", summary);
    write_file(dir / "covariance.csv", cov);
}

std::vector<mst::ContrastData> read_contrasts(const fs::path& dir) {
    const auto lines = lines_of(read_file(dir / "contrasts.csv"));
    if (lines.empty()) throw ParseError("contrasts: empty file", 1);
    check_header(lines[0], {"study", "arm", "treatment", "lyg_mean", "lyg_var"}, "contrasts");
    std::vector<mst::ContrastData> out;
    std::map<std::string, std::size_t> index;
    std::map<std::string, std::vector<double>> means;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        auto f = split_csv_line(lines[i]);
        if (f.size() != 5) throw ParseError("contrasts: expected 5 fields", i + 1);
        auto arm = to_long(f[1]);
        if (!arm || *arm < 1) throw ParseError("contrasts: bad arm index", i + 1);
        auto [pos, inserted] = index.try_emplace(f[0], out.size());
        if (inserted) {
            out.emplace_back();
            out.back().study = f[0];
        }
        auto& c = out[pos->second];
        if (static_cast<std::size_t>(*arm) != c.treatments.size() + 1)
            throw ParseError(fmt::format("contrasts: arms of study {} must be listed in order 1, 2, ...", f[0]), i + 1);
        c.treatments.push_back(f[2]);
        if (*arm > 1) {
            auto m = to_double(f[3]);
            if (!m) throw ParseError("contrasts: bad lyg_mean", i + 1);
            means[f[0]].push_back(*m);
        }
    }
    for (auto& c : out) {
        const auto& m = means[c.study];
        if (c.treatments.size() < 2) throw ValidationError(fmt::format("contrasts: study {} has a single arm", c.study));
        c.y = Eigen::Map<const Eigen::VectorXd>(m.data(), static_cast<Eigen::Index>(m.size()));
        c.covariance = Eigen::MatrixXd::Constant(c.y.size(), c.y.size(), std::nan(""));
    }

    const auto cov_lines = lines_of(read_file(dir / "covariance.csv"));
    if (cov_lines.empty()) throw ParseError("covariance: empty file", 1);
    check_header(cov_lines[0], {"study", "row", "col", "value"}, "covariance");
    for (std::size_t i = 1; i < cov_lines.size(); ++i) {
        if (trim(cov_lines[i]).empty()) continue;
        auto f = split_csv_line(cov_lines[i]);
        auto r = f.size() == 4 ? to_long(f[1]) : std::nullopt;
        auto col = f.size() == 4 ? to_long(f[2]) : std::nullopt;
        auto v = f.size() == 4 ? to_double(f[3]) : std::nullopt;
        if (!r || !col || !v) throw ParseError("covariance: malformed row", i + 1);
        auto it = index.find(f[0]);
        if (it == index.end()) throw ReferenceError(fmt::format("covariance: unknown study '{}'", f[0]));
        auto& c = out[it->second];
        if (*r < 1 || *col < 1 || *r > c.y.size() || *col > c.y.size())
            throw ParseError("covariance: index out of range", i + 1);
        c.covariance(*r - 1, *col - 1) = *v;
    }
    for (auto& c : out) {
        if (!c.covariance.allFinite())
            throw ValidationError(fmt::format("covariance: study {} has an incomplete block", c.study));
        c.degenerate = c.covariance.isZero(0.0);
        c.provenance = (dir / "contrasts.csv").string();
    }
    return out;
}

} // namespace survnma::data_io
