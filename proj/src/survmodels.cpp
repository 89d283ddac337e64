#include "survnma/survmodels.hpp"

#include "survnma/common.hpp"

#include <fmt/format.h>

namespace survnma::survmodels {

namespace {
constexpr std::size_t npos = static_cast<std::size_t>(-1);
constexpr double log_shape_sd = 2.0;
constexpr double log_c_sd = 1.0;
} // namespace

std::string to_string(Family f) { return f == Family::weibull ? "weibull" : "loglogistic"; }

Family family_from_string(const std::string& s) {
    if (s == "weibull") return Family::weibull;
    if (s == "loglogistic" || s == "log-logistic") return Family::loglogistic;
    throw ValidationError("unknown hazard family '" + s + "'");
}

double HazardComponent::hazard(double t) const {
    double base = (shape / scale) * std::pow(t / scale, shape - 1.0);
    if (family == Family::weibull) return base;
    return base / (1.0 + std::pow(t / scale, shape));
}

double HazardComponent::cumulative_hazard(double t) const {
    if (t <= 0) return 0.0;
    double q = std::pow(t / scale, shape);
    return family == Family::weibull ? q : std::log1p(q);
}

double component_hazard(const HazardComponent& c, double t) { return c.hazard(t); }

JointPolyHazard::JointPolyHazard(std::vector<HazardComponent> disease, std::vector<HazardComponent> population,
                                 double C, Coupling coupling)
    : disease_(std::move(disease)), population_(std::move(population)), C_(C), coupling_(coupling) {
    if (population_.size() != disease_.size() || population_.empty())
        throw ValidationError("joint poly-hazard: disease and population need the same nonzero component count");
    if (coupling_.third_shared && population_.size() != 3)
        throw ValidationError("joint poly-hazard: a shared third component needs exactly 3 components");
    if (coupling_.first_proportional) disease_[0] = population_[0];
    if (coupling_.third_shared) disease_[2] = population_[2];
}

double JointPolyHazard::component_hazard(Group g, std::size_t m, double t) const {
    if (g == Group::population) return population_[m].hazard(t);
    if (m == 0 && coupling_.first_proportional) return C_ * population_[0].hazard(t);
    return disease_[m].hazard(t);
}

double JointPolyHazard::component_cumulative_hazard(Group g, std::size_t m, double t) const {
    if (g == Group::population) return population_[m].cumulative_hazard(t);
    if (m == 0 && coupling_.first_proportional) return C_ * population_[0].cumulative_hazard(t);
    return disease_[m].cumulative_hazard(t);
}

double JointPolyHazard::hazard(Group g, double t) const {
    double h = 0;
    for (std::size_t m = 0; m < components(); ++m) h += component_hazard(g, m, t);
    return h;
}

double JointPolyHazard::cumulative_hazard(Group g, double t) const {
    double h = 0;
    for (std::size_t m = 0; m < components(); ++m) h += component_cumulative_hazard(g, m, t);
    return h;
}

double poly_hazard(const JointPolyHazard& model, Group g, double t) { return model.hazard(g, t); }
double survival(const JointPolyHazard& model, Group g, double t) { return model.survival(g, t); }
double survival(const HazardComponent& c, double t) { return c.survival(t); }

double loglik_censored(const JointPolyHazard& model, Group g, std::span<const Observation> data) {
    return loglik_censored(GroupView{model, g}, data);
}

double joint_loglik(const JointPolyHazard& model, std::span<const Observation> disease,
                    std::span<const Observation> population) {
    return loglik_censored(model, Group::disease, disease) + loglik_censored(model, Group::population, population);
}

PolyHazardLayout::PolyHazardLayout(std::size_t components, Family family, Coupling coupling)
    : components_(components), family_(family), coupling_(coupling), disease_offset_(components, npos),
      log_c_index_(npos) {
    if (components < 1) throw ValidationError("poly-hazard: need at least one component");
    if (coupling.third_shared && components != 3)
        throw ValidationError(fmt::format("poly-hazard: shared third component requires 3 components, got {}", components));
    for (std::size_t m = 0; m < components; ++m) {
        names_.push_back(fmt::format("pop{}.log_shape", m + 1));
        names_.push_back(fmt::format("pop{}.log_scale", m + 1));
    }
    for (std::size_t m = 0; m < components; ++m) {
        if (!disease_free(m)) continue;
        disease_offset_[m] = names_.size();
        names_.push_back(fmt::format("dis{}.log_shape", m + 1));
        names_.push_back(fmt::format("dis{}.log_scale", m + 1));
    }
    if (coupling.first_proportional) {
        log_c_index_ = names_.size();
        names_.push_back("log_C");
    }
}

PolyHazardLayout PolyHazardLayout::from_model_name(const std::string& name, Coupling coupling) {
    if (name == "bi-weibull") return {2, Family::weibull, coupling};
    if (name == "bi-loglogistic") return {2, Family::loglogistic, coupling};
    if (name == "tri-loglogistic") return {3, Family::loglogistic, coupling};
    throw ValidationError("unknown poly-hazard model '" + name + "'");
}

bool PolyHazardLayout::disease_free(std::size_t m) const {
    if (m == 0 && coupling_.first_proportional) return false;
    if (m == 2 && coupling_.third_shared) return false;
    return true;
}

JointPolyHazard PolyHazardLayout::build(std::span<const double> x) const {
    std::vector<HazardComponent> pop, dis;
    for (std::size_t m = 0; m < components_; ++m) pop.push_back({family_, std::exp(x[2 * m]), std::exp(x[2 * m + 1])});
    for (std::size_t m = 0; m < components_; ++m) {
        if (disease_offset_[m] == npos) dis.push_back(pop[m]);
        else dis.push_back({family_, std::exp(x[disease_offset_[m]]), std::exp(x[disease_offset_[m] + 1])});
    }
    double C = log_c_index_ == npos ? 1.0 : std::exp(x[log_c_index_]);
    return {std::move(dis), std::move(pop), C, coupling_};
}

bool PolyHazardLayout::ordered(std::span<const double> x) const {
    for (std::size_t m = 1; m < components_; ++m)
        if (!(x[2 * m + 1] > x[2 * m - 1])) return false;
    return true;
}

double PolyHazardLayout::log_prior(std::span<const double> x) const {
    double lp = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double sd = i == log_c_index_ ? log_c_sd : log_shape_sd;
        lp -= 0.5 * (x[i] / sd) * (x[i] / sd);
    }
    return lp;
}

namespace {

struct ComponentDerivatives {
    double h, H;
    double dh_dlog_shape, dh_dlog_scale;
    double dH_dlog_shape, dH_dlog_scale;
};

ComponentDerivatives derivatives(const HazardComponent& c, double t) {
    const double a = c.shape;
    const double log_z = std::log(t / c.scale);
    const double q = std::exp(a * log_z);
    ComponentDerivatives d{};
    d.h = c.hazard(t);
    if (c.family == Family::weibull) {
        d.H = q;
        d.dh_dlog_shape = d.h * (1.0 + a * log_z);
        d.dh_dlog_scale = -a * d.h;
        d.dH_dlog_shape = a * q * log_z;
        d.dH_dlog_scale = -a * q;
    } else {
        d.H = std::log1p(q);
        d.dh_dlog_shape = d.h * (1.0 + a * log_z / (1.0 + q));
        d.dh_dlog_scale = -a * d.h / (1.0 + q);
        d.dH_dlog_shape = a * q * log_z / (1.0 + q);
        d.dH_dlog_scale = -a * q / (1.0 + q);
    }
    return d;
}

} // namespace

std::vector<double> PolyHazardLayout::joint_loglik_gradient(std::span<const double> x,
                                                            std::span<const Observation> disease,
                                                            std::span<const Observation> population) const {
    const JointPolyHazard model = build(x);
    std::vector<double> grad(size(), 0.0);
    std::vector<ComponentDerivatives> pd(components_), dd(components_);

    auto accumulate = [&](Group g, const Observation& o) {
        double h_total = 0;
        for (std::size_t m = 0; m < components_; ++m) {
            pd[m] = derivatives(model.population_component(m), o.time);
            if (g == Group::disease && disease_offset_[m] != npos) dd[m] = derivatives(model.disease_component(m), o.time);
        }
        h_total = model.hazard(g, o.time);
        const double w = o.event ? 1.0 / h_total : 0.0;
        for (std::size_t m = 0; m < components_; ++m) {
            if (g == Group::population) {
                grad[2 * m] += w * pd[m].dh_dlog_shape - pd[m].dH_dlog_shape;
                grad[2 * m + 1] += w * pd[m].dh_dlog_scale - pd[m].dH_dlog_scale;
                continue;
            }
            if (disease_offset_[m] != npos) {
                grad[disease_offset_[m]] += w * dd[m].dh_dlog_shape - dd[m].dH_dlog_shape;
                grad[disease_offset_[m] + 1] += w * dd[m].dh_dlog_scale - dd[m].dH_dlog_scale;
            } else if (m == 0) {
                const double C = model.proportionality();
                grad[0] += C * (w * pd[0].dh_dlog_shape - pd[0].dH_dlog_shape);
                grad[1] += C * (w * pd[0].dh_dlog_scale - pd[0].dH_dlog_scale);
                grad[log_c_index_] += C * (w * pd[0].h - pd[0].H);
            } else {
                grad[2 * m] += w * pd[m].dh_dlog_shape - pd[m].dH_dlog_shape;
                grad[2 * m + 1] += w * pd[m].dh_dlog_scale - pd[m].dH_dlog_scale;
            }
        }
    };
    for (const auto& o : disease) accumulate(Group::disease, o);
    for (const auto& o : population) accumulate(Group::population, o);
    return grad;
}

} // namespace survnma::survmodels
