#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace survnma::survmodels {

/// One (time, event) observation; event = false means right-censored at `time`.
struct Observation {
    double time = 0;
    bool event = false;
};

enum class Family { weibull, loglogistic };

std::string to_string(Family f);
Family family_from_string(const std::string& s);

/// Shape a > 0, scale b > 0 (time units).
/// Weibull: h = (a/b)(t/b)^(a-1), H = (t/b)^a.
/// Log-logistic: h = (a/b)(t/b)^(a-1) / (1 + (t/b)^a), H = log(1 + (t/b)^a).
struct HazardComponent {
    Family family = Family::weibull;
    double shape = 1;
    double scale = 1;

    double hazard(double t) const;
    double cumulative_hazard(double t) const;
    double survival(double t) const { return std::exp(-cumulative_hazard(t)); }
};

double component_hazard(const HazardComponent& c, double t);

enum class Group { disease, population };

struct Coupling {
    bool first_proportional = true; // disease component 1 = C x population component 1
    bool third_shared = false;      // disease component 3 = population component 3
};

/// Two poly-hazard models (disease arm and matched external population) with coupled components.
class JointPolyHazard {
public:
    /// `disease` entries that are coupled are ignored and replaced by their population counterpart.
    JointPolyHazard(std::vector<HazardComponent> disease, std::vector<HazardComponent> population, double C,
                    Coupling coupling);

    std::size_t components() const { return population_.size(); }
    const Coupling& coupling() const { return coupling_; }
    double proportionality() const { return C_; }
    const HazardComponent& population_component(std::size_t m) const { return population_[m]; }
    const HazardComponent& disease_component(std::size_t m) const { return disease_[m]; }

    /// Hazard of component m in group g, coupling applied.
    double component_hazard(Group g, std::size_t m, double t) const;
    double component_cumulative_hazard(Group g, std::size_t m, double t) const;

    double hazard(Group g, double t) const;
    double cumulative_hazard(Group g, double t) const;
    double survival(Group g, double t) const { return std::exp(-cumulative_hazard(g, t)); }

private:
    std::vector<HazardComponent> disease_;
    std::vector<HazardComponent> population_;
    double C_;
    Coupling coupling_;
};

double poly_hazard(const JointPolyHazard& model, Group g, double t);
double survival(const JointPolyHazard& model, Group g, double t);
double survival(const HazardComponent& c, double t);

/// Anything with hazard(t) and cumulative_hazard(t).
template <class M>
concept HazardModel = requires(const M& m, double t) {
    { m.hazard(t) } -> std::convertible_to<double>;
    { m.cumulative_hazard(t) } -> std::convertible_to<double>;
};

/// Sum over observations of log S(t) + c log h(t). Returns -inf rather than NaN
/// when the parameters are not usable.
template <HazardModel M>
double loglik_censored(const M& model, std::span<const Observation> data) {
    double total = 0;
    for (const auto& o : data) {
        total -= model.cumulative_hazard(o.time);
        if (o.event) total += std::log(model.hazard(o.time));
    }
    return std::isnan(total) ? -std::numeric_limits<double>::infinity() : total;
}

/// One group of a joint model viewed as a plain hazard model.
struct GroupView {
    const JointPolyHazard& model;
    Group group;
    double hazard(double t) const { return model.hazard(group, t); }
    double cumulative_hazard(double t) const { return model.cumulative_hazard(group, t); }
};

double loglik_censored(const JointPolyHazard& model, Group g, std::span<const Observation> data);

/// log L_d + log L_p. An empty population sample contributes nothing.
double joint_loglik(const JointPolyHazard& model, std::span<const Observation> disease,
                    std::span<const Observation> population);

/// Layout of the unconstrained parameter vector of a joint poly-hazard model:
/// log shape / log scale for every population component, then for every
/// uncoupled disease component, then log C when the first components are proportional.
class PolyHazardLayout {
public:
    PolyHazardLayout(std::size_t components, Family family, Coupling coupling);

    static PolyHazardLayout from_model_name(const std::string& name, Coupling coupling);

    std::size_t components() const { return components_; }
    Family family() const { return family_; }
    const Coupling& coupling() const { return coupling_; }
    std::size_t size() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }
    bool disease_free(std::size_t m) const;

    JointPolyHazard build(std::span<const double> unconstrained) const;

    /// True when population scales are strictly increasing (label-switching constraint).
    bool ordered(std::span<const double> unconstrained) const;

    /// Normal(0, 2^2) on log shapes / log scales, Normal(0, 1) on log C.
    double log_prior(std::span<const double> unconstrained) const;

    /// Analytic gradient of joint_loglik with respect to the unconstrained vector.
    std::vector<double> joint_loglik_gradient(std::span<const double> unconstrained,
                                              std::span<const Observation> disease,
                                              std::span<const Observation> population) const;

private:
    std::size_t components_;
    Family family_;
    Coupling coupling_;
    std::vector<std::string> names_;
    std::vector<std::size_t> disease_offset_; // index into the vector, or npos when coupled
    std::size_t log_c_index_;
};

} // namespace survnma::survmodels
