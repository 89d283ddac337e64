#pragma once

#include "survnma/inference.hpp"
#include "survnma/mspline.hpp"
#include "survnma/survmodels.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace survnma::survfit {

using survmodels::Observation;

/// Observations with cached log-times for repeated likelihood evaluation.
struct PreparedData {
    std::vector<double> time;
    std::vector<double> log_time;
    std::vector<char> event;

    explicit PreparedData(std::span<const Observation> data);
    std::size_t size() const { return time.size(); }
};

/// Same value as survmodels::loglik_censored on a group of the joint model, evaluated
/// with one exp per component and observation.
double fast_group_loglik(const survmodels::JointPolyHazard& model, survmodels::Group g, const PreparedData& data);

struct PolyHazardFit {
    survmodels::PolyHazardLayout layout;
    inference::PosteriorDraws draws; // unconstrained coordinates, layout.names()

    survmodels::JointPolyHazard model(std::size_t draw) const;
};

/// Posterior of a joint poly-hazard model given disease-arm data and the synthetic external
/// sample. An empty population sample is accepted only with `allow_unanchored`.
PolyHazardFit fit_poly_hazard(const survmodels::PolyHazardLayout& layout, std::span<const Observation> disease,
                              std::span<const Observation> population, const inference::McmcConfig& mcmc,
                              bool allow_unanchored = false);

/// Log posterior (up to a constant) used by fit_poly_hazard; exposed for testing.
double poly_hazard_log_posterior(const survmodels::PolyHazardLayout& layout, std::span<const double> x,
                                 const PreparedData& disease, const PreparedData& population);

struct MSplineFit {
    survmodels::MSplineBasis basis;
    survmodels::PiecewiseConstantHazard background;
    inference::PosteriorDraws draws; // eta, p[1..n], sigma_p

    survmodels::MSplineHazard model(std::size_t draw) const;
};

/// Excess-hazard M-spline posterior: log eta ~ N(0, 2^2); additive-log-ratio logits of p
/// (last basis as reference) with a Normal(0, sigma_p^2) random walk; sigma_p ~ half-Normal(0, 1).
MSplineFit fit_mspline(std::span<const Observation> disease, survmodels::MSplineBasis basis,
                       survmodels::PiecewiseConstantHazard background, const inference::McmcConfig& mcmc);

/// Simplex from additive-log-ratio logits (length n-1, implicit trailing zero).
std::vector<double> alr_inverse(std::span<const double> logits);

} // namespace survnma::survfit
