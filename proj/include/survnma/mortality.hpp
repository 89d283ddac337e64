#pragma once

#include "survnma/data_io.hpp"
#include "survnma/inference.hpp"
#include "survnma/mst.hpp"
#include "survnma/survmodels.hpp"

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

namespace survnma::mortality {

using data_io::MortalityTable;
using data_io::Sex;

/// Oldest age with a tabulated rate; older ages reuse it.
inline constexpr int kLastTabulatedAge = 101;
/// Age at which every cohort survival curve is closed (S = 0).
inline constexpr int kClosingAge = 110;

/// Posterior draws of log m(x,t) = alpha_x + beta_x kappa_t + eps, kappa_t = u + kappa_{t-1} + v_t.
/// Every draw satisfies sum(beta) = 1 and sum(kappa) = 0.
struct LeeCarterDraws {
    int first_age = 0;
    int first_year = 0;
    int ages = 0;
    int years = 0;
    inference::PosteriorDraws draws; // alpha[x], beta[x], kappa[year], u, sigma_eps, sigma_v

    double max_rhat = 1.0;
    bool converged = true; // max R-hat <= 1.05
    std::string warning;

    std::size_t size() const { return draws.total_draws(); }
    double alpha(std::size_t draw, int age) const;
    double beta(std::size_t draw, int age) const;
    double kappa(std::size_t draw, int year) const;
    double drift(std::size_t draw) const;
    double sigma_eps(std::size_t draw) const;
    double sigma_v(std::size_t draw) const;
    int last_year() const { return first_year + years - 1; }
};

/// Gibbs sampler: Normal conditionals for alpha, beta, u and the whole kappa path,
/// inverse-gamma conditionals for the two variances; constraints re-imposed after every sweep.
LeeCarterDraws fit_lee_carter(const MortalityTable& table, const inference::McmcConfig& mcmc);

/// Forward simulation of kappa_{T+1..T+H} per draw (draws x H), innovations included.
Eigen::MatrixXd project_kappa(const LeeCarterDraws& draws, int horizon, std::uint64_t seed);

/// Central death rates m(draw, age, year) over a closed range of calendar years.
/// Ages above 101 reuse the age-101 rate.
class MortalityProjection {
public:
    /// Observed rates as a single deterministic draw.
    static MortalityProjection from_table(const MortalityTable& table);
    /// Fitted surface exp(alpha + beta kappa) over observed years plus `horizon` projected years.
    /// At most `max_draws` posterior draws are used (evenly thinned).
    static MortalityProjection from_lee_carter(const LeeCarterDraws& draws, int horizon, std::uint64_t seed,
                                               std::size_t max_draws = 1000);

    std::size_t size() const { return draws_; }
    int first_year() const { return first_year_; }
    int last_year() const { return last_year_; }
    double rate(std::size_t draw, int age, int year) const;

private:
    std::size_t draws_ = 0;
    int first_year_ = 0;
    int last_year_ = 0;
    int first_age_ = 0;
    // Either explicit rates (ages x years) or the Lee-Carter factors per draw.
    Eigen::MatrixXd table_;
    Eigen::MatrixXd alpha_, beta_, kappa_; // draws x ages, draws x ages, draws x years
};

/// S(x*) = exp(-sum_{i<x*} m(x+i, Y+i)) for x* = 0..H, per draw; zero once age x+x* reaches 110.
struct CohortSurvival {
    int start_age = 0;
    int start_year = 0;
    Eigen::MatrixXd values; // draws x (H + 1); column 0 is 1

    int horizon() const { return static_cast<int>(values.cols()) - 1; }
    std::size_t size() const { return static_cast<std::size_t>(values.rows()); }
};

CohortSurvival cohort_survival(const MortalityProjection& projection, int start_age, int start_year, int horizon);

using CellKey = std::tuple<std::string, Sex, int>; // country, sex, age
using CohortCurves = std::map<CellKey, CohortSurvival>;

struct ExternalPopulation {
    std::string study;
    mst::SurvivalCurve curve;      // posterior-mean aggregated curve on integer years
    std::vector<double> lower;     // 2.5% pointwise band
    std::vector<double> upper;     // 97.5% pointwise band
    Eigen::MatrixXd draws;         // per-draw aggregated curves (draws x times)
    std::vector<survmodels::Observation> synthetic;
    std::uint64_t seed = 0;
    std::vector<std::string> notes;
};

/// Two-stage weighting: country x age within each sex, then the sexes by female proportion.
/// Throws ReferenceError naming every missing (country, sex, age) cell with nonzero weight.
ExternalPopulation synthesize_external(const CohortCurves& curves, const data_io::StudyMeta& meta);

/// Inverse-transform sampling on the piecewise-linear curve; draws beyond the last grid
/// point are censored there. Appends a warning when the median is undefined.
std::vector<survmodels::Observation> sample_synthetic_times(const mst::SurvivalCurve& curve, std::size_t n,
                                                            std::uint64_t seed,
                                                            std::vector<std::string>* warnings = nullptr);

/// Every (country, sex, age) cell with nonzero weight in `meta`.
std::vector<CellKey> required_cells(const data_io::StudyMeta& meta);

} // namespace survnma::mortality
