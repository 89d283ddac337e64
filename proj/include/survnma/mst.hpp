#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace survnma::mst {

/// Survival tabulated on 0 = t_0 < ... < t_N; linear between grid points.
struct SurvivalCurve {
    std::vector<double> times;
    std::vector<double> values;
    double epsilon = 1e-4;     // declared terminal threshold
    bool heavy_tail = false;   // cap reached with S >= 0.01

    double t_max() const { return times.back(); }
    double terminal() const { return values.back(); }
    double at(double t) const; // beyond t_max: terminal value

    /// Throws ValidationError unless S(0)=1, times increase and values are nonincreasing in [0,1].
    void validate() const;
};

struct ExtrapolationOptions {
    double step = 0.01;
    double epsilon = 1e-4;
    double hard_cap = 110.0;
};

/// Evaluates `survival` on a uniform grid until S < epsilon or the cap is reached.
SurvivalCurve extrapolate(const std::function<double(double)>& survival, const ExtrapolationOptions& options);

/// Trapezium-rule area under the curve.
double mst(const SurvivalCurve& curve);

/// Area to `horizon` >= t_max, holding the terminal value beyond t_max.
double mst_to(const SurvivalCurve& curve, double horizon);

/// mst(first) - mst(second), both integrated to `horizon` (default: the larger t_max).
double lyg(const SurvivalCurve& first, const SurvivalCurve& second, std::optional<double> horizon = std::nullopt);

enum class CovarianceMode { control_variance, empirical };

/// Per-study LYG summary: y_k = E[MST_k - MST_1] for arms k = 2..A.
struct ContrastData {
    std::string study;
    std::vector<std::string> treatments; // arm order; treatments[0] is the control arm
    Eigen::VectorXd y;
    Eigen::MatrixXd covariance;
    bool degenerate = false; // all draws equal -> zero covariance
    std::string provenance;

    std::size_t dimension() const { return static_cast<std::size_t>(y.size()); }
};

/// `mst_draws[k]` holds posterior MST draws for arm k (arm 0 is the control).
/// control_variance: off-diagonals set to the variance of the control-arm MST draws.
/// empirical: full sample covariance of the LYG draws.
ContrastData study_contrasts(const std::string& study, const std::vector<std::string>& treatments,
                             const std::vector<std::vector<double>>& mst_draws,
                             CovarianceMode mode = CovarianceMode::control_variance);

/// Smallest eigenvalue of a symmetric matrix.
double min_eigenvalue(const Eigen::MatrixXd& m);

} // namespace survnma::mst
