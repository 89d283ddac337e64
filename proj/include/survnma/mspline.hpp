#pragma once

#include <span>
#include <vector>

namespace survnma::survmodels {

/// M-spline basis on [knots.front(), knots.back()]: B-splines of the given degree,
/// each rescaled to integrate to one. `knots` holds the boundary and interior knots
/// (each once); boundary knots are repeated internally.
class MSplineBasis {
public:
    MSplineBasis(std::vector<double> knots, int degree);

    int degree() const { return degree_; }
    std::size_t size() const { return size_; }
    const std::vector<double>& knots() const { return knots_; }
    double lower() const { return knots_.front(); }
    double upper() const { return knots_.back(); }

    /// b_i(t) for every basis function. Throws std::domain_error outside the boundary knots.
    std::vector<double> values(double t) const;
    /// Unnormalised B-spline values B_i(t) (partition of unity).
    std::vector<double> bspline_values(double t) const;
    /// Integral of each b_i from the lower boundary knot to t (t clamped to the boundary).
    std::vector<double> integrals(double t) const;

private:
    std::vector<double> knots_;
    std::vector<double> extended_; // boundary knots repeated degree+1 times
    int degree_;
    std::size_t size_;
    std::vector<std::vector<double>> cumulative_at_knots_; // [interval][basis]

    std::size_t interval(double t) const;
    void bspline_into(double t, std::size_t span, std::vector<double>& out) const;
};

std::vector<double> mspline_basis(const std::vector<double>& knots, int degree, double t);

/// Piecewise-constant hazard: rates[i] on [starts[i], starts[i+1]), last rate extends to infinity.
struct PiecewiseConstantHazard {
    std::vector<double> starts{0.0};
    std::vector<double> rates{0.0};

    double hazard(double t) const;
    double cumulative_hazard(double t) const;

    /// Interval hazards -log(S(t_{i+1}) / S(t_i)) / (t_{i+1} - t_i) from a tabulated survival curve.
    /// Trailing zero survival gives the last positive interval's rate onwards.
    static PiecewiseConstantHazard from_survival(std::span<const double> times, std::span<const double> survival);
};

/// h_d(t) = eta * sum_i p_i b_i(t) + h_p(t), with the excess part held at its
/// final-knot value beyond the last knot.
struct MSplineHazard {
    MSplineBasis basis;
    std::vector<double> coefficients; // simplex
    double scale = 1;                 // eta
    PiecewiseConstantHazard background;

    MSplineHazard(MSplineBasis b, std::vector<double> p, double eta, PiecewiseConstantHazard bg);

    double excess_hazard(double t) const;
    double excess_cumulative_hazard(double t) const;
    double hazard(double t) const { return excess_hazard(t) + background.hazard(t); }
    double cumulative_hazard(double t) const { return excess_cumulative_hazard(t) + background.cumulative_hazard(t); }
    double survival(double t) const;
};

double mspline_total_hazard(const MSplineHazard& m, double t);

/// Degree-3 default: interior knots at deciles of the event times, boundaries at 0 and `upper`.
std::vector<double> default_knots(std::vector<double> event_times, double upper, int interior = 9);

} // namespace survnma::survmodels
