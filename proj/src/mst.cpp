#include "survnma/mst.hpp"

#include "survnma/common.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace survnma::mst {

double SurvivalCurve::at(double t) const {
    if (t <= times.front()) return values.front();
    if (t >= times.back()) return values.back();
    auto it = std::upper_bound(times.begin(), times.end(), t);
    auto i = static_cast<std::size_t>(it - times.begin());
    double w = (t - times[i - 1]) / (times[i] - times[i - 1]);
    return values[i - 1] + w * (values[i] - values[i - 1]);
}

void SurvivalCurve::validate() const {
    if (times.size() != values.size() || times.size() < 2)
        throw ValidationError("survival curve: need at least two (time, value) points");
    if (times.front() != 0.0 || values.front() != 1.0) throw ValidationError("survival curve: must start at S(0) = 1");
    for (std::size_t i = 1; i < times.size(); ++i) {
        if (!(times[i] > times[i - 1])) throw ValidationError("survival curve: times must increase");
        if (values[i] > values[i - 1] || values[i] < 0.0)
            throw ValidationError(fmt::format("survival curve: not nonincreasing at t={}", times[i]));
    }
}

SurvivalCurve extrapolate(const std::function<double(double)>& survival, const ExtrapolationOptions& options) {
    if (!(options.step > 0)) throw ValidationError("extrapolate: step must be > 0");
    if (!(options.epsilon > 0 && options.epsilon <= 0.01)) throw ValidationError("extrapolate: epsilon must lie in (0, 0.01]");
    if (!(options.hard_cap > 0)) throw ValidationError("extrapolate: hard cap must be > 0");
    SurvivalCurve curve;
    curve.epsilon = options.epsilon;
    curve.times.push_back(0.0);
    curve.values.push_back(1.0);
    const auto steps = static_cast<long>(std::ceil(options.hard_cap / options.step - 1e-9));
    for (long z = 1; z <= steps; ++z) {
        double t = std::min(static_cast<double>(z) * options.step, options.hard_cap);
        double s = survival(t);
        if (!std::isfinite(s)) s = 0.0;
        // Monotone by construction even when the model evaluation has round-off.
        s = std::clamp(s, 0.0, curve.values.back());
        curve.times.push_back(t);
        curve.values.push_back(s);
        if (s < options.epsilon) break;
    }
    curve.heavy_tail = curve.values.back() >= 0.01;
    return curve;
}

double mst(const SurvivalCurve& curve) {
    double area = 0;
    for (std::size_t z = 1; z < curve.times.size(); ++z)
        area += (curve.values[z - 1] + curve.values[z]) / 2.0 * (curve.times[z] - curve.times[z - 1]);
    return area;
}

double mst_to(const SurvivalCurve& curve, double horizon) {
    double area = mst(curve);
    if (horizon > curve.t_max()) area += curve.terminal() * (horizon - curve.t_max());
    return area;
}

double lyg(const SurvivalCurve& first, const SurvivalCurve& second, std::optional<double> horizon) {
    double h = horizon.value_or(std::max(first.t_max(), second.t_max()));
    return mst_to(first, h) - mst_to(second, h);
}

double min_eigenvalue(const Eigen::MatrixXd& m) {
    if (m.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m, Eigen::EigenvaluesOnly);
    return solver.eigenvalues().minCoeff();
}

ContrastData study_contrasts(const std::string& study, const std::vector<std::string>& treatments,
                             const std::vector<std::vector<double>>& mst_draws, CovarianceMode mode) {
    if (mst_draws.size() < 2) throw ValidationError(fmt::format("study {}: need at least two arms", study));
    if (treatments.size() != mst_draws.size())
        throw ValidationError(fmt::format("study {}: {} treatments for {} arms", study, treatments.size(), mst_draws.size()));
    const std::size_t n = mst_draws.front().size();
    for (const auto& arm : mst_draws)
        if (arm.size() != n || n == 0)
            throw ValidationError(fmt::format("study {}: arms have mismatched posterior draw counts", study));

    const auto dim = static_cast<Eigen::Index>(mst_draws.size() - 1);
    const auto nd = static_cast<double>(n);
    Eigen::MatrixXd lyg(static_cast<Eigen::Index>(n), dim);
    for (Eigen::Index k = 0; k < dim; ++k)
        for (std::size_t i = 0; i < n; ++i)
            lyg(static_cast<Eigen::Index>(i), k) = mst_draws[static_cast<std::size_t>(k) + 1][i] - mst_draws[0][i];

    ContrastData out;
    out.study = study;
    out.treatments = treatments;
    out.y = lyg.colwise().mean().transpose();
    Eigen::MatrixXd centered = lyg.rowwise() - out.y.transpose();
    const double denom = n > 1 ? nd - 1.0 : 1.0;
    Eigen::MatrixXd empirical = centered.transpose() * centered / denom;

    if (mode == CovarianceMode::empirical) {
        out.covariance = empirical;
        out.provenance = fmt::format("{} posterior draws per arm; empirical covariance of LYG draws", n);
    } else {
        double control_mean = 0;
        for (double v : mst_draws[0]) control_mean += v;
        control_mean /= nd;
        double control_var = 0;
        for (double v : mst_draws[0]) control_var += (v - control_mean) * (v - control_mean);
        control_var /= denom;
        out.covariance = Eigen::MatrixXd::Constant(dim, dim, control_var);
        out.covariance.diagonal() = empirical.diagonal();
        out.provenance = fmt::format("{} posterior draws per arm; off-diagonal = control-arm MST variance", n);
    }
    out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
    if (min_eigenvalue(out.covariance) < 0.0) {
        // Sampling noise in the shared-control structure: clip to the nearest PSD matrix.
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(out.covariance);
        Eigen::VectorXd ev = solver.eigenvalues().cwiseMax(0.0);
        out.covariance = solver.eigenvectors() * ev.asDiagonal() * solver.eigenvectors().transpose();
        out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
        out.provenance += "; clipped to positive semi-definite";
    }
    out.degenerate = out.covariance.isZero(0.0);
    return out;
}

} // namespace survnma::mst
