#include "survnma/mspline.hpp"

#include "survnma/common.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace survnma::survmodels {

namespace {

// Gauss-Legendre nodes and weights on [-1, 1].
void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
    nodes.assign(n, 0.0);
    weights.assign(n, 0.0);
    for (int i = 0; i < n; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = pk;
            }
            if (n == 1) p0 = 1.0;
            double dp = n * (x * p1 - p0) / (x * x - 1.0);
            double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
            double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = pk;
        }
        double dp = n * (x * p1 - p0) / (x * x - 1.0);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
}

} // namespace

MSplineBasis::MSplineBasis(std::vector<double> knots, int degree) : knots_(std::move(knots)), degree_(degree) {
    if (degree_ < 1) throw ValidationError("M-spline: degree must be >= 1");
    if (knots_.size() < 2) throw ValidationError("M-spline: need at least the two boundary knots");
    for (std::size_t i = 1; i < knots_.size(); ++i)
        if (!(knots_[i] > knots_[i - 1])) throw ValidationError("M-spline: knots must be strictly increasing");

    for (int i = 0; i <= degree_; ++i) extended_.push_back(knots_.front());
    for (std::size_t i = 1; i + 1 < knots_.size(); ++i) extended_.push_back(knots_[i]);
    for (int i = 0; i <= degree_; ++i) extended_.push_back(knots_.back());
    size_ = extended_.size() - degree_ - 1;

    // Exact per-interval integrals: each b_i is a polynomial of degree `degree` between knots.
    std::vector<double> nodes, weights;
    gauss_legendre(degree_ + 1, nodes, weights);
    cumulative_at_knots_.assign(knots_.size(), std::vector<double>(size_, 0.0));
    for (std::size_t j = 0; j + 1 < knots_.size(); ++j) {
        double a = knots_[j], b = knots_[j + 1];
        cumulative_at_knots_[j + 1] = cumulative_at_knots_[j];
        for (std::size_t g = 0; g < nodes.size(); ++g) {
            double t = 0.5 * (b - a) * nodes[g] + 0.5 * (a + b);
            auto v = values(t);
            for (std::size_t i = 0; i < size_; ++i) cumulative_at_knots_[j + 1][i] += 0.5 * (b - a) * weights[g] * v[i];
        }
    }
}

std::size_t MSplineBasis::interval(double t) const {
    // Index into extended_ of the span [U_s, U_{s+1}) containing t; the right boundary uses the last span.
    const std::size_t last = size_ - 1;
    if (t >= extended_[last + 1]) return last;
    auto it = std::upper_bound(extended_.begin() + degree_, extended_.begin() + static_cast<std::ptrdiff_t>(last + 1), t);
    return static_cast<std::size_t>(it - extended_.begin()) - 1;
}

void MSplineBasis::bspline_into(double t, std::size_t span, std::vector<double>& out) const {
    // Cox-de Boor triangular scheme; out[r] = B_{span-degree+r}(t).
    const int p = degree_;
    out.assign(p + 1, 0.0);
    std::vector<double> left(p + 1), right(p + 1);
    out[0] = 1.0;
    for (int j = 1; j <= p; ++j) {
        left[j] = t - extended_[span + 1 - j];
        right[j] = extended_[span + j] - t;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            double temp = out[r] / (right[r + 1] + left[j - r]);
            out[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        out[j] = saved;
    }
}

std::vector<double> MSplineBasis::bspline_values(double t) const {
    if (!(t >= lower() && t <= upper()))
        throw std::domain_error(fmt::format("M-spline: t={} outside [{}, {}]", t, lower(), upper()));
    std::vector<double> local;
    std::size_t span = interval(t);
    bspline_into(t, span, local);
    std::vector<double> out(size_, 0.0);
    for (int r = 0; r <= degree_; ++r) out[span - degree_ + r] = local[r];
    return out;
}

std::vector<double> MSplineBasis::values(double t) const {
    auto out = bspline_values(t);
    for (std::size_t i = 0; i < size_; ++i) {
        double width = extended_[i + degree_ + 1] - extended_[i];
        out[i] *= (degree_ + 1) / width;
    }
    return out;
}

std::vector<double> MSplineBasis::integrals(double t) const {
    t = std::clamp(t, lower(), upper());
    auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
    std::size_t j = it == knots_.begin() ? 0 : static_cast<std::size_t>(it - knots_.begin()) - 1;
    if (j + 1 >= knots_.size()) return cumulative_at_knots_.back();
    auto out = cumulative_at_knots_[j];
    double a = knots_[j];
    if (t == a) return out;
    std::vector<double> nodes, weights;
    gauss_legendre(degree_ + 1, nodes, weights);
    for (std::size_t g = 0; g < nodes.size(); ++g) {
        double s = 0.5 * (t - a) * nodes[g] + 0.5 * (a + t);
        auto v = values(s);
        for (std::size_t i = 0; i < size_; ++i) out[i] += 0.5 * (t - a) * weights[g] * v[i];
    }
    return out;
}

std::vector<double> mspline_basis(const std::vector<double>& knots, int degree, double t) {
    return MSplineBasis(knots, degree).values(t);
}

double PiecewiseConstantHazard::hazard(double t) const {
    auto it = std::upper_bound(starts.begin(), starts.end(), t);
    std::size_t i = it == starts.begin() ? 0 : static_cast<std::size_t>(it - starts.begin()) - 1;
    return rates[i];
}

double PiecewiseConstantHazard::cumulative_hazard(double t) const {
    double total = 0;
    for (std::size_t i = 0; i < starts.size(); ++i) {
        if (t <= starts[i]) break;
        double end = i + 1 < starts.size() ? std::min(t, starts[i + 1]) : t;
        total += rates[i] * (end - starts[i]);
    }
    return total;
}

PiecewiseConstantHazard PiecewiseConstantHazard::from_survival(std::span<const double> times,
                                                               std::span<const double> survival) {
    if (times.size() != survival.size() || times.size() < 2)
        throw ValidationError("background hazard: need at least two (time, survival) points");
    PiecewiseConstantHazard out;
    out.starts.clear();
    out.rates.clear();
    for (std::size_t i = 0; i + 1 < times.size(); ++i) {
        // A curve that closes at zero gets a very large but finite final rate.
        double s0 = std::max(survival[i], 1e-300);
        double s1 = std::max(survival[i + 1], 1e-300);
        double rate = std::max(0.0, -std::log(s1 / s0) / (times[i + 1] - times[i]));
        out.starts.push_back(times[i]);
        out.rates.push_back(rate);
    }
    return out;
}

MSplineHazard::MSplineHazard(MSplineBasis b, std::vector<double> p, double eta, PiecewiseConstantHazard bg)
    : basis(std::move(b)), coefficients(std::move(p)), scale(eta), background(std::move(bg)) {
    if (coefficients.size() != basis.size())
        throw ValidationError("M-spline hazard: coefficient count must match the basis size");
    double sum = 0;
    for (double v : coefficients) {
        if (v < 0) throw ValidationError("M-spline hazard: coefficients must be nonnegative");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw ValidationError("M-spline hazard: coefficients must sum to 1");
    if (scale < 0) throw ValidationError("M-spline hazard: scale must be nonnegative");
}

double MSplineHazard::excess_hazard(double t) const {
    double s = std::clamp(t, basis.lower(), basis.upper());
    auto v = basis.values(s);
    double h = 0;
    for (std::size_t i = 0; i < v.size(); ++i) h += coefficients[i] * v[i];
    return scale * h;
}

double MSplineHazard::excess_cumulative_hazard(double t) const {
    double s = std::clamp(t, basis.lower(), basis.upper());
    auto v = basis.integrals(s);
    double H = 0;
    for (std::size_t i = 0; i < v.size(); ++i) H += coefficients[i] * v[i];
    H *= scale;
    if (t > basis.upper()) H += excess_hazard(basis.upper()) * (t - basis.upper());
    return H;
}

double MSplineHazard::survival(double t) const { return std::exp(-cumulative_hazard(t)); }

double mspline_total_hazard(const MSplineHazard& m, double t) { return m.hazard(t); }

std::vector<double> default_knots(std::vector<double> event_times, double upper, int interior) {
    std::vector<double> knots{0.0};
    std::sort(event_times.begin(), event_times.end());
    if (!event_times.empty()) {
        for (int q = 1; q <= interior; ++q) {
            double p = static_cast<double>(q) / (interior + 1);
            double h = (static_cast<double>(event_times.size()) - 1.0) * p;
            auto lo = static_cast<std::size_t>(std::floor(h));
            auto hi = std::min(lo + 1, event_times.size() - 1);
            double k = event_times[lo] + (h - static_cast<double>(lo)) * (event_times[hi] - event_times[lo]);
            if (k > knots.back() + 1e-6 && k < upper - 1e-6) knots.push_back(k);
        }
    }
    knots.push_back(upper);
    return knots;
}

} // namespace survnma::survmodels
