// oracles.hpp - independent reference implementations used only by tests:
// adaptive quadrature for the marginalized likelihood, finite-difference
// derivative checks, and small statistics helpers.
#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "ivim/ivim_model.hpp"

namespace oracles {

template <typename F>
inline double adaptive_simpson_rec(const F& f, double a, double b, double fa, double fm,
                                   double fb, double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if (depth <= 0 || std::abs(left + right - whole) < 15.0 * tol)
        return left + right + (left + right - whole) / 15.0;
    return adaptive_simpson_rec(f, a, m, fa, flm, fm, left, 0.6 * tol, depth - 1) +
           adaptive_simpson_rec(f, m, b, fm, frm, fb, right, 0.6 * tol, depth - 1);
}

template <typename F>
inline double adaptive_simpson(const F& f, double a, double b, double tol, int depth = 22) {
    const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return adaptive_simpson_rec(f, a, b, fa, fm, fb, whole, tol, depth);
}

// Brute-force log marginal likelihood: numerically integrates the Gaussian
// likelihood over the amplitude (flat prior) and the noise variance
// (Jeffreys prior), without using the closed-form marginalization algebra.
inline double quadrature_log_marginal(std::span<const double> y, std::span<const double> b,
                                      const ivim::model::TransformedParams& t) {
    const std::size_t n = y.size();
    std::vector<double> g(n);
    ivim::model::signal_shape(b, t, g);

    auto sse = [&](double s0) {
        double q = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = y[i] - s0 * g[i];
            q += r * r;
        }
        return q;
    };

    // Numeric vertex of the quadratic via three samples.
    const double q0 = sse(0.0), qp = sse(1.0), qm = sse(-1.0);
    const double curv = qp + qm - 2.0 * q0; // = 2 a2
    if (!(curv > 0.0)) throw std::runtime_error("quadrature: degenerate amplitude direction");
    const double vertex = -((qp - qm) / 2.0) / curv;
    const double q_min = sse(vertex);
    const double a2 = curv / 2.0;

    // Inner integral over the amplitude at a fixed variance u, on a
    // normalized coordinate so tolerances are scale-free.
    auto log_inner = [&](double u) {
        const double width = std::sqrt(2.0 * u * 45.0 / a2);
        const auto integrand = [&](double tau) {
            return std::exp(-(sse(vertex + width * tau) - q_min) / (2.0 * u));
        };
        const double integral = adaptive_simpson(integrand, -1.0, 1.0, 1e-9, 20);
        return -0.5 * static_cast<double>(n) * std::log(2.0 * M_PI * u) - q_min / (2.0 * u) +
               std::log(width) + std::log(integral);
    };

    // Outer integral over w = log(variance); the Jeffreys measure du/u is dw.
    // The integrand peaks at w = log(q_min / (n - 1)) and falls off like
    // exp(-((n-1)/2) (e^{w_c - w} - 1)) on the left and exp(-((n-1)/2) (w -
    // w_c)) on the right, so a modest bracket already holds all the mass;
    // staying away from w -> -inf also avoids cancellation in sse - q_min.
    const double w_center = std::log(std::max(q_min / static_cast<double>(n - 1), 1e-15));
    const double f_center = log_inner(std::exp(w_center));
    const auto outer = [&](double w) {
        const double v = std::exp(log_inner(std::exp(w)) - f_center);
        return std::isfinite(v) ? v : 0.0;
    };
    const double left = 12.0, right = 60.0 / std::max(1.0, 0.5 * (n - 1.0));
    const double integral =
        adaptive_simpson(outer, w_center - left, w_center + right, 1e-9, 24);
    return f_center + std::log(integral);
}

// Central-difference directional derivative of a scalar function along dir.
inline double central_difference(const std::function<double(const std::vector<double>&)>& f,
                                 const std::vector<double>& x, const std::vector<double>& dir,
                                 double h) {
    std::vector<double> xp = x, xm = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        xp[i] += h * dir[i];
        xm[i] -= h * dir[i];
    }
    return (f(xp) - f(xm)) / (2.0 * h);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

} // namespace oracles
