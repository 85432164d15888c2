// ivim_model.cpp - IVIM signal model and per-voxel estimators.

#include "ivim/ivim_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace ivim::model {

namespace {
constexpr double kResidualFloor = 1e-30;
constexpr double kDFloor = 1e-6;      // mm^2/s, decay floor for degenerate fits
constexpr double kDsOverD = 1.1;      // enforced ds > d margin
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
} // namespace

TransformedParams to_transformed(const IvimParams& p) {
    if (!(p.f > 0.0 && p.f < 1.0)) throw ValidationError("to_transformed: f must be in (0,1)");
    if (!(p.d > 0.0) || !(p.ds > 0.0)) throw ValidationError("to_transformed: d, ds must be > 0");
    return {std::log(p.f) - std::log1p(-p.f), std::log(p.d), std::log(p.ds)};
}

IvimParams from_transformed(const TransformedParams& t, double y0) {
    IvimParams p;
    p.f = 1.0 / (1.0 + std::exp(-t.F));
    p.d = std::exp(t.D);
    p.ds = std::exp(t.Ds);
    p.y0 = y0;
    return p;
}

double signal(double b, const IvimParams& p) {
    if (!(b >= 0.0)) throw ValidationError("signal: b must be >= 0");
    if (!(p.f >= 0.0 && p.f <= 1.0)) throw ValidationError("signal: f must be in [0,1]");
    if (!(p.d > 0.0) || !(p.ds > 0.0) || !(p.y0 > 0.0))
        throw ValidationError("signal: d, ds, y0 must be > 0");
    return p.y0 * (p.f * std::exp(-b * p.ds) + (1.0 - p.f) * std::exp(-b * p.d));
}

void signal_shape(std::span<const double> bvalues, const TransformedParams& t,
                  std::span<double> g_out) {
    const double f = 1.0 / (1.0 + std::exp(-t.F));
    const double d = std::exp(t.D);
    const double ds = std::exp(t.Ds);
    for (std::size_t i = 0; i < bvalues.size(); ++i)
        g_out[i] = f * std::exp(-bvalues[i] * ds) + (1.0 - f) * std::exp(-bvalues[i] * d);
}

double log_marginal_likelihood(std::span<const double> y, std::span<const double> bvalues,
                               const TransformedParams& t, bool* clamped) {
    const std::size_t n = y.size();
    if (n != bvalues.size() || n < 3)
        throw ValidationError("log_marginal_likelihood: need >= 3 matching samples");
    double g[64];
    if (n > 64) throw ValidationError("log_marginal_likelihood: too many b-values");
    signal_shape(bvalues, t, {g, n});
    double gg = 0.0, yg = 0.0, yy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        gg += g[i] * g[i];
        yg += y[i] * g[i];
        yy += y[i] * y[i];
    }
    if (!(yy > 0.0)) throw ValidationError("log_marginal_likelihood: y must not be all zero");
    double resid = yy - yg * yg / gg;
    bool hit = false;
    if (!(resid > kResidualFloor)) {
        resid = kResidualFloor;
        hit = true;
    }
    if (clamped) *clamped = hit;
    const double half_nm1 = 0.5 * (static_cast<double>(n) - 1.0);
    return -half_nm1 * kLog2Pi - 0.5 * std::log(gg) + std::lgamma(half_nm1) -
           half_nm1 * std::log(0.5 * resid);
}

double ml_amplitude(std::span<const double> y, std::span<const double> bvalues,
                    const TransformedParams& t) {
    const std::size_t n = y.size();
    double g[64];
    signal_shape(bvalues, t, {g, n});
    double gg = 0.0, yg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        gg += g[i] * g[i];
        yg += y[i] * g[i];
    }
    return yg / gg;
}

namespace {

// Sum of squares of (y - model) over the low-b segment for a candidate ds.
double low_b_sse(std::span<const double> y, std::span<const double> b, std::size_t n_low,
                 double y0, double f, double d, double ds) {
    double sse = 0.0;
    for (std::size_t i = 0; i < n_low; ++i) {
        const double m = y0 * (f * std::exp(-b[i] * ds) + (1.0 - f) * std::exp(-b[i] * d));
        const double r = y[i] - m;
        sse += r * r;
    }
    return sse;
}

} // namespace

SegmentedFit segmented_init(std::span<const double> y, std::span<const double> bvalues,
                            double b_threshold) {
    const std::size_t n = y.size();
    if (n != bvalues.size() || n < 3) throw ValidationError("segmented_init: need >= 3 samples");
    for (std::size_t i = 0; i < n; ++i)
        if (!(y[i] > 0.0)) throw ValidationError("segmented_init: signals must be positive");
    if (bvalues[0] != 0.0) throw ValidationError("segmented_init: first b-value must be 0");

    std::size_t n_low = 0;
    while (n_low < n && bvalues[n_low] < b_threshold) ++n_low;
    if (n - n_low < 2 || n_low < 1)
        throw ValidationError("segmented_init: need >= 2 b-values above and >= 1 below threshold");

    SegmentedFit fit;

    // Log-linear least squares over the high-b tail: log y = c - d b.
    double sb = 0.0, sl = 0.0, sbb = 0.0, sbl = 0.0;
    const double nh = static_cast<double>(n - n_low);
    for (std::size_t i = n_low; i < n; ++i) {
        const double l = std::log(y[i]);
        sb += bvalues[i];
        sl += l;
        sbb += bvalues[i] * bvalues[i];
        sbl += bvalues[i] * l;
    }
    const double denom = nh * sbb - sb * sb;
    double d = -(nh * sbl - sb * sl) / denom;
    if (!(d > kDFloor)) {
        d = kDFloor;
        fit.d_clamped = true;
    }
    const double c = (sl + d * sb) / nh;
    const double intercept = std::exp(c);

    const double y0 = y[0];
    const double f = std::clamp(1.0 - intercept / y0, 0.0, 1.0);

    // 1D fit of ds on the low-b points, f and d held fixed: coarse log grid,
    // then Newton on the SSE derivative.
    double ds = kDsOverD * d;
    if (f < 1e-6) {
        fit.f_degenerate = true;
        fit.ds_clamped = true;
    } else {
        const double lo = std::log(kDsOverD * d);
        const double hi = std::log(std::max(0.5, 20.0 * kDsOverD * d));
        constexpr int kGrid = 160;
        double best_sse = std::numeric_limits<double>::infinity();
        double best_log_ds = lo;
        for (int k = 0; k < kGrid; ++k) {
            const double cand = lo + (hi - lo) * k / (kGrid - 1);
            const double sse = low_b_sse(y, bvalues, n_low, y0, f, d, std::exp(cand));
            if (sse < best_sse) {
                best_sse = sse;
                best_log_ds = cand;
            }
        }
        double w = best_log_ds;
        for (int it = 0; it < 25; ++it) {
            const double h = 1e-5;
            const double s0 = low_b_sse(y, bvalues, n_low, y0, f, d, std::exp(w - h));
            const double s1 = low_b_sse(y, bvalues, n_low, y0, f, d, std::exp(w));
            const double s2 = low_b_sse(y, bvalues, n_low, y0, f, d, std::exp(w + h));
            const double g1 = (s2 - s0) / (2 * h);
            const double g2 = (s2 - 2 * s1 + s0) / (h * h);
            if (!(g2 > 0.0)) break;
            const double step = g1 / g2;
            const double w_new = std::clamp(w - step, lo, hi);
            if (std::abs(w_new - w) < 1e-12) {
                w = w_new;
                break;
            }
            w = w_new;
        }
        ds = std::exp(w);
        if (ds <= kDsOverD * d) {
            ds = kDsOverD * d;
            fit.ds_clamped = true;
        }
    }

    fit.params = IvimParams{f, d, ds, y0};
    return fit;
}

void model_jacobian(std::span<const double> bvalues, const double q[4],
                    std::span<double> model_out, std::span<double> jac_out) {
    const double f = 1.0 / (1.0 + std::exp(-q[0]));
    const double d = std::exp(q[1]);
    const double ds = std::exp(q[2]);
    const double y0 = std::exp(q[3]);
    const double dfdF = f * (1.0 - f);
    for (std::size_t i = 0; i < bvalues.size(); ++i) {
        const double b = bvalues[i];
        const double es = std::exp(-b * ds);
        const double ed = std::exp(-b * d);
        const double m = y0 * (f * es + (1.0 - f) * ed);
        model_out[i] = m;
        jac_out[4 * i + 0] = y0 * (es - ed) * dfdF;
        jac_out[4 * i + 1] = -b * d * y0 * (1.0 - f) * ed;
        jac_out[4 * i + 2] = -b * ds * y0 * f * es;
        jac_out[4 * i + 3] = m; // d/d(log y0)
    }
}

LsqFit lsq_fit_lm(std::span<const double> y, std::span<const double> bvalues,
                  const IvimParams& init, int max_iters) {
    const std::size_t n = y.size();
    if (n != bvalues.size() || n < 4) throw ValidationError("lsq_fit_lm: need >= 4 samples");

    // Interior-clamped transform of the initial guess, and a generous box in
    // transformed coordinates so unidentified components cannot run away.
    static constexpr double kLo[4] = {-16.0, -16.1181, -13.8155, -13.8155};
    static constexpr double kHi[4] = {16.0, -0.6931, 2.3026, 20.7233};
    const double f0 = std::clamp(init.f, 1e-6, 1.0 - 1e-6);
    const double d0 = std::max(init.d, 1e-7);
    const double ds0 = std::max(init.ds, kDsOverD * d0);
    const double y00 = std::max(init.y0, 1e-6);
    double q[4] = {std::log(f0) - std::log1p(-f0), std::log(d0), std::log(ds0), std::log(y00)};
    for (int k = 0; k < 4; ++k) q[k] = std::clamp(q[k], kLo[k], kHi[k]);

    std::vector<double> m(n), jac(4 * n);
    auto sse_at = [&](const double qq[4]) {
        model_jacobian(bvalues, qq, m, jac);
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = m[i] - y[i];
            s += r * r;
        }
        return s;
    };

    double sse = sse_at(q);
    double lambda = 1e-3;
    LsqFit out;
    out.converged = false;
    int it = 0;
    for (; it < max_iters; ++it) {
        // Normal equations at the current point (m, jac are in sync with q).
        Eigen::Matrix4d jtj = Eigen::Matrix4d::Zero();
        Eigen::Vector4d jtr = Eigen::Vector4d::Zero();
        for (std::size_t i = 0; i < n; ++i) {
            Eigen::Map<const Eigen::Vector4d> ji(&jac[4 * i]);
            jtj += ji * ji.transpose();
            jtr += ji * (m[i] - y[i]);
        }
        if (jtr.lpNorm<Eigen::Infinity>() < 1e-12 * (1.0 + sse)) {
            out.converged = true;
            break;
        }
        bool stepped = false;
        for (int tries = 0; tries < 30; ++tries) {
            Eigen::Matrix4d a = jtj;
            for (int k = 0; k < 4; ++k) a(k, k) += lambda * std::max(jtj(k, k), 1e-12);
            const Eigen::Vector4d delta = a.ldlt().solve(-jtr);
            double q_new[4];
            for (int k = 0; k < 4; ++k) q_new[k] = std::clamp(q[k] + delta[k], kLo[k], kHi[k]);
            const double sse_new = sse_at(q_new);
            if (std::isfinite(sse_new) && sse_new <= sse) {
                const double drop = sse - sse_new;
                std::copy(q_new, q_new + 4, q);
                sse = sse_new;
                lambda = std::max(lambda * 0.3, 1e-12);
                stepped = true;
                if (drop < 1e-14 * (sse + 1e-30) || delta.lpNorm<Eigen::Infinity>() < 1e-12)
                    out.converged = true;
                break;
            }
            lambda *= 10.0;
            // restore m/jac for the current q before retrying
            sse_at(q);
        }
        if (!stepped || out.converged) {
            out.converged = out.converged || !stepped;
            break;
        }
    }

    out.iterations = it;
    out.sse = sse;
    out.params.f = 1.0 / (1.0 + std::exp(-q[0]));
    out.params.d = std::exp(q[1]);
    out.params.ds = std::exp(q[2]);
    out.params.y0 = std::exp(q[3]);
    return out;
}

} // namespace ivim::model
