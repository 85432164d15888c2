// ivim_model.hpp - bi-exponential IVIM signal model, parameter transforms,
// marginalized likelihood, and the deterministic estimators.
#pragma once

#include <span>
#include <vector>

#include "ivim/errors.hpp"

namespace ivim::model {

// Natural-space parameters. Physical ordering requires ds > d > 0.
struct IvimParams {
    double f = 0.1;   // perfusion fraction, [0, 1]
    double d = 1e-3;  // water diffusion, mm^2/s
    double ds = 1e-2; // blood pseudo-diffusion, mm^2/s
    double y0 = 1.0;  // b=0 signal amplitude
};

// Unconstrained coordinates: F = logit(f), D = log(d), Ds = log(ds).
struct TransformedParams {
    double F = 0.0;
    double D = 0.0;
    double Ds = 0.0;
};

TransformedParams to_transformed(const IvimParams& p);
IvimParams from_transformed(const TransformedParams& t, double y0 = 1.0);

// Bi-exponential decay: y0 * (f e^{-b ds} + (1-f) e^{-b d}).
double signal(double b, const IvimParams& p);

// Unit-amplitude signal shape at each b-value.
void signal_shape(std::span<const double> bvalues, const TransformedParams& t,
                  std::span<double> g_out);

// Log marginal likelihood of one voxel's signals with the amplitude
// marginalized under a flat prior and the noise variance under a Jeffreys
// prior. Includes all constants, so it can be compared to direct numerical
// marginalization. `clamped` flags a residual at the degeneracy floor
// (y exactly proportional to the model shape).
double log_marginal_likelihood(std::span<const double> y, std::span<const double> bvalues,
                               const TransformedParams& t, bool* clamped = nullptr);

// Amplitude that maximizes the Gaussian likelihood at a fixed shape.
double ml_amplitude(std::span<const double> y, std::span<const double> bvalues,
                    const TransformedParams& t);

struct SegmentedFit {
    IvimParams params;
    bool d_clamped = false;   // decay slope hit the positivity floor
    bool ds_clamped = false;  // pseudo-diffusion pinned at the ds > d guard
    bool f_degenerate = false; // perfusion too small to identify ds
};

// Two-stage initializer: log-linear fit of the high-b tail for d, perfusion
// fraction from the extrapolated intercept, then a 1D grid+Newton fit of ds
// on the low-b residual. Requires strictly positive signals.
SegmentedFit segmented_init(std::span<const double> y, std::span<const double> bvalues,
                            double b_threshold = 200.0);

struct LsqFit {
    IvimParams params;
    double sse = 0.0;
    int iterations = 0;
    bool converged = true;
};

// Full nonlinear least squares over (F, D, Ds, log y0), Levenberg-Marquardt
// with the analytic Jacobian.
LsqFit lsq_fit_lm(std::span<const double> y, std::span<const double> bvalues,
                  const IvimParams& init, int max_iters = 200);

// Residuals and Jacobian of the model in transformed coordinates
// q = (F, D, Ds, log y0); rows follow bvalues, columns follow q.
// Exposed for the derivative test suite.
void model_jacobian(std::span<const double> bvalues, const double q[4],
                    std::span<double> model_out, std::span<double> jac_out);

} // namespace ivim::model
