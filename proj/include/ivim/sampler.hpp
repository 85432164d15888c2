// sampler.hpp - Bayesian IVIM estimation: component-wise pCN sampling and the
// hierarchical random-walk baseline, plus the per-volume fit dispatcher.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "ivim/ivim_model.hpp"
#include "ivim/rng.hpp"
#include "ivim/series.hpp"

namespace ivim::mcmc {

using model::IvimParams;
using model::TransformedParams;

struct ChainConfig {
    int max_iter = 5000;
    int burn_in = 2000;
    std::array<double, 3> rho{0.5, 0.5, 0.5};    // pCN mixing rates, in ]0,1[
    std::array<double, 3> C{0.01, 0.01, 0.05};    // pCN proposal variances
    enum class Centering { at_init, at_zero };
    Centering centering = Centering::at_init;
    std::uint64_t seed = 0;
    double rw_step0 = 0.05;  // random-walk initial step, transformed space
    bool rw_adapt = true;    // adapt rw steps during burn-in

    static ChainConfig pcn_defaults() { return ChainConfig{}; }
    static ChainConfig rw_defaults() {
        ChainConfig c;
        c.burn_in = 2500;
        return c;
    }

    void validate() const {
        if (max_iter < 1) throw ValidationError("chain: max_iter must be >= 1");
        if (burn_in < 0 || burn_in >= max_iter)
            throw ValidationError("chain: burn_in must be in [0, max_iter)");
        for (int j = 0; j < 3; ++j) {
            if (!(rho[j] > 0.0 && rho[j] < 1.0))
                throw ValidationError("chain: rho must be in ]0,1[");
            if (!(C[j] > 0.0)) throw ValidationError("chain: C must be > 0");
        }
    }
};

struct ChainResult {
    TransformedParams mean_t, std_t;
    IvimParams point;                      // back-transformed posterior mean
    std::array<double, 3> acceptance{};   // per component
    std::array<double, 3> n_effective{};  // lag-1 AR estimate
    bool flagged = false;
};

// One pCN proposal: m + sqrt(1-rho^2) (theta - m) + rho * N(0, C).
double pcn_propose(double theta_j, double rho_j, double C_j, double m_j, Rng& rng);

// Metropolis acceptance on the marginal likelihood ratio (proposed over
// current). Always consumes exactly one uniform. Non-finite proposal
// likelihood rejects and sets *flagged.
bool accept(const TransformedParams& theta_prop, const TransformedParams& theta_cur,
            std::span<const double> y, std::span<const double> bvalues, Rng& rng,
            bool* flagged = nullptr);

// Component-wise pCN chain for one voxel (F, then D, then Ds per iteration).
ChainResult pcn_fit_voxel(std::span<const double> y, std::span<const double> bvalues,
                          const IvimParams& init, const ChainConfig& cfg, Rng& rng);

// Generic pCN chain used by the statistical oracle tests: any log-likelihood
// over the 3-vector state, same update order and RNG consumption as the
// production path.
struct ChainSummary {
    std::array<double, 3> mean{}, var{};
    std::array<double, 3> acceptance{};
    std::size_t samples = 0;
};

template <typename LogLike, typename OnSample>
ChainSummary run_pcn_chain(LogLike&& loglike, std::array<double, 3> theta,
                           std::array<double, 3> center, const ChainConfig& cfg, Rng& rng,
                           OnSample&& on_sample) {
    cfg.validate();
    double log_cur = loglike(theta);
    std::array<double, 3> sum{}, sumsq{};
    std::array<std::int64_t, 3> accepted{};
    std::size_t samples = 0;
    for (int n = 1; n < cfg.max_iter; ++n) {
        for (int j = 0; j < 3; ++j) {
            std::array<double, 3> prop = theta;
            prop[j] = pcn_propose(theta[j], cfg.rho[j], cfg.C[j], center[j], rng);
            const double log_prop = loglike(prop);
            const double u = rng.uniform();
            const double delta = log_prop - log_cur;
            if (std::isfinite(log_prop) && (delta >= 0.0 || u < std::exp(delta))) {
                theta = prop;
                log_cur = log_prop;
                ++accepted[j];
            }
        }
        if (n >= cfg.burn_in) {
            for (int j = 0; j < 3; ++j) {
                sum[j] += theta[j];
                sumsq[j] += theta[j] * theta[j];
            }
            on_sample(theta);
            ++samples;
        }
    }
    ChainSummary out;
    out.samples = samples;
    for (int j = 0; j < 3; ++j) {
        out.mean[j] = sum[j] / samples;
        out.var[j] = std::max(0.0, sumsq[j] / samples - out.mean[j] * out.mean[j]);
        out.acceptance[j] = static_cast<double>(accepted[j]) / (cfg.max_iter - 1);
    }
    return out;
}

template <typename LogLike>
ChainSummary run_pcn_chain(LogLike&& loglike, std::array<double, 3> theta,
                           std::array<double, 3> center, const ChainConfig& cfg, Rng& rng) {
    return run_pcn_chain(std::forward<LogLike>(loglike), theta, center, cfg, rng,
                         [](const std::array<double, 3>&) {});
}

// Test hooks for the hierarchical random-walk sampler.
struct RwHooks {
    bool update_mu = true;
    bool update_sigma = true;
    std::optional<std::array<double, 3>> mu0;
    std::optional<std::array<double, 9>> sigma0; // row-major 3x3
    // Replaces the data likelihood (voxel index, theta) -> log density.
    std::function<double(std::size_t, const std::array<double, 3>&)> loglike_override;
};

// Orton-style hierarchical sampler: Gibbs updates of (mu, Sigma) over the
// masked region, component-wise random-walk Metropolis per voxel.
ParameterMaps rw_fit_volume(const BValueSeries& series, const MaskVolume& mask,
                            const ChainConfig& cfg, int threads = 1,
                            const RwHooks* hooks = nullptr);

enum class FitMethod { pcn, rw, lsq, seg };

FitMethod fit_method_from_string(const std::string& s);
std::string to_string(FitMethod m);

struct FitOptions {
    FitMethod method = FitMethod::pcn;
    ChainConfig chain = ChainConfig::pcn_defaults();
    double b_threshold = 200.0;
    int threads = 1;
};

struct FitDiagnostics {
    std::array<double, 3> mean_acceptance{};
    std::size_t fallback_inits = 0; // voxels where segmented init failed
    std::size_t voxels = 0;
};

// Per-voxel estimation over a masked volume. pcn/lsq/seg voxels are
// independent jobs; rw couples the region through its hyperparameters.
ParameterMaps fit_volume(const BValueSeries& series, const MaskVolume& mask,
                         const FitOptions& options, FitDiagnostics* diag = nullptr);

} // namespace ivim::mcmc
