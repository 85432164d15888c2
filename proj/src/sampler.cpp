// sampler.cpp - pCN and random-walk MCMC for per-voxel IVIM estimation.

#include "ivim/sampler.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "ivim/parallel.hpp"

namespace ivim::mcmc {

namespace {

constexpr double kResidualFloor = 1e-30;

// Marginal-likelihood evaluator with per-component exponential caches.
// Updating F reuses both decay vectors; updating D or Ds recomputes one.
// Values agree with model::log_marginal_likelihood to rounding.
class VoxelLikelihood {
public:
    VoxelLikelihood(std::span<const double> y, std::span<const double> b)
        : n_(y.size()), y_(y.begin(), y.end()), b_(b.begin(), b.end()),
          e_d_(n_), e_ds_(n_), e_prop_(n_) {
        yy_ = 0.0;
        for (double v : y_) yy_ += v * v;
        const double h = 0.5 * (static_cast<double>(n_) - 1.0);
        log_const_ = -h * std::log(2.0 * M_PI) + std::lgamma(h) + h * std::log(2.0);
        half_nm1_ = h;
    }

    double set_state(const TransformedParams& t) {
        theta_ = {t.F, t.D, t.Ds};
        f_ = 1.0 / (1.0 + std::exp(-t.F));
        d_ = std::exp(t.D);
        ds_ = std::exp(t.Ds);
        for (std::size_t i = 0; i < n_; ++i) {
            e_d_[i] = std::exp(-b_[i] * d_);
            e_ds_[i] = std::exp(-b_[i] * ds_);
        }
        log_cur_ = score(f_, e_ds_.data(), e_d_.data());
        return log_cur_;
    }

    double current() const { return log_cur_; }
    const std::array<double, 3>& theta() const { return theta_; }

    double eval_component(int comp, double value) {
        last_comp_ = comp;
        last_value_ = value;
        switch (comp) {
        case 0: {
            last_scalar_ = 1.0 / (1.0 + std::exp(-value));
            return score(last_scalar_, e_ds_.data(), e_d_.data());
        }
        case 1: {
            last_scalar_ = std::exp(value);
            for (std::size_t i = 0; i < n_; ++i) e_prop_[i] = std::exp(-b_[i] * last_scalar_);
            return score(f_, e_ds_.data(), e_prop_.data());
        }
        default: {
            last_scalar_ = std::exp(value);
            for (std::size_t i = 0; i < n_; ++i) e_prop_[i] = std::exp(-b_[i] * last_scalar_);
            return score(f_, e_prop_.data(), e_d_.data());
        }
        }
    }

    void accept_last(double log_prop) {
        theta_[last_comp_] = last_value_;
        log_cur_ = log_prop;
        switch (last_comp_) {
        case 0: f_ = last_scalar_; break;
        case 1:
            d_ = last_scalar_;
            std::swap(e_d_, e_prop_);
            break;
        default:
            ds_ = last_scalar_;
            std::swap(e_ds_, e_prop_);
            break;
        }
    }

private:
    double score(double f, const double* e_ds, const double* e_d) const {
        double gg = 0.0, yg = 0.0;
        const double fc = 1.0 - f;
        for (std::size_t i = 0; i < n_; ++i) {
            const double g = f * e_ds[i] + fc * e_d[i];
            gg += g * g;
            yg += y_[i] * g;
        }
        double resid = yy_ - yg * yg / gg;
        if (!(resid > kResidualFloor)) resid = kResidualFloor;
        return log_const_ - 0.5 * std::log(gg) - half_nm1_ * std::log(resid);
    }

    std::size_t n_;
    std::vector<double> y_, b_;
    std::vector<double> e_d_, e_ds_, e_prop_;
    double yy_ = 0.0, log_const_ = 0.0, half_nm1_ = 0.0;
    std::array<double, 3> theta_{};
    double f_ = 0.0, d_ = 0.0, ds_ = 0.0;
    double log_cur_ = 0.0;
    int last_comp_ = 0;
    double last_value_ = 0.0, last_scalar_ = 0.0;
};

IvimParams fallback_init(std::span<const double> y) {
    double y0 = 1.0;
    for (double v : y) y0 = std::max(y0, v);
    return IvimParams{0.1, 1e-3, 1e-2, y0};
}

IvimParams robust_segmented(std::span<const double> y, std::span<const double> b,
                            double b_threshold, bool* fell_back) {
    try {
        const model::SegmentedFit fit = model::segmented_init(y, b, b_threshold);
        if (fell_back) *fell_back = false;
        return fit.params;
    } catch (const ValidationError&) {
        if (fell_back) *fell_back = true;
        return fallback_init(y);
    }
}

// Chain-domain guard: keeps logit(f) within a sane envelope when the
// segmented fit clipped f to a boundary.
TransformedParams interior_transform(const IvimParams& p) {
    IvimParams q = p;
    q.f = std::clamp(q.f, 1e-3, 1.0 - 1e-3);
    q.d = std::max(q.d, 1e-9);
    q.ds = std::max(q.ds, 1.1 * q.d);
    return model::to_transformed(q);
}

} // namespace

double pcn_propose(double theta_j, double rho_j, double C_j, double m_j, Rng& rng) {
    const double delta = std::sqrt(C_j) * rng.normal();
    return m_j + std::sqrt(1.0 - rho_j * rho_j) * (theta_j - m_j) + rho_j * delta;
}

bool accept(const TransformedParams& theta_prop, const TransformedParams& theta_cur,
            std::span<const double> y, std::span<const double> bvalues, Rng& rng,
            bool* flagged) {
    const double log_cur = model::log_marginal_likelihood(y, bvalues, theta_cur);
    const double log_prop = model::log_marginal_likelihood(y, bvalues, theta_prop);
    const double u = rng.uniform();
    if (!std::isfinite(log_prop)) {
        if (flagged) *flagged = true;
        return false;
    }
    if (flagged) *flagged = false;
    const double delta = log_prop - log_cur;
    return delta >= 0.0 || u < std::exp(delta);
}

ChainResult pcn_fit_voxel(std::span<const double> y, std::span<const double> bvalues,
                          const IvimParams& init, const ChainConfig& cfg, Rng& rng) {
    cfg.validate();
    const TransformedParams t0 = interior_transform(init);
    const std::array<double, 3> center =
        cfg.centering == ChainConfig::Centering::at_init
            ? std::array<double, 3>{t0.F, t0.D, t0.Ds}
            : std::array<double, 3>{0.0, 0.0, 0.0};

    VoxelLikelihood like(y, bvalues);
    double log_cur = like.set_state(t0);

    std::array<double, 3> sum{}, sumsq{}, lag{}, prev{};
    std::array<std::int64_t, 3> accepted{};
    bool flagged = false;
    std::size_t samples = 0;
    bool have_prev = false;

    for (int n = 1; n < cfg.max_iter; ++n) {
        for (int j = 0; j < 3; ++j) {
            const double prop = pcn_propose(like.theta()[j], cfg.rho[j], cfg.C[j], center[j], rng);
            const double log_prop = like.eval_component(j, prop);
            const double u = rng.uniform();
            if (!std::isfinite(log_prop)) {
                flagged = true;
                continue;
            }
            const double delta = log_prop - log_cur;
            if (delta >= 0.0 || u < std::exp(delta)) {
                like.accept_last(log_prop);
                log_cur = log_prop;
                ++accepted[j];
            }
        }
        if (n >= cfg.burn_in) {
            const auto& th = like.theta();
            for (int j = 0; j < 3; ++j) {
                sum[j] += th[j];
                sumsq[j] += th[j] * th[j];
                if (have_prev) lag[j] += th[j] * prev[j];
                prev[j] = th[j];
            }
            have_prev = true;
            ++samples;
        }
    }

    ChainResult out;
    out.flagged = flagged;
    const double ns = static_cast<double>(samples);
    std::array<double, 3> mean{}, var{};
    for (int j = 0; j < 3; ++j) {
        mean[j] = sum[j] / ns;
        var[j] = std::max(0.0, sumsq[j] / ns - mean[j] * mean[j]);
        out.acceptance[j] = static_cast<double>(accepted[j]) / (cfg.max_iter - 1);
        double r1 = 0.0;
        if (samples > 1 && var[j] > 0.0)
            r1 = std::clamp((lag[j] / (ns - 1.0) - mean[j] * mean[j]) / var[j], -0.999, 0.999);
        out.n_effective[j] = ns * (1.0 - r1) / (1.0 + r1);
    }
    out.mean_t = {mean[0], mean[1], mean[2]};
    out.std_t = {std::sqrt(var[0]), std::sqrt(var[1]), std::sqrt(var[2])};
    out.point = model::from_transformed(out.mean_t, 1.0);
    out.point.y0 = model::ml_amplitude(y, bvalues, out.mean_t);
    return out;
}

namespace {

struct RwVoxelState {
    VoxelLikelihood like;
    std::array<double, 3> theta;
    std::array<double, 3> step;
    std::array<int, 3> window_accepts{};
    std::array<std::int64_t, 3> accepted{};
    Rng rng;
    double log_cur = 0.0;
    std::array<double, 3> sum{}, sumsq{};
    std::function<double(const std::array<double, 3>&)> override_like;

    RwVoxelState(std::span<const double> y, std::span<const double> b, Rng r)
        : like(y, b), rng(r) {}

    double evaluate(int comp, double value, std::array<double, 3>& scratch) {
        if (override_like) {
            scratch = theta;
            scratch[comp] = value;
            return override_like(scratch);
        }
        return like.eval_component(comp, value);
    }
};

} // namespace

ParameterMaps rw_fit_volume(const BValueSeries& series, const MaskVolume& mask,
                            const ChainConfig& cfg, int threads, const RwHooks* hooks) {
    cfg.validate();
    series.validate();
    if (!(mask.geom == series.geometry()))
        throw ValidationError("rw_fit_volume: mask geometry mismatch");

    const VolumeGeometry& geom = series.geometry();
    std::vector<std::size_t> voxels;
    std::vector<std::array<int, 3>> coords;
    for (int z = 0; z < geom.nz(); ++z)
        for (int y = 0; y < geom.ny(); ++y)
            for (int x = 0; x < geom.nx(); ++x)
                if (mask.at(x, y, z)) {
                    voxels.push_back(mask.index(x, y, z));
                    coords.push_back({x, y, z});
                }
    const std::size_t nvox = voxels.size();
    if (nvox < 4)
        throw ValidationError("rw_fit_volume: need >= 4 masked voxels for the Sigma update");

    const std::vector<double>& b = series.bvalues;
    std::vector<std::vector<double>> signals(nvox);
    std::vector<RwVoxelState> states;
    states.reserve(nvox);
    for (std::size_t v = 0; v < nvox; ++v) {
        const auto& c = coords[v];
        signals[v] = series.voxel_signal(c[0], c[1], c[2]);
        states.emplace_back(signals[v], b, Rng::keyed(cfg.seed, rng_tag::chain, voxels[v], 2));
    }

    // Segmented initialization, parallel over voxels.
    std::vector<TransformedParams> inits(nvox);
    parallel_for(nvox, threads, [&](std::size_t v) {
        const IvimParams p = robust_segmented(signals[v], b, 200.0, nullptr);
        inits[v] = interior_transform(p);
    });
    for (std::size_t v = 0; v < nvox; ++v) {
        auto& st = states[v];
        st.theta = {inits[v].F, inits[v].D, inits[v].Ds};
        st.step = {cfg.rw_step0, cfg.rw_step0, cfg.rw_step0};
        if (hooks && hooks->loglike_override) {
            const std::size_t vi = v;
            st.override_like = [hooks, vi](const std::array<double, 3>& th) {
                return hooks->loglike_override(vi, th);
            };
            st.log_cur = st.override_like(st.theta);
        } else {
            st.log_cur = st.like.set_state(inits[v]);
        }
    }

    // Hyperparameter state.
    Eigen::Vector3d mu;
    Eigen::Matrix3d sigma;
    {
        Eigen::Vector3d acc = Eigen::Vector3d::Zero();
        for (const auto& st : states) acc += Eigen::Vector3d(st.theta[0], st.theta[1], st.theta[2]);
        mu = acc / static_cast<double>(nvox);
        Eigen::Matrix3d s = Eigen::Matrix3d::Zero();
        for (const auto& st : states) {
            const Eigen::Vector3d e = Eigen::Vector3d(st.theta[0], st.theta[1], st.theta[2]) - mu;
            s += e * e.transpose();
        }
        sigma = s / static_cast<double>(nvox) + 1e-6 * Eigen::Matrix3d::Identity();
    }
    if (hooks && hooks->mu0) mu = Eigen::Vector3d((*hooks->mu0)[0], (*hooks->mu0)[1], (*hooks->mu0)[2]);
    if (hooks && hooks->sigma0) {
        const auto& s = *hooks->sigma0;
        sigma << s[0], s[1], s[2], s[3], s[4], s[5], s[6], s[7], s[8];
    }

    Rng gibbs_rng = Rng::keyed(cfg.seed, rng_tag::gibbs, 0, 2);
    auto gamma_draw = [&gibbs_rng](double shape) {
        // Marsaglia-Tsang, shape >= 1 here (small shapes guarded by caller).
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = gibbs_rng.normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = gibbs_rng.uniform_pos();
            if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
        }
    };

    const bool update_mu = !hooks || hooks->update_mu;
    const bool update_sigma = !hooks || hooks->update_sigma;
    std::size_t samples = 0;

    for (int n = 1; n < cfg.max_iter; ++n) {
        const Eigen::Matrix3d prec = sigma.llt().solve(Eigen::Matrix3d::Identity());
        const bool adapt = cfg.rw_adapt && n < cfg.burn_in;
        const bool record = n >= cfg.burn_in;

        parallel_for(nvox, threads, [&](std::size_t v) {
            auto& st = states[v];
            Eigen::Vector3d e(st.theta[0] - mu[0], st.theta[1] - mu[1], st.theta[2] - mu[2]);
            std::array<double, 3> scratch;
            for (int j = 0; j < 3; ++j) {
                const double prop = st.theta[j] + st.step[j] * st.rng.normal();
                const double log_prop = st.evaluate(j, prop, scratch);
                const double u = st.rng.uniform();
                // Prior log-ratio from the quadratic form, updated in one component.
                const double de = prop - st.theta[j];
                double cross = 0.0;
                for (int k = 0; k < 3; ++k)
                    if (k != j) cross += prec(j, k) * e[k];
                const double dprior = -0.5 * (prec(j, j) * (2.0 * e[j] * de + de * de)) - cross * de;
                const double delta = log_prop - st.log_cur + dprior;
                if (std::isfinite(log_prop) && (delta >= 0.0 || u < std::exp(delta))) {
                    if (!st.override_like) st.like.accept_last(log_prop);
                    st.theta[j] = prop;
                    e[j] += de;
                    st.log_cur = log_prop;
                    ++st.accepted[j];
                    if (adapt) ++st.window_accepts[j];
                }
            }
            if (adapt && n % 50 == 0) {
                for (int j = 0; j < 3; ++j) {
                    const double frac = st.window_accepts[j] / 50.0;
                    if (frac > 0.5) st.step[j] *= 1.3;
                    else if (frac < 0.2) st.step[j] /= 1.3;
                    st.window_accepts[j] = 0;
                }
            }
            if (record) {
                for (int j = 0; j < 3; ++j) {
                    st.sum[j] += st.theta[j];
                    st.sumsq[j] += st.theta[j] * st.theta[j];
                }
            }
        });
        if (record) ++samples;

        // Gibbs sweep over the hyperparameters (serial, deterministic).
        if (update_mu) {
            Eigen::Vector3d acc = Eigen::Vector3d::Zero();
            for (const auto& st : states)
                acc += Eigen::Vector3d(st.theta[0], st.theta[1], st.theta[2]);
            const Eigen::Vector3d mean = acc / static_cast<double>(nvox);
            const Eigen::Matrix3d chol = (sigma / static_cast<double>(nvox)).llt().matrixL();
            const Eigen::Vector3d z(gibbs_rng.normal(), gibbs_rng.normal(), gibbs_rng.normal());
            mu = mean + chol * z;
        }
        if (update_sigma) {
            Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
            for (const auto& st : states) {
                const Eigen::Vector3d e =
                    Eigen::Vector3d(st.theta[0], st.theta[1], st.theta[2]) - mu;
                scatter += e * e.transpose();
            }
            scatter += std::max(1e-12, 1e-10 * scatter.trace() / 3.0) * Eigen::Matrix3d::Identity();
            // Jeffreys hyper-prior |Sigma|^{-1/2} gives Sigma | theta, mu ~
            // inverse-Wishart(scatter, nvox - 3); sampled via Bartlett.
            const double df = std::max<double>(static_cast<double>(nvox) - 3.0, 4.0);
            const Eigen::Matrix3d psi_inv = scatter.llt().solve(Eigen::Matrix3d::Identity());
            const Eigen::Matrix3d l = psi_inv.llt().matrixL();
            Eigen::Matrix3d a = Eigen::Matrix3d::Zero();
            for (int i = 0; i < 3; ++i) a(i, i) = std::sqrt(2.0 * gamma_draw(0.5 * (df - i)));
            a(1, 0) = gibbs_rng.normal();
            a(2, 0) = gibbs_rng.normal();
            a(2, 1) = gibbs_rng.normal();
            const Eigen::Matrix3d la = l * a;
            const Eigen::Matrix3d wishart = la * la.transpose();
            sigma = wishart.llt().solve(Eigen::Matrix3d::Identity());
        }
    }

    ParameterMaps maps;
    maps.allocate(geom);
    maps.mask = mask;
    const double ns = static_cast<double>(samples);
    for (std::size_t v = 0; v < nvox; ++v) {
        const auto& st = states[v];
        const TransformedParams mean_t{st.sum[0] / ns, st.sum[1] / ns, st.sum[2] / ns};
        IvimParams p = model::from_transformed(mean_t, 1.0);
        p.y0 = model::ml_amplitude(signals[v], b, mean_t);
        const std::size_t idx = voxels[v];
        maps.f_map.data[idx] = p.f;
        maps.d_map.data[idx] = p.d;
        maps.ds_map.data[idx] = p.ds;
        maps.y0_map.data[idx] = p.y0;
    }
    return maps;
}

FitMethod fit_method_from_string(const std::string& s) {
    if (s == "pcn") return FitMethod::pcn;
    if (s == "rw") return FitMethod::rw;
    if (s == "lsq") return FitMethod::lsq;
    if (s == "seg") return FitMethod::seg;
    throw ValidationError("unknown fit method: " + s);
}

std::string to_string(FitMethod m) {
    switch (m) {
    case FitMethod::pcn: return "pcn";
    case FitMethod::rw: return "rw";
    case FitMethod::lsq: return "lsq";
    case FitMethod::seg: return "seg";
    }
    return "?";
}

ParameterMaps fit_volume(const BValueSeries& series, const MaskVolume& mask,
                         const FitOptions& options, FitDiagnostics* diag) {
    series.validate();
    if (!(mask.geom == series.geometry()))
        throw ValidationError("fit_volume: mask geometry mismatch");

    const VolumeGeometry& geom = series.geometry();
    if (diag) *diag = FitDiagnostics{};

    if (mask.count() == 0) {
        ParameterMaps maps;
        maps.allocate(geom);
        maps.mask = mask;
        return maps;
    }

    ParameterMaps maps;
    if (options.method == FitMethod::rw) {
        maps = rw_fit_volume(series, mask, options.chain, options.threads);
    } else {
        maps.allocate(geom);
        maps.mask = mask;
        std::vector<std::array<int, 3>> coords;
        for (int z = 0; z < geom.nz(); ++z)
            for (int y = 0; y < geom.ny(); ++y)
                for (int x = 0; x < geom.nx(); ++x)
                    if (mask.at(x, y, z)) coords.push_back({x, y, z});

        std::vector<std::uint8_t> fellback(coords.size(), 0);
        std::vector<std::array<double, 3>> acc(coords.size(), {0, 0, 0});
        const std::vector<double>& b = series.bvalues;

        parallel_for(coords.size(), options.threads, [&](std::size_t i) {
            const auto& c = coords[i];
            const std::vector<double> y = series.voxel_signal(c[0], c[1], c[2]);
            bool fb = false;
            const IvimParams init = robust_segmented(y, b, options.b_threshold, &fb);
            fellback[i] = fb ? 1 : 0;
            IvimParams fitted = init;
            if (options.method == FitMethod::lsq) {
                fitted = model::lsq_fit_lm(y, b, init).params;
            } else if (options.method == FitMethod::pcn) {
                const std::size_t vidx = maps.f_map.index(c[0], c[1], c[2]);
                Rng rng = Rng::keyed(options.chain.seed, rng_tag::chain, vidx, 1);
                const ChainResult r = pcn_fit_voxel(y, b, init, options.chain, rng);
                fitted = r.point;
                acc[i] = r.acceptance;
            }
            const std::size_t idx = maps.f_map.index(c[0], c[1], c[2]);
            maps.f_map.data[idx] = fitted.f;
            maps.d_map.data[idx] = fitted.d;
            maps.ds_map.data[idx] = fitted.ds;
            maps.y0_map.data[idx] = fitted.y0;
        });

        if (diag) {
            diag->voxels = coords.size();
            for (std::size_t i = 0; i < coords.size(); ++i) {
                diag->fallback_inits += fellback[i];
                for (int j = 0; j < 3; ++j) diag->mean_acceptance[j] += acc[i][j];
            }
            for (int j = 0; j < 3; ++j) diag->mean_acceptance[j] /= coords.size();
        }
    }

    // Per-voxel mean absolute residual at the fitted parameters.
    const std::size_t nb = series.count();
    for (int z = 0; z < geom.nz(); ++z)
        for (int y = 0; y < geom.ny(); ++y)
            for (int x = 0; x < geom.nx(); ++x) {
                if (!mask.at(x, y, z)) continue;
                const std::size_t idx = maps.f_map.index(x, y, z);
                const double f = maps.f_map.data[idx];
                const double d = maps.d_map.data[idx];
                const double ds = maps.ds_map.data[idx];
                const double y0 = maps.y0_map.data[idx];
                double s = 0.0;
                for (std::size_t i = 0; i < nb; ++i) {
                    const double bi = series.bvalues[i];
                    const double m = y0 * (f * std::exp(-bi * ds) + (1.0 - f) * std::exp(-bi * d));
                    s += std::abs(series.volumes[i].data[idx] - m);
                }
                maps.mae_map.data[idx] = s / static_cast<double>(nb);
            }
    return maps;
}

} // namespace ivim::mcmc
