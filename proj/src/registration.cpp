// registration.cpp - LCC similarity, TV regularizer, LBFGS, and the two-step
// slice-wise motion correction.

#include "ivim/registration.hpp"

#include <algorithm>
#include <cmath>

#include "ivim/parallel.hpp"
#include "ivim/resample.hpp"

namespace ivim::reg {

namespace {

constexpr double kTvEps = 1e-9;

// Summed-area table with a zero top/left border row and column.
class IntegralImage {
public:
    IntegralImage(int nx, int ny) : nx_(nx), ny_(ny), sums_((nx + 1) * (ny + 1), 0.0) {}

    template <typename Getter>
    void build(int nx, int ny, Getter get) {
        for (int y = 0; y < ny; ++y) {
            double row = 0.0;
            for (int x = 0; x < nx; ++x) {
                row += get(x, y);
                at(x + 1, y + 1) = at(x + 1, y) + row;
            }
        }
    }

    // Inclusive box sum over [x0, x1] x [y0, y1].
    double box(int x0, int y0, int x1, int y1) const {
        return at(x1 + 1, y1 + 1) - at(x0, y1 + 1) - at(x1 + 1, y0) + at(x0, y0);
    }

private:
    double& at(int x, int y) { return sums_[static_cast<std::size_t>(y) * (nx_ + 1) + x]; }
    double at(int x, int y) const { return sums_[static_cast<std::size_t>(y) * (nx_ + 1) + x]; }
    int nx_, ny_;
    std::vector<double> sums_;
};

} // namespace

double lcc(const Slice2D& a, const Slice2D& b, int window, Slice2D* grad) {
    if (a.nx != b.nx || a.ny != b.ny) throw ValidationError("lcc: image dims mismatch");
    if (window < 3 || window % 2 == 0) throw ValidationError("lcc: window must be odd >= 3");
    const int nx = a.nx, ny = a.ny;
    const int r = window / 2;

    IntegralImage i1(nx, ny), ia(nx, ny), ib(nx, ny), iaa(nx, ny), ibb(nx, ny), iab(nx, ny);
    i1.build(nx, ny, [&](int, int) { return 1.0; });
    ia.build(nx, ny, [&](int x, int y) { return a.at(x, y); });
    ib.build(nx, ny, [&](int x, int y) { return b.at(x, y); });
    iaa.build(nx, ny, [&](int x, int y) { return a.at(x, y) * a.at(x, y); });
    ibb.build(nx, ny, [&](int x, int y) { return b.at(x, y) * b.at(x, y); });
    iab.build(nx, ny, [&](int x, int y) { return a.at(x, y) * b.at(x, y); });

    // Per-window coefficients spread back over their support for the gradient.
    Slice2D c1, c2, c3;
    if (grad) {
        c1 = Slice2D(nx, ny);
        c2 = Slice2D(nx, ny);
        c3 = Slice2D(nx, ny);
    }

    const double npix = static_cast<double>(nx) * ny;
    double total = 0.0;
    for (int y = 0; y < ny; ++y) {
        const int y0 = std::max(0, y - r), y1 = std::min(ny - 1, y + r);
        for (int x = 0; x < nx; ++x) {
            const int x0 = std::max(0, x - r), x1 = std::min(nx - 1, x + r);
            const double n = i1.box(x0, y0, x1, y1);
            const double ma = ia.box(x0, y0, x1, y1) / n;
            const double mb = ib.box(x0, y0, x1, y1) / n;
            const double saa = iaa.box(x0, y0, x1, y1) / n;
            const double sbb = ibb.box(x0, y0, x1, y1) / n;
            const double sab = iab.box(x0, y0, x1, y1) / n;
            const double va = std::max(0.0, saa - ma * ma);
            const double vb = std::max(0.0, sbb - mb * mb);
            const double eps_a = 1e-12 * std::max(saa, 1e-30);
            const double eps_b = 1e-12 * std::max(sbb, 1e-30);
            const bool const_a = va <= eps_a;
            const bool const_b = vb <= eps_b;
            if (const_a || const_b) {
                total += (const_a && const_b) ? 1.0 : 0.0;
                continue; // degenerate windows contribute no gradient
            }
            const double cov = sab - ma * mb;
            double r2 = cov * cov / (va * vb);
            r2 = std::min(r2, 1.0);
            total += r2;
            if (grad) {
                const double k1 = 2.0 * cov / (n * va * vb);
                const double k2 = -2.0 * cov * cov / (n * va * vb * vb);
                c1.at(x, y) = k1;
                c2.at(x, y) = k2;
                c3.at(x, y) = -k1 * ma - k2 * mb;
            }
        }
    }

    if (grad) {
        *grad = Slice2D(nx, ny);
        IntegralImage s1(nx, ny), s2(nx, ny), s3(nx, ny);
        s1.build(nx, ny, [&](int x, int y) { return c1.at(x, y); });
        s2.build(nx, ny, [&](int x, int y) { return c2.at(x, y); });
        s3.build(nx, ny, [&](int x, int y) { return c3.at(x, y); });
        for (int y = 0; y < ny; ++y) {
            const int y0 = std::max(0, y - r), y1 = std::min(ny - 1, y + r);
            for (int x = 0; x < nx; ++x) {
                const int x0 = std::max(0, x - r), x1 = std::min(nx - 1, x + r);
                grad->at(x, y) = (a.at(x, y) * s1.box(x0, y0, x1, y1) +
                                  b.at(x, y) * s2.box(x0, y0, x1, y1) +
                                  s3.box(x0, y0, x1, y1)) /
                                 npix;
            }
        }
    }
    return total / npix;
}

double tv_iso(const ControlGrid2D& k, ControlGrid2D* grad) {
    k.validate();
    if (grad) *grad = ControlGrid2D(k.gx, k.gy);
    double total = 0.0;
    for (int y = 0; y < k.gy; ++y)
        for (int x = 0; x < k.gx; ++x) {
            const std::size_t p = k.index(x, y);
            double dxu = 0.0, dxv = 0.0, dyu = 0.0, dyv = 0.0;
            std::size_t px = p, py = p;
            if (x + 1 < k.gx) {
                px = k.index(x + 1, y);
                dxu = k.u[px] - k.u[p];
                dxv = k.v[px] - k.v[p];
            }
            if (y + 1 < k.gy) {
                py = k.index(x, y + 1);
                dyu = k.u[py] - k.u[p];
                dyv = k.v[py] - k.v[p];
            }
            const double mag =
                std::sqrt(dxu * dxu + dxv * dxv + dyu * dyu + dyv * dyv + kTvEps * kTvEps);
            total += mag;
            if (grad) {
                const double inv = 1.0 / mag;
                if (x + 1 < k.gx) {
                    grad->u[px] += dxu * inv;
                    grad->u[p] -= dxu * inv;
                    grad->v[px] += dxv * inv;
                    grad->v[p] -= dxv * inv;
                }
                if (y + 1 < k.gy) {
                    grad->u[py] += dyu * inv;
                    grad->u[p] -= dyu * inv;
                    grad->v[py] += dyv * inv;
                    grad->v[p] -= dyv * inv;
                }
            }
        }
    return total;
}

LbfgsResult lbfgs_minimize(
    const std::function<double(const std::vector<double>&, std::vector<double>&)>& objective,
    std::vector<double> x0, int max_iters, int memory) {
    if (max_iters < 1) throw ValidationError("lbfgs: iters must be >= 1");
    const std::size_t dim = x0.size();
    LbfgsResult out;

    std::vector<double> x = std::move(x0);
    std::vector<double> g(dim), x_new(dim), g_new(dim), direction(dim);
    double fx = objective(x, g);
    ++out.evaluations;

    std::vector<std::vector<double>> s_hist, y_hist;
    std::vector<double> rho_hist;
    std::vector<double> alpha(memory);

    auto dot = [dim](const std::vector<double>& u, const std::vector<double>& v) {
        double s = 0.0;
        for (std::size_t i = 0; i < dim; ++i) s += u[i] * v[i];
        return s;
    };

    int it = 0;
    for (; it < max_iters; ++it) {
        const double gnorm = std::sqrt(dot(g, g));
        if (gnorm < 1e-14 * (1.0 + std::abs(fx))) break;

        // Two-loop recursion.
        direction = g;
        const int h = static_cast<int>(s_hist.size());
        for (int i = h - 1; i >= 0; --i) {
            alpha[i] = rho_hist[i] * dot(s_hist[i], direction);
            for (std::size_t kk = 0; kk < dim; ++kk) direction[kk] -= alpha[i] * y_hist[i][kk];
        }
        double gamma = 1.0;
        if (h > 0) gamma = dot(s_hist[h - 1], y_hist[h - 1]) / dot(y_hist[h - 1], y_hist[h - 1]);
        for (std::size_t kk = 0; kk < dim; ++kk) direction[kk] *= gamma;
        for (int i = 0; i < h; ++i) {
            const double beta = rho_hist[i] * dot(y_hist[i], direction);
            for (std::size_t kk = 0; kk < dim; ++kk)
                direction[kk] += (alpha[i] - beta) * s_hist[i][kk];
        }
        for (std::size_t kk = 0; kk < dim; ++kk) direction[kk] = -direction[kk];

        double slope = dot(g, direction);
        if (!(slope < 0.0)) {
            // Fall back to steepest descent when curvature information is bad.
            for (std::size_t kk = 0; kk < dim; ++kk) direction[kk] = -g[kk];
            slope = -gnorm * gnorm;
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
        }

        // Armijo backtracking.
        double step = (h == 0) ? std::min(1.0, 1.0 / std::max(gnorm, 1e-12)) : 1.0;
        constexpr double c1 = 1e-4;
        bool accepted = false;
        double f_new = fx;
        for (int ls = 0; ls < 40; ++ls) {
            for (std::size_t kk = 0; kk < dim; ++kk) x_new[kk] = x[kk] + step * direction[kk];
            f_new = objective(x_new, g_new);
            ++out.evaluations;
            if (std::isfinite(f_new) && f_new <= fx + c1 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            out.line_search_failed = true;
            break;
        }

        // Curvature update.
        std::vector<double> s_vec(dim), y_vec(dim);
        for (std::size_t kk = 0; kk < dim; ++kk) {
            s_vec[kk] = x_new[kk] - x[kk];
            y_vec[kk] = g_new[kk] - g[kk];
        }
        const double sy = dot(s_vec, y_vec);
        if (sy > 1e-12 * std::sqrt(dot(s_vec, s_vec)) * std::sqrt(dot(y_vec, y_vec))) {
            s_hist.push_back(std::move(s_vec));
            y_hist.push_back(std::move(y_vec));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > memory) {
                s_hist.erase(s_hist.begin());
                y_hist.erase(y_hist.begin());
                rho_hist.erase(rho_hist.begin());
            }
        }
        x.swap(x_new);
        g.swap(g_new);
        fx = f_new;
    }

    out.x = std::move(x);
    out.fx = fx;
    out.iterations = it;
    return out;
}

double pair_objective(const Slice2D& moving, const Slice2D& fixed, const RegConfig& cfg,
                      const ControlGrid2D& k, ControlGrid2D* grad) {
    if (moving.nx != fixed.nx || moving.ny != fixed.ny)
        throw ValidationError("pair_objective: image dims mismatch");
    const DisplacementField2D field = densify(k, moving.nx, moving.ny);

    Slice2D warped(moving.nx, moving.ny);
    std::vector<double> ix(warped.size()), iy(warped.size());
    for (int y = 0; y < moving.ny; ++y)
        for (int x = 0; x < moving.nx; ++x) {
            const std::size_t p = field.index(x, y);
            const SampleGrad s = sample_bilinear_grad(moving, x + field.u[p], y + field.v[p]);
            warped.data[p] = s.value;
            ix[p] = s.dx;
            iy[p] = s.dy;
        }

    Slice2D glcc;
    const double score = lcc(fixed, warped, cfg.lcc_window, grad ? &glcc : nullptr);

    ControlGrid2D gtv;
    const double tv = tv_iso(k, grad ? &gtv : nullptr);

    // The dissimilarity is summed over the pixel grid (pixel_count *
    // (1 - score)), which puts the default lambda2 on the same scale as the
    // node-summed TV term.
    const double npix = static_cast<double>(moving.nx) * moving.ny;

    if (grad) {
        // Chain rule: d(npix (1 - score))/d(field) -> scatter onto the grid.
        DisplacementField2D gfield(moving.nx, moving.ny);
        for (std::size_t p = 0; p < warped.size(); ++p) {
            gfield.u[p] = -npix * glcc.data[p] * ix[p];
            gfield.v[p] = -npix * glcc.data[p] * iy[p];
        }
        *grad = densify_adjoint(gfield, k.gx, k.gy);
        for (std::size_t i = 0; i < k.nodes(); ++i) {
            grad->u[i] += cfg.lambda2 * gtv.u[i];
            grad->v[i] += cfg.lambda2 * gtv.v[i];
        }
    }
    return npix * (1.0 - score) + cfg.lambda2 * tv;
}

RegPairResult register_pair(const Slice2D& moving, const Slice2D& fixed, const RegConfig& cfg,
                            int iters) {
    cfg.validate();
    if (moving.nx != fixed.nx || moving.ny != fixed.ny)
        throw ValidationError("register_pair: image dims mismatch");

    const int gx = cfg.grid_dims[0], gy = cfg.grid_dims[1];
    const std::size_t nodes = static_cast<std::size_t>(gx) * gy;

    auto objective = [&](const std::vector<double>& xk, std::vector<double>& grad_out) {
        ControlGrid2D k(gx, gy);
        std::copy_n(xk.begin(), nodes, k.u.begin());
        std::copy_n(xk.begin() + static_cast<std::ptrdiff_t>(nodes), nodes, k.v.begin());
        ControlGrid2D gk;
        const double value = pair_objective(moving, fixed, cfg, k, &gk);
        grad_out.resize(2 * nodes);
        std::copy(gk.u.begin(), gk.u.end(), grad_out.begin());
        std::copy(gk.v.begin(), gk.v.end(), grad_out.begin() + static_cast<std::ptrdiff_t>(nodes));
        return value;
    };

    std::vector<double> x0(2 * nodes, 0.0);
    std::vector<double> g0(x0.size());
    RegPairResult out;
    out.objective_initial = objective(x0, g0);

    const LbfgsResult r = lbfgs_minimize(objective, std::move(x0), iters, cfg.lbfgs_memory);

    out.grid = ControlGrid2D(cfg.grid_dims[0], cfg.grid_dims[1]);
    std::copy_n(r.x.begin(), nodes, out.grid.u.begin());
    std::copy_n(r.x.begin() + static_cast<std::ptrdiff_t>(nodes), nodes, out.grid.v.begin());
    out.objective_final = r.fx;
    out.evaluations = r.evaluations + 1;
    out.warning = r.line_search_failed;
    return out;
}

namespace {

SliceLogEntry log_entry(int b_index, int z, const RegPairResult& r) {
    SliceLogEntry e;
    e.b_index = b_index;
    e.slice = z;
    e.objective_initial = r.objective_initial;
    e.objective_final = r.objective_final;
    e.evaluations = r.evaluations;
    e.warning = r.warning;
    return e;
}

} // namespace

CorrectionResult interb_correct(const BValueSeries& series, const RegConfig& cfg) {
    cfg.validate();
    series.validate();
    const VolumeGeometry& geom = series.geometry();
    const std::size_t nb = series.count();
    const int nz = geom.nz();

    CorrectionResult out;
    out.series = series;
    out.fields.resize(nb);
    for (auto& fs : out.fields)
        fs.slices.assign(nz, DisplacementField2D(geom.nx(), geom.ny()));

    if (nb < 2) return out; // nothing to align; zero fields

    struct Job {
        std::size_t b;
        int z;
    };
    std::vector<Job> jobs;
    for (std::size_t i = 1; i < nb; ++i)
        for (int z = 0; z < nz; ++z) jobs.push_back({i, z});
    std::vector<SliceLogEntry> logs(jobs.size());

    parallel_for(jobs.size(), cfg.threads, [&](std::size_t j) {
        const auto [i, z] = jobs[j];
        const Slice2D moving = extract_slice(series.volumes[i], z);
        const Slice2D fixed = extract_slice(series.volumes[0], z);
        const RegPairResult r = register_pair(moving, fixed, cfg, cfg.iters_interb);
        const DisplacementField2D field = densify(r.grid, geom.nx(), geom.ny());
        insert_slice(out.series.volumes[i], z, warp(moving, field));
        out.fields[i].slices[z] = field;
        logs[j] = log_entry(static_cast<int>(i), z, r);
    });
    out.log = std::move(logs);
    return out;
}

CorrectionResult coregister(const BValueSeries& series, const ScalarVolume& anat_ref,
                            const RegConfig& cfg) {
    cfg.validate();
    series.validate();
    anat_ref.validate();
    const VolumeGeometry& geom = series.geometry();
    const int nz = geom.nz();
    const std::size_t nb = series.count();

    const ScalarVolume anat = resample_cubic(anat_ref, geom);

    CorrectionResult out;
    out.series = series;
    out.fields.resize(nb);
    for (auto& fs : out.fields)
        fs.slices.assign(nz, DisplacementField2D(geom.nx(), geom.ny()));
    std::vector<SliceLogEntry> logs(nz);
    std::vector<DisplacementField2D> slice_fields(nz, DisplacementField2D(geom.nx(), geom.ny()));

    parallel_for(static_cast<std::size_t>(nz), cfg.threads, [&](std::size_t zi) {
        const int z = static_cast<int>(zi);
        const Slice2D moving = extract_slice(series.volumes[0], z);
        const Slice2D fixed = extract_slice(anat, z);
        const RegPairResult r = register_pair(moving, fixed, cfg, cfg.iters_coreg);
        slice_fields[zi] = densify(r.grid, geom.nx(), geom.ny());
        logs[zi] = log_entry(0, z, r);
    });

    // Apply the b0-derived field to every b-value of the slice.
    std::vector<std::pair<std::size_t, int>> jobs;
    for (std::size_t i = 0; i < nb; ++i)
        for (int z = 0; z < nz; ++z) jobs.emplace_back(i, z);
    parallel_for(jobs.size(), cfg.threads, [&](std::size_t j) {
        const auto [i, z] = jobs[j];
        const Slice2D s = extract_slice(series.volumes[i], z);
        insert_slice(out.series.volumes[i], z, warp(s, slice_fields[z]));
        out.fields[i].slices[z] = slice_fields[z];
    });

    out.log = std::move(logs);
    return out;
}

} // namespace ivim::reg
