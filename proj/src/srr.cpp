// srr.cpp - super-resolution operators and solver.

#include "ivim/srr.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

#include "ivim/parallel.hpp"
#include "ivim/resample.hpp"

namespace ivim::srr {

namespace {

constexpr double kFwhmToSigma = 0.42466090014400952136075141705144; // 1 / (2 sqrt(2 ln 2))

// 1D zero-padded Gaussian convolution with per-sample renormalization over
// the valid taps (preserves constants) and its exact adjoint.
struct Kernel1D {
    std::vector<double> taps; // symmetric, centered, sums to 1
    int radius = 0;
    bool trivial() const { return taps.empty(); }
};

Kernel1D make_kernel(double sigma_vox) {
    Kernel1D k;
    if (sigma_vox < 1e-6) return k;
    k.radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma_vox)));
    k.taps.resize(2 * k.radius + 1);
    double sum = 0.0;
    for (int i = -k.radius; i <= k.radius; ++i) {
        const double w = std::exp(-0.5 * (i / sigma_vox) * (i / sigma_vox));
        k.taps[i + k.radius] = w;
        sum += w;
    }
    for (double& w : k.taps) w /= sum;
    return k;
}

// Renormalization factor over valid taps at position i of an n-length line.
inline double norm_at(const Kernel1D& k, int i, int n) {
    const int lo = std::max(-k.radius, -i);
    const int hi = std::min(k.radius, n - 1 - i);
    double s = 0.0;
    for (int o = lo; o <= hi; ++o) s += k.taps[o + k.radius];
    return s;
}

// Applies the blur along one axis: forward out_i = sum_j w_ij in_j with
// w_ij = taps[j-i]/norm_i; adjoint out_j = sum_i taps[j-i] in_i / norm_i.
void blur_axis(ScalarVolume& vol, int axis, const Kernel1D& k, bool adjoint_mode, int threads) {
    if (k.trivial()) return;
    const int n = vol.geom.dims[axis];
    if (n == 1) return;
    const int nx = vol.geom.nx(), ny = vol.geom.ny();
    std::array<std::size_t, 3> stride = {1, static_cast<std::size_t>(nx),
                                         static_cast<std::size_t>(nx) * ny};
    const std::size_t line_stride = stride[axis];

    // Enumerate all lines along `axis`.
    std::array<int, 2> other{};
    int o = 0;
    for (int a = 0; a < 3; ++a)
        if (a != axis) other[o++] = a;
    const int n0 = vol.geom.dims[other[0]];
    const int n1 = vol.geom.dims[other[1]];

    std::vector<double> norms(n);
    for (int i = 0; i < n; ++i) norms[i] = norm_at(k, i, n);

    parallel_for(static_cast<std::size_t>(n0) * n1, threads, [&](std::size_t line) {
        const int i0 = static_cast<int>(line % n0);
        const int i1 = static_cast<int>(line / n0);
        const std::size_t base = stride[other[0]] * i0 + stride[other[1]] * i1;
        std::vector<double> buf(n), out(n, 0.0);
        for (int i = 0; i < n; ++i) buf[i] = vol.data[base + line_stride * i];
        if (!adjoint_mode) {
            for (int i = 0; i < n; ++i) {
                const int lo = std::max(-k.radius, -i);
                const int hi = std::min(k.radius, n - 1 - i);
                double s = 0.0;
                for (int off = lo; off <= hi; ++off) s += k.taps[off + k.radius] * buf[i + off];
                out[i] = s / norms[i];
            }
        } else {
            for (int i = 0; i < n; ++i) {
                const double scaled = buf[i] / norms[i];
                const int lo = std::max(-k.radius, -i);
                const int hi = std::min(k.radius, n - 1 - i);
                for (int off = lo; off <= hi; ++off)
                    out[i + off] += k.taps[off + k.radius] * scaled;
            }
        }
        for (int i = 0; i < n; ++i) vol.data[base + line_stride * i] = out[i];
    });
}

VolumeGeometry permute_geometry(const VolumeGeometry& g, const AxisPermutation& perm) {
    VolumeGeometry out = g;
    for (int a = 0; a < 3; ++a) {
        out.dims[a] = g.dims[perm.map[a]];
        out.spacing[a] = g.step(perm.map[a]);
        out.origin[a] = g.origin[perm.map[a]];
    }
    out.slice_gap = 0.0; // gap already folded into the effective step
    return out;
}

// Trilinear gather weights from source geometry to target geometry; the
// adjoint scatters the same weights.
void resample_gather(const ScalarVolume& src, const VolumeGeometry& dst_geom, ScalarVolume& dst) {
    dst = resample_linear(src, dst_geom);
}

void resample_scatter(const ScalarVolume& dst_values, const VolumeGeometry& src_geom,
                      ScalarVolume& src_out) {
    src_out = ScalarVolume(src_geom);
    const VolumeGeometry& dg = dst_values.geom;
    const int nx = src_geom.nx(), ny = src_geom.ny(), nz = src_geom.nz();
    auto split = [](double c, int n, int& i0, double& t) {
        if (n == 1) {
            i0 = 0;
            t = 0.0;
            return;
        }
        c = std::clamp(c, 0.0, static_cast<double>(n - 1));
        i0 = std::min(static_cast<int>(c), n - 2);
        t = c - i0;
    };
    std::size_t p = 0;
    for (int z = 0; z < dg.nz(); ++z)
        for (int y = 0; y < dg.ny(); ++y)
            for (int x = 0; x < dg.nx(); ++x, ++p) {
                const double v = dst_values.data[p];
                if (v == 0.0) continue;
                int ix, iy, iz;
                double tx, ty, tz;
                split(src_geom.index_of(0, dg.coord(0, x)), nx, ix, tx);
                split(src_geom.index_of(1, dg.coord(1, y)), ny, iy, ty);
                split(src_geom.index_of(2, dg.coord(2, z)), nz, iz, tz);
                const int ix1 = std::min(ix + 1, nx - 1);
                const int iy1 = std::min(iy + 1, ny - 1);
                const int iz1 = std::min(iz + 1, nz - 1);
                src_out.at(ix, iy, iz) += (1 - tx) * (1 - ty) * (1 - tz) * v;
                src_out.at(ix1, iy, iz) += tx * (1 - ty) * (1 - tz) * v;
                src_out.at(ix, iy1, iz) += (1 - tx) * ty * (1 - tz) * v;
                src_out.at(ix1, iy1, iz) += tx * ty * (1 - tz) * v;
                src_out.at(ix, iy, iz1) += (1 - tx) * (1 - ty) * tz * v;
                src_out.at(ix1, iy, iz1) += tx * (1 - ty) * tz * v;
                src_out.at(ix, iy1, iz1) += (1 - tx) * ty * tz * v;
                src_out.at(ix1, iy1, iz1) += tx * ty * tz * v;
            }
}

} // namespace

ScalarVolume permute_volume(const ScalarVolume& vol, const AxisPermutation& perm) {
    const VolumeGeometry out_geom = permute_geometry(vol.geom, perm);
    ScalarVolume out(out_geom);
    const int n0 = out_geom.dims[0], n1 = out_geom.dims[1], n2 = out_geom.dims[2];
    std::array<int, 3> src_idx{};
    std::size_t p = 0;
    for (int c = 0; c < n2; ++c)
        for (int b = 0; b < n1; ++b)
            for (int a = 0; a < n0; ++a, ++p) {
                src_idx[perm.map[0]] = a;
                src_idx[perm.map[1]] = b;
                src_idx[perm.map[2]] = c;
                out.data[p] = vol.at(src_idx[0], src_idx[1], src_idx[2]);
            }
    return out;
}

ScalarVolume StackOperator::forward(const ScalarVolume& x) const {
    if (!(x.geom == hr_geom)) throw ValidationError("stack forward: geometry mismatch");
    ScalarVolume t = permute_volume(x, orient);
    for (int a = 0; a < 3; ++a) {
        const double sigma_vox = blur_fwhm_mm[a] * kFwhmToSigma / t.geom.step(a);
        blur_axis(t, a, make_kernel(sigma_vox), false, 1);
    }
    ScalarVolume out;
    resample_gather(t, stack_geom, out);
    return out;
}

ScalarVolume StackOperator::adjoint(const ScalarVolume& y) const {
    if (!(y.geom == stack_geom)) throw ValidationError("stack adjoint: geometry mismatch");
    const VolumeGeometry perm_geom = permute_geometry(hr_geom, orient);
    ScalarVolume t;
    resample_scatter(y, perm_geom, t);
    for (int a = 0; a < 3; ++a) {
        const double sigma_vox = blur_fwhm_mm[a] * kFwhmToSigma / t.geom.step(a);
        blur_axis(t, a, make_kernel(sigma_vox), true, 1);
    }
    return permute_volume(t, orient.inverse());
}

ScalarVolume apply_forward(const SrrOperators& ops, std::size_t i, const ScalarVolume& x) {
    return ops.stacks.at(i).forward(x);
}

ScalarVolume apply_adjoint(const SrrOperators& ops, std::size_t i, const ScalarVolume& y) {
    return ops.stacks.at(i).adjoint(y);
}

double beltrami(const ScalarVolume& x, double beta, ScalarVolume* grad) {
    if (!(beta > 0.0)) throw ValidationError("beltrami: beta must be > 0");
    const int nx = x.geom.nx(), ny = x.geom.ny(), nz = x.geom.nz();
    if (grad) *grad = ScalarVolume(x.geom);
    double total = 0.0;
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y)
            for (int xx = 0; xx < nx; ++xx) {
                const double v = x.at(xx, y, z);
                const double dx = (xx + 1 < nx) ? x.at(xx + 1, y, z) - v : 0.0;
                const double dy = (y + 1 < ny) ? x.at(xx, y + 1, z) - v : 0.0;
                const double dz = (z + 1 < nz) ? x.at(xx, y, z + 1) - v : 0.0;
                const double root = std::sqrt(1.0 + beta * (dx * dx + dy * dy + dz * dz));
                total += root;
                if (grad) {
                    const double w = beta / root;
                    if (xx + 1 < nx) {
                        grad->at(xx + 1, y, z) += dx * w;
                        grad->at(xx, y, z) -= dx * w;
                    }
                    if (y + 1 < ny) {
                        grad->at(xx, y + 1, z) += dy * w;
                        grad->at(xx, y, z) -= dy * w;
                    }
                    if (z + 1 < nz) {
                        grad->at(xx, y, z + 1) += dz * w;
                        grad->at(xx, y, z) -= dz * w;
                    }
                }
            }
    return total;
}

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

} // namespace

SrrResult srr_reconstruct(const std::vector<ScalarVolume>& stacks, const SrrOperators& ops,
                          const SrrConfig& cfg, int threads) {
    cfg.validate();
    if (stacks.size() != ops.stacks.size() || stacks.empty())
        throw ValidationError("srr: stack/operator count mismatch");
    const VolumeGeometry hr = ops.stacks[0].hr_geom;
    for (const auto& op : ops.stacks)
        if (!(op.hr_geom == hr)) throw ValidationError("srr: operators disagree on HR geometry");

    // Initial iterate: average of the cubic-upsampled stacks mapped back to
    // the reconstruction frame.
    ScalarVolume x(hr);
    for (std::size_t i = 0; i < stacks.size(); ++i) {
        const VolumeGeometry perm_geom = permute_geometry(hr, ops.stacks[i].orient);
        const ScalarVolume up = resample_cubic(stacks[i], perm_geom);
        const ScalarVolume back = permute_volume(up, ops.stacks[i].orient.inverse());
        for (std::size_t p = 0; p < x.data.size(); ++p) x.data[p] += back.data[p];
    }
    for (double& v : x.data) v /= static_cast<double>(stacks.size());

    // Per-stack terms evaluated as independent jobs, reduced in fixed order.
    auto objective_grad = [&](const ScalarVolume& xc, ScalarVolume* grad) {
        const std::size_t ns = stacks.size();
        std::vector<double> objs(ns, 0.0);
        std::vector<ScalarVolume> grads(grad ? ns : 0);
        parallel_for(ns, threads, [&](std::size_t i) {
            ScalarVolume r = ops.stacks[i].forward(xc);
            for (std::size_t p = 0; p < r.data.size(); ++p) r.data[p] -= stacks[i].data[p];
            objs[i] = dot(r.data, r.data);
            if (grad) grads[i] = ops.stacks[i].adjoint(r);
        });
        double obj = 0.0;
        if (grad) *grad = ScalarVolume(hr);
        for (std::size_t i = 0; i < ns; ++i) {
            obj += objs[i];
            if (grad)
                for (std::size_t p = 0; p < grad->data.size(); ++p)
                    grad->data[p] += 2.0 * grads[i].data[p];
        }
        if (cfg.lambda1 > 0.0) {
            ScalarVolume gb;
            const double rb = beltrami(xc, cfg.beta, grad ? &gb : nullptr);
            obj += cfg.lambda1 * rb;
            if (grad)
                for (std::size_t p = 0; p < grad->data.size(); ++p)
                    grad->data[p] += cfg.lambda1 * gb.data[p];
        }
        return obj;
    };

    // Lipschitz bound: 2 sum_i ||A_i||^2 from power iteration, plus the
    // Beltrami term's beta ||grad_op||^2 <= 12 beta.
    double op_norm_sq = 0.0;
    {
        ScalarVolume v(hr);
        std::uint64_t s = 0x9E3779B97F4A7C15ull; // fixed-seed xorshift fill
        for (auto& val : v.data) {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            val = static_cast<double>(s >> 11) * 0x1.0p-53 - 0.5;
        }
        double lambda = 0.0;
        for (int it = 0; it < cfg.power_iters; ++it) {
            ScalarVolume w(hr);
            for (const auto& op : ops.stacks) {
                const ScalarVolume fw = op.forward(v);
                const ScalarVolume bw = op.adjoint(fw);
                for (std::size_t p = 0; p < w.data.size(); ++p) w.data[p] += bw.data[p];
            }
            lambda = std::sqrt(dot(w.data, w.data)) / std::max(std::sqrt(dot(v.data, v.data)), 1e-300);
            const double nrm = std::sqrt(dot(w.data, w.data));
            if (nrm < 1e-300) break;
            for (std::size_t p = 0; p < v.data.size(); ++p) v.data[p] = w.data[p] / nrm;
        }
        op_norm_sq = lambda;
    }
    const double lipschitz = 2.0 * op_norm_sq + cfg.lambda1 * cfg.beta * 12.0;

    SrrResult out;
    ScalarVolume grad;
    double obj = objective_grad(x, &grad);
    out.objective_trace.push_back(obj);

    double step = 1.0 / std::max(lipschitz, 1e-12);
    for (int it = 0; it < cfg.max_iters; ++it) {
        const double gnorm_sq = dot(grad.data, grad.data);
        if (gnorm_sq < 1e-30) break;
        bool accepted = false;
        double obj_new = obj;
        ScalarVolume x_new;
        for (int ls = 0; ls < 30; ++ls) {
            x_new = x;
            for (std::size_t p = 0; p < x.data.size(); ++p) x_new.data[p] -= step * grad.data[p];
            obj_new = objective_grad(x_new, nullptr);
            if (std::isfinite(obj_new) && obj_new <= obj - 1e-4 * step * gnorm_sq) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;
        const double rel_drop = (obj - obj_new) / std::max(std::abs(obj), 1e-30);
        x = std::move(x_new);
        obj = objective_grad(x, &grad);
        out.objective_trace.push_back(obj);
        step *= 1.3;
        if (rel_drop < cfg.tol) {
            out.converged = true;
            out.x = x;
            out.final_objective = obj;
            return out;
        }
    }
    out.converged = false;
    out.x = std::move(x);
    out.final_objective = obj;
    return out;
}

void write_convergence_csv(const std::string& path, const std::vector<double>& trace) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open for write: " + path);
    out.precision(17);
    out << "iter,objective\n";
    for (std::size_t i = 0; i < trace.size(); ++i) out << i << "," << trace[i] << "\n";
}

} // namespace ivim::srr
