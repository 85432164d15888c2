// resample.cpp - interpolation and warping primitives.

#include "ivim/resample.hpp"

#include <algorithm>
#include <cmath>

namespace ivim {

Slice2D extract_slice(const ScalarVolume& vol, int z) {
    if (z < 0 || z >= vol.geom.nz()) throw ValidationError("extract_slice: z out of range");
    Slice2D s(vol.geom.nx(), vol.geom.ny());
    const std::size_t plane = s.size();
    std::copy_n(vol.data.begin() + static_cast<std::ptrdiff_t>(plane) * z, plane, s.data.begin());
    return s;
}

void insert_slice(ScalarVolume& vol, int z, const Slice2D& s) {
    if (z < 0 || z >= vol.geom.nz()) throw ValidationError("insert_slice: z out of range");
    if (s.nx != vol.geom.nx() || s.ny != vol.geom.ny())
        throw ValidationError("insert_slice: slice dims mismatch");
    std::copy(s.data.begin(), s.data.end(),
              vol.data.begin() + static_cast<std::ptrdiff_t>(s.size()) * z);
}

namespace {

// Clamp a continuous coordinate into [0, n-1] and split into base + fraction.
inline void split_linear(double x, int n, int& i0, double& t) {
    if (n == 1) {
        i0 = 0;
        t = 0.0;
        return;
    }
    x = std::clamp(x, 0.0, static_cast<double>(n - 1));
    i0 = std::min(static_cast<int>(x), n - 2);
    t = x - i0;
}

inline int clampi(int i, int n) { return std::clamp(i, 0, n - 1); }

// Catmull-Rom weights for taps at offsets -1, 0, 1, 2.
inline void catmull_rom(double t, double w[4]) {
    const double t2 = t * t;
    const double t3 = t2 * t;
    w[0] = -0.5 * t3 + t2 - 0.5 * t;
    w[1] = 1.5 * t3 - 2.5 * t2 + 1.0;
    w[2] = -1.5 * t3 + 2.0 * t2 + 0.5 * t;
    w[3] = 0.5 * t3 - 0.5 * t2;
}

} // namespace

double sample_bilinear(const Slice2D& img, double x, double y) {
    int ix, iy;
    double tx, ty;
    split_linear(x, img.nx, ix, tx);
    split_linear(y, img.ny, iy, ty);
    const int ix1 = std::min(ix + 1, img.nx - 1);
    const int iy1 = std::min(iy + 1, img.ny - 1);
    const double v00 = img.at(ix, iy), v10 = img.at(ix1, iy);
    const double v01 = img.at(ix, iy1), v11 = img.at(ix1, iy1);
    return (1 - ty) * ((1 - tx) * v00 + tx * v10) + ty * ((1 - tx) * v01 + tx * v11);
}

SampleGrad sample_bilinear_grad(const Slice2D& img, double x, double y) {
    const bool clamped_x = (x <= 0.0 || x >= img.nx - 1 || img.nx == 1);
    const bool clamped_y = (y <= 0.0 || y >= img.ny - 1 || img.ny == 1);
    int ix, iy;
    double tx, ty;
    split_linear(x, img.nx, ix, tx);
    split_linear(y, img.ny, iy, ty);
    const int ix1 = std::min(ix + 1, img.nx - 1);
    const int iy1 = std::min(iy + 1, img.ny - 1);
    const double v00 = img.at(ix, iy), v10 = img.at(ix1, iy);
    const double v01 = img.at(ix, iy1), v11 = img.at(ix1, iy1);
    SampleGrad g;
    g.value = (1 - ty) * ((1 - tx) * v00 + tx * v10) + ty * ((1 - tx) * v01 + tx * v11);
    g.dx = clamped_x ? 0.0 : (1 - ty) * (v10 - v00) + ty * (v11 - v01);
    g.dy = clamped_y ? 0.0 : (1 - tx) * (v01 - v00) + tx * (v11 - v10);
    return g;
}

double sample_cubic(const Slice2D& img, double x, double y) {
    if (img.nx == 1 && img.ny == 1) return img.at(0, 0);
    x = std::clamp(x, 0.0, static_cast<double>(img.nx - 1));
    y = std::clamp(y, 0.0, static_cast<double>(img.ny - 1));
    const int bx = static_cast<int>(std::floor(x));
    const int by = static_cast<int>(std::floor(y));
    double wx[4], wy[4];
    catmull_rom(x - bx, wx);
    catmull_rom(y - by, wy);
    double acc = 0.0;
    for (int j = 0; j < 4; ++j) {
        const int yy = clampi(by - 1 + j, img.ny);
        double row = 0.0;
        for (int i = 0; i < 4; ++i) row += wx[i] * img.at(clampi(bx - 1 + i, img.nx), yy);
        acc += wy[j] * row;
    }
    return acc;
}

double sample_trilinear(const ScalarVolume& vol, double x, double y, double z) {
    int ix, iy, iz;
    double tx, ty, tz;
    split_linear(x, vol.geom.nx(), ix, tx);
    split_linear(y, vol.geom.ny(), iy, ty);
    split_linear(z, vol.geom.nz(), iz, tz);
    const int ix1 = std::min(ix + 1, vol.geom.nx() - 1);
    const int iy1 = std::min(iy + 1, vol.geom.ny() - 1);
    const int iz1 = std::min(iz + 1, vol.geom.nz() - 1);
    // two-sided weights stay exact at t = 0 and t = 1
    auto lerp = [](double a, double b, double t) { return (1.0 - t) * a + t * b; };
    const double c00 = lerp(vol.at(ix, iy, iz), vol.at(ix1, iy, iz), tx);
    const double c10 = lerp(vol.at(ix, iy1, iz), vol.at(ix1, iy1, iz), tx);
    const double c01 = lerp(vol.at(ix, iy, iz1), vol.at(ix1, iy, iz1), tx);
    const double c11 = lerp(vol.at(ix, iy1, iz1), vol.at(ix1, iy1, iz1), tx);
    return lerp(lerp(c00, c10, ty), lerp(c01, c11, ty), tz);
}

double sample_tricubic(const ScalarVolume& vol, double x, double y, double z) {
    const int nx = vol.geom.nx(), ny = vol.geom.ny(), nz = vol.geom.nz();
    x = std::clamp(x, 0.0, static_cast<double>(nx - 1));
    y = std::clamp(y, 0.0, static_cast<double>(ny - 1));
    z = std::clamp(z, 0.0, static_cast<double>(nz - 1));
    const int bx = static_cast<int>(std::floor(x));
    const int by = static_cast<int>(std::floor(y));
    const int bz = static_cast<int>(std::floor(z));
    double wx[4], wy[4], wz[4];
    catmull_rom(x - bx, wx);
    catmull_rom(y - by, wy);
    catmull_rom(z - bz, wz);
    double acc = 0.0;
    for (int k = 0; k < 4; ++k) {
        const int zz = clampi(bz - 1 + k, nz);
        double plane = 0.0;
        for (int j = 0; j < 4; ++j) {
            const int yy = clampi(by - 1 + j, ny);
            double row = 0.0;
            for (int i = 0; i < 4; ++i) row += wx[i] * vol.at(clampi(bx - 1 + i, nx), yy, zz);
            plane += wy[j] * row;
        }
        acc += wz[k] * plane;
    }
    return acc;
}

namespace {

template <typename Sampler>
ScalarVolume resample_impl(const ScalarVolume& vol, const VolumeGeometry& target, Sampler sample) {
    vol.validate();
    target.validate();
    ScalarVolume out(target);
    std::size_t n = 0;
    for (int z = 0; z < target.nz(); ++z)
        for (int y = 0; y < target.ny(); ++y)
            for (int x = 0; x < target.nx(); ++x) {
                const double sx = vol.geom.index_of(0, target.coord(0, x));
                const double sy = vol.geom.index_of(1, target.coord(1, y));
                const double sz = vol.geom.index_of(2, target.coord(2, z));
                out.data[n++] = sample(vol, sx, sy, sz);
            }
    return out;
}

} // namespace

ScalarVolume resample_linear(const ScalarVolume& vol, const VolumeGeometry& target) {
    return resample_impl(vol, target,
                         [](const ScalarVolume& v, double x, double y, double z) {
                             return sample_trilinear(v, x, y, z);
                         });
}

ScalarVolume resample_cubic(const ScalarVolume& vol, const VolumeGeometry& target) {
    return resample_impl(vol, target,
                         [](const ScalarVolume& v, double x, double y, double z) {
                             return sample_tricubic(v, x, y, z);
                         });
}

DisplacementField2D densify(const ControlGrid2D& grid, int nx, int ny) {
    grid.validate();
    if (nx < 1 || ny < 1) throw ValidationError("densify: image dims must be >= 1");
    DisplacementField2D field(nx, ny);
    const double sx = nx > 1 ? static_cast<double>(grid.gx - 1) / (nx - 1) : 0.0;
    const double sy = ny > 1 ? static_cast<double>(grid.gy - 1) / (ny - 1) : 0.0;
    for (int y = 0; y < ny; ++y) {
        int jy;
        double ty;
        split_linear(y * sy, grid.gy, jy, ty);
        for (int x = 0; x < nx; ++x) {
            int jx;
            double tx;
            split_linear(x * sx, grid.gx, jx, tx);
            const std::size_t i00 = grid.index(jx, jy);
            const std::size_t i10 = grid.index(jx + 1, jy);
            const std::size_t i01 = grid.index(jx, jy + 1);
            const std::size_t i11 = grid.index(jx + 1, jy + 1);
            const double w00 = (1 - tx) * (1 - ty), w10 = tx * (1 - ty);
            const double w01 = (1 - tx) * ty, w11 = tx * ty;
            const std::size_t p = field.index(x, y);
            field.u[p] = w00 * grid.u[i00] + w10 * grid.u[i10] + w01 * grid.u[i01] + w11 * grid.u[i11];
            field.v[p] = w00 * grid.v[i00] + w10 * grid.v[i10] + w01 * grid.v[i01] + w11 * grid.v[i11];
        }
    }
    return field;
}

ControlGrid2D densify_adjoint(const DisplacementField2D& field, int gx, int gy) {
    ControlGrid2D grid(gx, gy);
    grid.validate();
    const int nx = field.nx, ny = field.ny;
    const double sx = nx > 1 ? static_cast<double>(gx - 1) / (nx - 1) : 0.0;
    const double sy = ny > 1 ? static_cast<double>(gy - 1) / (ny - 1) : 0.0;
    for (int y = 0; y < ny; ++y) {
        int jy;
        double ty;
        split_linear(y * sy, gy, jy, ty);
        for (int x = 0; x < nx; ++x) {
            int jx;
            double tx;
            split_linear(x * sx, gx, jx, tx);
            const double w00 = (1 - tx) * (1 - ty), w10 = tx * (1 - ty);
            const double w01 = (1 - tx) * ty, w11 = tx * ty;
            const std::size_t p = field.index(x, y);
            grid.u[grid.index(jx, jy)] += w00 * field.u[p];
            grid.u[grid.index(jx + 1, jy)] += w10 * field.u[p];
            grid.u[grid.index(jx, jy + 1)] += w01 * field.u[p];
            grid.u[grid.index(jx + 1, jy + 1)] += w11 * field.u[p];
            grid.v[grid.index(jx, jy)] += w00 * field.v[p];
            grid.v[grid.index(jx + 1, jy)] += w10 * field.v[p];
            grid.v[grid.index(jx, jy + 1)] += w01 * field.v[p];
            grid.v[grid.index(jx + 1, jy + 1)] += w11 * field.v[p];
        }
    }
    return grid;
}

Slice2D warp(const Slice2D& img, const DisplacementField2D& field) {
    if (img.nx != field.nx || img.ny != field.ny)
        throw ValidationError("warp: image and field dims mismatch");
    Slice2D out(img.nx, img.ny);
    for (int y = 0; y < img.ny; ++y)
        for (int x = 0; x < img.nx; ++x) {
            const std::size_t p = field.index(x, y);
            out.at(x, y) = sample_bilinear(img, x + field.u[p], y + field.v[p]);
        }
    return out;
}

DisplacementField2D compose_fields(const DisplacementField2D& f, const DisplacementField2D& g) {
    if (f.nx != g.nx || f.ny != g.ny) throw ValidationError("compose_fields: dims mismatch");
    DisplacementField2D out(f.nx, f.ny);
    Slice2D gu{g.nx, g.ny}, gv{g.nx, g.ny};
    gu.data = g.u;
    gv.data = g.v;
    for (int y = 0; y < f.ny; ++y)
        for (int x = 0; x < f.nx; ++x) {
            const std::size_t p = f.index(x, y);
            const double qx = x + f.u[p];
            const double qy = y + f.v[p];
            out.u[p] = f.u[p] + sample_bilinear(gu, qx, qy);
            out.v[p] = f.v[p] + sample_bilinear(gv, qx, qy);
        }
    return out;
}

DisplacementField2D invert_field(const DisplacementField2D& field, int iters) {
    DisplacementField2D inv(field.nx, field.ny);
    Slice2D fu{field.nx, field.ny}, fv{field.nx, field.ny};
    fu.data = field.u;
    fv.data = field.v;
    for (int it = 0; it < iters; ++it) {
        for (int y = 0; y < field.ny; ++y)
            for (int x = 0; x < field.nx; ++x) {
                const std::size_t p = field.index(x, y);
                const double qx = x + inv.u[p];
                const double qy = y + inv.v[p];
                inv.u[p] = -sample_bilinear(fu, qx, qy);
                inv.v[p] = -sample_bilinear(fv, qx, qy);
            }
    }
    return inv;
}

} // namespace ivim
