// geometry.hpp - volume containers and 2D deformation primitives.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "ivim/errors.hpp"

namespace ivim {

// 3D voxel lattice with physical placement. Sample points sit at voxel
// centers; the through-plane center-to-center step is spacing.z + slice_gap.
struct VolumeGeometry {
    std::array<int, 3> dims{1, 1, 1};
    std::array<double, 3> spacing{1.0, 1.0, 1.0}; // mm
    std::array<double, 3> origin{0.0, 0.0, 0.0};  // mm, center of voxel (0,0,0)
    double slice_gap = 0.0;                       // mm

    int nx() const { return dims[0]; }
    int ny() const { return dims[1]; }
    int nz() const { return dims[2]; }
    std::size_t voxel_count() const {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }
    double step(int axis) const { return spacing[axis] + (axis == 2 ? slice_gap : 0.0); }
    double coord(int axis, double index) const { return origin[axis] + index * step(axis); }
    double index_of(int axis, double coord_mm) const {
        return (coord_mm - origin[axis]) / step(axis);
    }
    // Physical extent covered by voxel centers along an axis.
    double extent(int axis) const { return (dims[axis] - 1) * step(axis); }

    void validate() const {
        for (int a = 0; a < 3; ++a) {
            if (dims[a] < 1) throw ValidationError("geometry: dims must be >= 1");
            if (!(spacing[a] > 0.0)) throw ValidationError("geometry: spacing must be > 0");
        }
        if (slice_gap < 0.0) throw ValidationError("geometry: slice_gap must be >= 0");
    }

    bool operator==(const VolumeGeometry&) const = default;
};

// Scalar voxel data, row-major with x fastest.
struct ScalarVolume {
    VolumeGeometry geom;
    std::vector<double> data;

    ScalarVolume() = default;
    explicit ScalarVolume(const VolumeGeometry& g, double fill = 0.0)
        : geom(g), data(g.voxel_count(), fill) {}

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(geom.dims[0]) *
                   (static_cast<std::size_t>(y) + static_cast<std::size_t>(geom.dims[1]) * z);
    }
    double& at(int x, int y, int z) { return data[index(x, y, z)]; }
    double at(int x, int y, int z) const { return data[index(x, y, z)]; }

    void validate() const {
        geom.validate();
        if (data.size() != geom.voxel_count())
            throw ValidationError("volume: data length does not match dims");
    }
};

// 2D scalar image (one slice), row-major, x fastest.
struct Slice2D {
    int nx = 0, ny = 0;
    std::vector<double> data;

    Slice2D() = default;
    Slice2D(int w, int h, double fill = 0.0) : nx(w), ny(h), data(static_cast<std::size_t>(w) * h, fill) {}
    std::size_t index(int x, int y) const { return static_cast<std::size_t>(x) + static_cast<std::size_t>(nx) * y; }
    double& at(int x, int y) { return data[index(x, y)]; }
    double at(int x, int y) const { return data[index(x, y)]; }
    std::size_t size() const { return data.size(); }
};

// Dense per-pixel displacement (u, v) in voxel units.
struct DisplacementField2D {
    int nx = 0, ny = 0;
    std::vector<double> u, v;

    DisplacementField2D() = default;
    DisplacementField2D(int w, int h)
        : nx(w), ny(h), u(static_cast<std::size_t>(w) * h, 0.0), v(static_cast<std::size_t>(w) * h, 0.0) {}
    std::size_t index(int x, int y) const { return static_cast<std::size_t>(x) + static_cast<std::size_t>(nx) * y; }
};

// B-spline (first order) control grid over a slice; node (0,0) maps to pixel
// (0,0) and node (gx-1, gy-1) to pixel (nx-1, ny-1).
struct ControlGrid2D {
    int gx = 0, gy = 0;
    std::vector<double> u, v; // per-node displacement coefficients, voxel units

    ControlGrid2D() = default;
    ControlGrid2D(int w, int h)
        : gx(w), gy(h), u(static_cast<std::size_t>(w) * h, 0.0), v(static_cast<std::size_t>(w) * h, 0.0) {}
    std::size_t index(int x, int y) const { return static_cast<std::size_t>(x) + static_cast<std::size_t>(gx) * y; }
    std::size_t nodes() const { return u.size(); }

    void validate() const {
        if (gx < 2 || gy < 2) throw ValidationError("control grid: dims must be >= 2x2");
    }
};

// Boolean voxel mask sharing a volume geometry.
struct MaskVolume {
    VolumeGeometry geom;
    std::vector<std::uint8_t> data;

    MaskVolume() = default;
    explicit MaskVolume(const VolumeGeometry& g, bool fill = false)
        : geom(g), data(g.voxel_count(), fill ? 1 : 0) {}
    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(geom.dims[0]) *
                   (static_cast<std::size_t>(y) + static_cast<std::size_t>(geom.dims[1]) * z);
    }
    bool at(int x, int y, int z) const { return data[index(x, y, z)] != 0; }
    void set(int x, int y, int z, bool b) { data[index(x, y, z)] = b ? 1 : 0; }
    std::size_t count() const {
        std::size_t n = 0;
        for (auto b : data) n += (b != 0);
        return n;
    }
};

Slice2D extract_slice(const ScalarVolume& vol, int z);
void insert_slice(ScalarVolume& vol, int z, const Slice2D& s);

} // namespace ivim
