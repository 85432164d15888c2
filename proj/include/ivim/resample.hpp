// resample.hpp - interpolation, resampling, control-grid densification, warping.
//
// Out-of-bounds samples clamp to the nearest edge value everywhere.
#pragma once

#include "ivim/geometry.hpp"

namespace ivim {

// Bilinear sample of a slice at continuous pixel coordinates.
double sample_bilinear(const Slice2D& img, double x, double y);

// Bilinear sample plus the interpolant's spatial derivative at (x, y).
// The derivative is the exact a.e. derivative of the piecewise-bilinear
// interpolant (zero in the clamped region outside the image).
struct SampleGrad {
    double value;
    double dx;
    double dy;
};
SampleGrad sample_bilinear_grad(const Slice2D& img, double x, double y);

// Catmull-Rom sample of a slice at continuous pixel coordinates.
double sample_cubic(const Slice2D& img, double x, double y);

// Trilinear sample of a volume at continuous index coordinates.
double sample_trilinear(const ScalarVolume& vol, double x, double y, double z);

// Catmull-Rom sample of a volume at continuous index coordinates.
double sample_tricubic(const ScalarVolume& vol, double x, double y, double z);

// Resample onto a target geometry using physical coordinates.
ScalarVolume resample_linear(const ScalarVolume& vol, const VolumeGeometry& target);
ScalarVolume resample_cubic(const ScalarVolume& vol, const VolumeGeometry& target);

// Interpolate control-grid coefficients onto the pixel grid (first-order
// B-spline). Linear in the coefficients.
DisplacementField2D densify(const ControlGrid2D& grid, int nx, int ny);

// Adjoint of densify: scatter a per-pixel field back onto grid nodes.
ControlGrid2D densify_adjoint(const DisplacementField2D& field, int gx, int gy);

// Pull-back warp: out(p) = in(p + field(p)), bilinear.
Slice2D warp(const Slice2D& img, const DisplacementField2D& field);

// Compose displacements: result(p) = f(p) + g(p + f(p)).
// Warping with the result equals warping by f then sampling through g.
DisplacementField2D compose_fields(const DisplacementField2D& f, const DisplacementField2D& g);

// Numerically invert a displacement field by fixed-point iteration, so that
// p + field(p) followed by p' + inv(p') returns to p.
DisplacementField2D invert_field(const DisplacementField2D& field, int iters = 60);

} // namespace ivim
