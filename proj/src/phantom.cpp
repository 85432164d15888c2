// phantom.cpp - synthetic dataset generation.

#include "ivim/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "ivim/parallel.hpp"
#include "ivim/resample.hpp"
#include "ivim/rng.hpp"

namespace ivim::phantom {

namespace {

// Centered geometry helper: physical center at 0 along every axis.
VolumeGeometry centered(std::array<int, 3> dims, std::array<double, 3> spacing, double gap) {
    VolumeGeometry g;
    g.dims = dims;
    g.spacing = spacing;
    g.slice_gap = gap;
    for (int a = 0; a < 3; ++a) g.origin[a] = -0.5 * (dims[a] - 1) * g.step(a);
    return g;
}

// smootherstep fade for value-noise interpolation (C2 at lattice planes)
inline double fade(double t) { return t * t * t * (t * (6.0 * t - 15.0) + 10.0); }

double value_noise(std::uint64_t seed, std::uint64_t channel, double scale_mm, double x, double y,
                   double z) {
    const double fx = x / scale_mm, fy = y / scale_mm, fz = z / scale_mm;
    const auto node = [&](std::int64_t i, std::int64_t j, std::int64_t k) {
        // lattice values in [-1, 1]
        const std::uint64_t h = Rng::mix(
            Rng::mix(seed + rng_tag::texture) ^
            Rng::mix(channel * 0x9E3779B97F4A7C15ull + 0x85EBCA6Bull) ^
            Rng::mix(static_cast<std::uint64_t>(i) * 0xC2B2AE3D27D4EB4Full) ^
            Rng::mix(static_cast<std::uint64_t>(j) * 0x165667B19E3779F9ull) ^
            Rng::mix(static_cast<std::uint64_t>(k) * 0xD6E8FEB86659FD93ull));
        return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
    };
    const std::int64_t ix = static_cast<std::int64_t>(std::floor(fx));
    const std::int64_t iy = static_cast<std::int64_t>(std::floor(fy));
    const std::int64_t iz = static_cast<std::int64_t>(std::floor(fz));
    const double tx = fade(fx - ix), ty = fade(fy - iy), tz = fade(fz - iz);
    double acc = 0.0;
    for (int dz = 0; dz <= 1; ++dz)
        for (int dy = 0; dy <= 1; ++dy)
            for (int dx = 0; dx <= 1; ++dx) {
                const double w = (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz);
                acc += w * node(ix + dx, iy + dy, iz + dz);
            }
    return acc;
}

// Smooth per-slice control-grid warp with coefficients in [-amp, amp].
DisplacementField2D random_slice_warp(const PhantomSpec& spec, std::uint64_t tag,
                                      std::uint64_t b_index, std::uint64_t z, double amplitude) {
    const int nx = spec.ivim_geometry.nx(), ny = spec.ivim_geometry.ny();
    const int gx = std::max(2, static_cast<int>(std::round(nx / spec.motion_grid_spacing_vox)) + 1);
    const int gy = std::max(2, static_cast<int>(std::round(ny / spec.motion_grid_spacing_vox)) + 1);
    ControlGrid2D grid(gx, gy);
    Rng rng = Rng::keyed(spec.seed, tag, b_index, z);
    for (std::size_t i = 0; i < grid.nodes(); ++i) grid.u[i] = rng.uniform(-amplitude, amplitude);
    for (std::size_t i = 0; i < grid.nodes(); ++i) grid.v[i] = rng.uniform(-amplitude, amplitude);
    return densify(grid, nx, ny);
}

} // namespace

PhantomSpec PhantomSpec::defaults() {
    PhantomSpec s;
    s.hr_geometry = centered({64, 64, 48}, {1.5, 1.5, 1.5}, 0.0);
    s.ivim_geometry = centered({60, 60, 12}, {1.5625, 1.5625, 5.0}, 1.0);
    return s;
}

void PhantomSpec::validate() const {
    hr_geometry.validate();
    ivim_geometry.validate();
    for (double r : roi_radii_mm)
        if (!(r > 0.0)) throw ValidationError("phantom: roi radii must be > 0");
    if (noise_sigma < 0.0) throw ValidationError("phantom: noise_sigma must be >= 0");
    if (motion_amplitude_vox < 0.0 || interscan_amplitude_vox < 0.0)
        throw ValidationError("phantom: motion amplitudes must be >= 0");
    if (!(motion_grid_spacing_vox > 1.0))
        throw ValidationError("phantom: motion grid spacing must be > 1 voxel");
    if (bvalues.empty() || bvalues.front() != 0.0)
        throw ValidationError("phantom: b-values must start at 0");
    for (std::size_t i = 1; i < bvalues.size(); ++i)
        if (!(bvalues[i] > bvalues[i - 1]))
            throw ValidationError("phantom: b-values must be ascending");
    for (const IvimParams* p : {&roi_params, &background_params}) {
        if (!(p->f >= 0.0 && p->f <= 1.0)) throw ValidationError("phantom: f must be in [0,1]");
        if (!(p->ds > p->d) || !(p->d > 0.0))
            throw ValidationError("phantom: require ds > d > 0");
        if (!(p->y0 > 0.0)) throw ValidationError("phantom: y0 must be > 0");
    }
    // ROI must fit inside both fields of view.
    for (const VolumeGeometry* g : {&hr_geometry, &ivim_geometry}) {
        for (int a = 0; a < 3; ++a) {
            const double lo = g->coord(a, 0), hi = g->coord(a, g->dims[a] - 1);
            if (roi_center_mm[a] - roi_radii_mm[a] < lo - 1e-9 ||
                roi_center_mm[a] + roi_radii_mm[a] > hi + 1e-9)
                throw ValidationError("phantom: ROI extends outside the field of view");
        }
    }
}

double texture_at(const PhantomSpec& spec, double x, double y, double z) {
    double t = 0.0;
    if (spec.texture_amplitude > 0.0)
        t += spec.texture_amplitude * value_noise(spec.seed, 1, spec.texture_scale_mm, x, y, z);
    if (spec.texture_fine_amplitude > 0.0)
        t += spec.texture_fine_amplitude *
             value_noise(spec.seed, 2, spec.texture_fine_scale_mm, x, y, z);
    return t;
}

bool in_roi(const PhantomSpec& spec, double x, double y, double z) {
    const double a = (x - spec.roi_center_mm[0]) / spec.roi_radii_mm[0];
    const double b = (y - spec.roi_center_mm[1]) / spec.roi_radii_mm[1];
    const double c = (z - spec.roi_center_mm[2]) / spec.roi_radii_mm[2];
    return a * a + b * b + c * c <= 1.0;
}

std::pair<ScalarVolume, GroundTruth> make_anatomy(const PhantomSpec& spec) {
    spec.validate();

    ScalarVolume anat(spec.hr_geometry);
    GroundTruth gt;
    gt.roi_mask_hr = MaskVolume(spec.hr_geometry);

    const VolumeGeometry& hg = spec.hr_geometry;
    std::size_t p = 0;
    for (int z = 0; z < hg.nz(); ++z)
        for (int y = 0; y < hg.ny(); ++y)
            for (int x = 0; x < hg.nx(); ++x, ++p) {
                const double px = hg.coord(0, x), py = hg.coord(1, y), pz = hg.coord(2, z);
                const bool roi = in_roi(spec, px, py, pz);
                const double level = roi ? spec.anat_roi_level : spec.anat_background_level;
                anat.data[p] = level * (1.0 + texture_at(spec, px, py, pz));
                gt.roi_mask_hr.data[p] = roi ? 1 : 0;
            }

    const VolumeGeometry& ig = spec.ivim_geometry;
    gt.f_map = ScalarVolume(ig);
    gt.d_map = ScalarVolume(ig);
    gt.ds_map = ScalarVolume(ig);
    gt.y0_map = ScalarVolume(ig);
    gt.roi_mask = MaskVolume(ig);
    p = 0;
    for (int z = 0; z < ig.nz(); ++z)
        for (int y = 0; y < ig.ny(); ++y)
            for (int x = 0; x < ig.nx(); ++x, ++p) {
                const double px = ig.coord(0, x), py = ig.coord(1, y), pz = ig.coord(2, z);
                const bool roi = in_roi(spec, px, py, pz);
                const IvimParams& pr = roi ? spec.roi_params : spec.background_params;
                gt.f_map.data[p] = pr.f;
                gt.d_map.data[p] = pr.d;
                gt.ds_map.data[p] = pr.ds;
                gt.y0_map.data[p] = pr.y0 * (1.0 + texture_at(spec, px, py, pz));
                gt.roi_mask.data[p] = roi ? 1 : 0;
            }

    return {std::move(anat), std::move(gt)};
}

srr::SrrOperators make_srr_operators(const PhantomSpec& spec) {
    spec.validate();
    srr::SrrOperators ops;
    const std::array<srr::AxisPermutation, 3> orients{
        srr::AxisPermutation::axial(), srr::AxisPermutation::coronal(),
        srr::AxisPermutation::sagittal()};
    for (const auto& orient : orients) {
        srr::StackOperator op;
        op.hr_geom = spec.hr_geometry;
        op.orient = orient;

        // Stack grid covers the reoriented FoV: fine in-plane, thick slices.
        VolumeGeometry pg = spec.hr_geometry;
        std::array<double, 3> extent{};
        for (int a = 0; a < 3; ++a) extent[a] = pg.extent(orient.map[a]);
        VolumeGeometry sg;
        sg.spacing = {spec.stack_inplane_mm, spec.stack_inplane_mm, spec.stack_thickness_mm};
        sg.slice_gap = 0.0;
        for (int a = 0; a < 3; ++a) {
            sg.dims[a] = std::max(1, static_cast<int>(std::floor(extent[a] / sg.spacing[a])) + 1);
            sg.origin[a] = -0.5 * (sg.dims[a] - 1) * sg.step(a);
        }
        op.stack_geom = sg;

        // Slice-profile blur: FWHM = slice thickness through-plane, one HR
        // voxel in-plane (applied on the reoriented HR grid).
        const double inplane = spec.hr_geometry.spacing[0];
        op.blur_fwhm_mm = {inplane, inplane, spec.stack_thickness_mm};
        ops.stacks.push_back(op);
    }
    return ops;
}

std::vector<ScalarVolume> make_lr_stacks(const ScalarVolume& hr, const srr::SrrOperators& ops) {
    std::vector<ScalarVolume> stacks;
    stacks.reserve(ops.stacks.size());
    for (std::size_t i = 0; i < ops.stacks.size(); ++i)
        stacks.push_back(srr::apply_forward(ops, i, hr));
    return stacks;
}

BValueSeries make_ivim_series(GroundTruth& gt, const PhantomSpec& spec) {
    spec.validate();
    const VolumeGeometry& ig = spec.ivim_geometry;
    const std::size_t nb = spec.bvalues.size();
    const int nz = ig.nz();

    BValueSeries series;
    series.bvalues = spec.bvalues;
    series.volumes.assign(nb, ScalarVolume(ig));

    // Clean signal volumes from the ground-truth maps.
    std::vector<ScalarVolume> clean(nb, ScalarVolume(ig));
    for (std::size_t i = 0; i < nb; ++i) {
        const double b = spec.bvalues[i];
        for (std::size_t p = 0; p < clean[i].data.size(); ++p) {
            const double f = gt.f_map.data[p];
            clean[i].data[p] = gt.y0_map.data[p] *
                               (f * std::exp(-b * gt.ds_map.data[p]) +
                                (1.0 - f) * std::exp(-b * gt.d_map.data[p]));
        }
    }

    // Optional through-plane motion (off by default): a smooth in-plane map of
    // z-shifts per b-value, outside the reach of the slice-wise correction.
    if (spec.through_plane_motion && spec.through_plane_amplitude_vox > 0.0) {
        for (std::size_t i = 1; i < nb; ++i) {
            const DisplacementField2D zshift = random_slice_warp(
                spec, rng_tag::motion + 7, i, 0, spec.through_plane_amplitude_vox);
            ScalarVolume shifted(ig);
            for (int z = 0; z < nz; ++z)
                for (int y = 0; y < ig.ny(); ++y)
                    for (int x = 0; x < ig.nx(); ++x)
                        shifted.at(x, y, z) = sample_trilinear(
                            clean[i], x, y, z + zshift.u[zshift.index(x, y)]);
            clean[i] = std::move(shifted);
        }
    }

    // Deformations: inter-scan warp per slice, per-b warps for i != 0.
    gt.applied_interscan.slices.assign(nz, DisplacementField2D(ig.nx(), ig.ny()));
    gt.applied_interb.assign(nb, FieldStack{});
    gt.applied_total.assign(nb, FieldStack{});
    for (int z = 0; z < nz; ++z) {
        if (spec.interscan_amplitude_vox > 0.0)
            gt.applied_interscan.slices[z] = random_slice_warp(
                spec, rng_tag::interscan, 0, static_cast<std::uint64_t>(z),
                spec.interscan_amplitude_vox);
    }
    for (std::size_t i = 0; i < nb; ++i) {
        gt.applied_interb[i].slices.assign(nz, DisplacementField2D(ig.nx(), ig.ny()));
        gt.applied_total[i].slices.assign(nz, DisplacementField2D(ig.nx(), ig.ny()));
        for (int z = 0; z < nz; ++z) {
            if (i != 0 && spec.motion_amplitude_vox > 0.0)
                gt.applied_interb[i].slices[z] =
                    random_slice_warp(spec, rng_tag::motion, i, static_cast<std::uint64_t>(z),
                                      spec.motion_amplitude_vox);
            gt.applied_total[i].slices[z] =
                compose_fields(gt.applied_interb[i].slices[z], gt.applied_interscan.slices[z]);
        }
    }

    // Warp slice-wise, then add acquisition noise.
    for (std::size_t i = 0; i < nb; ++i) {
        for (int z = 0; z < nz; ++z) {
            const Slice2D s = extract_slice(clean[i], z);
            insert_slice(series.volumes[i], z, warp(s, gt.applied_total[i].slices[z]));
        }
        if (spec.noise_sigma > 0.0) {
            for (std::size_t p = 0; p < series.volumes[i].data.size(); ++p) {
                Rng rng = Rng::keyed(spec.seed, rng_tag::noise, i, p);
                series.volumes[i].data[p] += spec.noise_sigma * rng.normal();
            }
        }
    }
    return series;
}

} // namespace ivim::phantom
