// phantom.hpp - synthetic ground truth: anatomy, low-resolution stacks, and
// motion/noise-corrupted IVIM series with known parameters.
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ivim/geometry.hpp"
#include "ivim/ivim_model.hpp"
#include "ivim/series.hpp"
#include "ivim/srr.hpp"

namespace ivim::phantom {

using model::IvimParams;

struct PhantomSpec {
    VolumeGeometry hr_geometry;    // isotropic anatomy / reconstruction grid
    VolumeGeometry ivim_geometry;  // anisotropic series grid (thick slices + gap)

    std::array<double, 3> roi_center_mm{0.0, 0.0, 0.0};
    std::array<double, 3> roi_radii_mm{24.0, 20.0, 16.0};

    IvimParams roi_params{0.18, 0.0019, 0.068, 240.0};
    IvimParams background_params{0.06, 0.0010, 0.015, 140.0};

    double anat_roi_level = 190.0;
    double anat_background_level = 100.0;

    // Value-noise texture shared by anatomy and the y0 map, defined in
    // physical space so every grid samples the same pattern.
    double texture_amplitude = 0.08;
    double texture_scale_mm = 7.0;
    double texture_fine_amplitude = 0.04;
    double texture_fine_scale_mm = 3.0;

    double noise_sigma = 12.0;           // b=0 ROI SNR ~ 20 with the defaults
    double motion_amplitude_vox = 2.0;   // per-b-value in-plane warps
    double motion_grid_spacing_vox = 12.0;
    double interscan_amplitude_vox = 2.0; // anatomy-to-series misalignment
    bool through_plane_motion = false;    // model-misfit study switch
    double through_plane_amplitude_vox = 0.0;

    // Anatomic stack acquisition.
    double stack_inplane_mm = 0.89;
    double stack_thickness_mm = 5.0;

    std::vector<double> bvalues{0, 15, 45, 80, 115, 205, 245, 345, 470, 700, 1000};

    std::uint64_t seed = 0;

    static PhantomSpec defaults();
    void validate() const;
};

struct GroundTruth {
    ScalarVolume f_map, d_map, ds_map, y0_map; // series geometry
    MaskVolume roi_mask;                        // series geometry
    MaskVolume roi_mask_hr;                     // anatomy geometry
    // Deformations applied when synthesizing the series (series geometry,
    // per slice): total per b-value, plus the two components.
    std::vector<FieldStack> applied_total;      // per b-value
    std::vector<FieldStack> applied_interb;     // per b-value (zero for b0)
    FieldStack applied_interscan;               // shared by all b-values
};

// Deterministic smooth texture sampled in physical coordinates.
double texture_at(const PhantomSpec& spec, double x_mm, double y_mm, double z_mm);

// Ellipsoid membership test in physical coordinates.
bool in_roi(const PhantomSpec& spec, double x_mm, double y_mm, double z_mm);

// High-resolution anatomy volume plus the ground-truth maps and masks.
// The applied_* fields stay empty until make_ivim_series runs.
std::pair<ScalarVolume, GroundTruth> make_anatomy(const PhantomSpec& spec);

// Acquisition operators for the three anatomic stacks (axial / coronal /
// sagittal) on the spec's geometry. Shared with the srr module so the
// phantom's forward model and the reconstruction agree exactly.
srr::SrrOperators make_srr_operators(const PhantomSpec& spec);

// Three low-resolution anatomic stacks generated with make_srr_operators.
std::vector<ScalarVolume> make_lr_stacks(const ScalarVolume& hr, const srr::SrrOperators& ops);

// IVIM series with clean bi-exponential signals, per-b-value smooth in-plane
// warps composed with the inter-scan warp, then Gaussian noise. Records every
// deformation in the ground truth.
BValueSeries make_ivim_series(GroundTruth& gt, const PhantomSpec& spec);

} // namespace ivim::phantom
