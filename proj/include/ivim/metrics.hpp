// metrics.hpp - quantitative evaluation: MAE against acquired signals, ROI
// statistics, and ground-truth map comparison.
#pragma once

#include <array>
#include <string>
#include <vector>

#include "ivim/phantom.hpp"
#include "ivim/series.hpp"

namespace ivim::metrics {

struct MaeResult {
    ScalarVolume map;                 // per-voxel mean absolute residual
    double mean = 0.0;                // over the mask
    double median_over_slices = 0.0;  // median of per-slice medians
};

// Per masked voxel: (1/N_b) sum_i |y_i - model(b_i, fitted params)|.
MaeResult mae(const BValueSeries& series, const ParameterMaps& maps, const MaskVolume& mask);

struct RoiReport {
    std::array<double, 3> mean{};              // f, d, ds over mask voxels in range
    std::array<double, 3> stddev{};
    std::array<double, 3> median_over_slices{};
    double mae_mean = 0.0;
    double mae_median_over_slices = 0.0;
    int slice_lo = 0, slice_hi = 0;
    int slices_used = 0;
    bool truncated = false; // fewer than the requested slices were available
};

struct SliceProtocol {
    int slices_before = 3;
    int slices_after = 3;
};

// Table-style ROI statistics: the mask's center-of-mass slice plus neighbors,
// per-slice medians aggregated across slices, plus plain mean/std.
RoiReport roi_report(const ParameterMaps& maps, const MaskVolume& mask,
                     const SliceProtocol& protocol = {});

struct MapErrors {
    // indexed f, d, ds
    std::array<double, 3> rmse_inside{}, bias_inside{}, rel_inside{};
    std::array<double, 3> rmse_outside{}, bias_outside{}, rel_outside{};
};

// RMSE / bias / mean relative error of the fitted maps against the phantom
// ground truth, inside and outside the ROI (restricted to the fitted mask).
MapErrors compare_maps(const ParameterMaps& est, const phantom::GroundTruth& gt);

struct ReportRow {
    std::string phantom_id;
    std::string method;
    std::string correction; // "none" | "corrected"
    RoiReport roi;
};

void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows);

} // namespace ivim::metrics
