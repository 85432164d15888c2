// registration.hpp - two-step deformable motion correction: inter-b-value
// alignment to b0 and co-registration of b0 to the anatomic reference.
// LCC similarity + isotropic TV on a displacement control grid, LBFGS.
#pragma once

#include <array>
#include <functional>
#include <vector>

#include "ivim/geometry.hpp"
#include "ivim/series.hpp"

namespace ivim::reg {

struct RegConfig {
    double lambda2 = 2.5;              // TV weight
    std::array<int, 2> grid_dims{60, 60};
    int iters_interb = 100;
    int iters_coreg = 50;
    int lcc_window = 9;                // odd, >= 3
    int lbfgs_memory = 10;
    int threads = 1;

    void validate() const {
        if (lambda2 < 0.0) throw ValidationError("reg: lambda2 must be >= 0");
        if (grid_dims[0] < 2 || grid_dims[1] < 2)
            throw ValidationError("reg: grid must be >= 2x2");
        if (lcc_window < 3 || lcc_window % 2 == 0)
            throw ValidationError("reg: lcc window must be odd and >= 3");
    }
};

// Mean over pixels of the squared local Pearson correlation between a and b
// (windows clamped at the borders; two constant windows score 1, exactly one
// constant scores 0). grad, when non-null, receives d(score)/d(b).
double lcc(const Slice2D& a, const Slice2D& b, int window, Slice2D* grad = nullptr);

// Isotropic TV of a control grid: sum over nodes of
// sqrt(|dx u|^2 + |dx v|^2 + |dy u|^2 + |dy v|^2 + eps^2), forward
// differences, eps = 1e-9. grad, when non-null, receives the analytic
// gradient in the same layout as the grid.
double tv_iso(const ControlGrid2D& k, ControlGrid2D* grad = nullptr);

struct LbfgsResult {
    std::vector<double> x;
    double fx = 0.0;
    int iterations = 0;
    int evaluations = 0;
    bool line_search_failed = false;
};

// Limited-memory BFGS with Armijo backtracking. The objective fills grad and
// returns the value. Never returns a point worse than x0.
LbfgsResult lbfgs_minimize(
    const std::function<double(const std::vector<double>&, std::vector<double>&)>& objective,
    std::vector<double> x0, int max_iters, int memory = 10);

struct RegPairResult {
    ControlGrid2D grid;
    double objective_initial = 0.0;
    double objective_final = 0.0;
    int evaluations = 0;
    bool warning = false;
};

// The slice-pair objective: pixel_count * (1 - lcc(fixed, warp(moving,
// densify(k)))) + lambda2 * tv_iso(k). grad, when non-null, receives the
// analytic gradient with respect to the control grid.
double pair_objective(const Slice2D& moving, const Slice2D& fixed, const RegConfig& cfg,
                      const ControlGrid2D& k, ControlGrid2D* grad = nullptr);

// Registers moving onto fixed by minimizing pair_objective over the control
// grid with LBFGS, starting from k = 0.
RegPairResult register_pair(const Slice2D& moving, const Slice2D& fixed,
                            const RegConfig& cfg, int iters);

struct SliceLogEntry {
    int b_index = 0;
    int slice = 0;
    double objective_initial = 0.0;
    double objective_final = 0.0;
    int evaluations = 0;
    bool warning = false;
};

struct CorrectionResult {
    BValueSeries series;
    std::vector<FieldStack> fields; // one stack per b-value (dense, per slice)
    std::vector<SliceLogEntry> log;
};

// Step one: align every b_i (i != 0) slice to the matching b0 slice.
CorrectionResult interb_correct(const BValueSeries& series, const RegConfig& cfg);

// Step two: register each b0 slice to the anatomic reference (resampled with
// the cubic kernel onto the series grid) and apply the per-slice field to all
// b-values of that slice.
CorrectionResult coregister(const BValueSeries& series, const ScalarVolume& anat_ref,
                            const RegConfig& cfg);

} // namespace ivim::reg
