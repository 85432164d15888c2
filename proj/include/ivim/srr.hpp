// srr.hpp - super-resolution reconstruction of the anatomic reference from
// anisotropic stacks: linear forward/adjoint operators, Beltrami
// regularization, and a monotone first-order solver.
#pragma once

#include <array>
#include <string>
#include <vector>

#include "ivim/geometry.hpp"

namespace ivim::srr {

// Axis permutation: output axis a reads input axis map[a]. Used as the rigid
// reorientation T between the reconstruction grid and each acquisition frame.
struct AxisPermutation {
    std::array<int, 3> map{0, 1, 2};

    AxisPermutation inverse() const {
        AxisPermutation inv;
        for (int a = 0; a < 3; ++a) inv.map[map[a]] = a;
        return inv;
    }
    static AxisPermutation identity() { return {}; }
    // Slices along z (identity), y, or x respectively.
    static AxisPermutation axial() { return {{0, 1, 2}}; }
    static AxisPermutation coronal() { return {{0, 2, 1}}; }
    static AxisPermutation sagittal() { return {{1, 2, 0}}; }
};

ScalarVolume permute_volume(const ScalarVolume& vol, const AxisPermutation& perm);

// One acquisition model: y_i = D_i B_i T_i x. T permutes to the stack frame,
// B blurs with an anisotropic Gaussian (per-axis FWHM in mm, applied on the
// permuted grid), D resamples linearly onto the stack geometry. Every part
// carries an explicit adjoint.
struct StackOperator {
    VolumeGeometry hr_geom;
    VolumeGeometry stack_geom;
    AxisPermutation orient;
    std::array<double, 3> blur_fwhm_mm{0.0, 0.0, 0.0};

    ScalarVolume forward(const ScalarVolume& x) const;
    ScalarVolume adjoint(const ScalarVolume& y) const;
};

struct SrrOperators {
    std::vector<StackOperator> stacks;
};

ScalarVolume apply_forward(const SrrOperators& ops, std::size_t i, const ScalarVolume& x);
ScalarVolume apply_adjoint(const SrrOperators& ops, std::size_t i, const ScalarVolume& y);

// Beltrami regularizer sum(sqrt(1 + beta |grad x|^2)) with forward
// differences and Neumann boundaries; returns the value and, if non-null,
// its exact gradient.
double beltrami(const ScalarVolume& x, double beta, ScalarVolume* grad = nullptr);

struct SrrConfig {
    double lambda1 = 0.05;
    double beta = 1.0;
    int max_iters = 200;
    double tol = 1e-6;        // relative objective change
    int power_iters = 20;     // operator-norm estimation

    void validate() const {
        if (lambda1 < 0.0) throw ValidationError("srr: lambda1 must be >= 0");
        if (!(beta > 0.0)) throw ValidationError("srr: beta must be > 0");
        if (max_iters < 1) throw ValidationError("srr: max_iters must be >= 1");
        if (!(tol > 0.0)) throw ValidationError("srr: tol must be > 0");
    }
};

struct SrrResult {
    ScalarVolume x;
    std::vector<double> objective_trace; // one entry per accepted iterate
    bool converged = true;
    double final_objective = 0.0;
};

// Minimizes sum_i ||D_i B_i T_i x - y_i||^2 + lambda1 R1(x) with monotone
// backtracking gradient descent; the initial step comes from a power-iteration
// bound on the operator norms (both objective terms are smooth, so the
// primal-dual splitting degenerates to this explicit first-order scheme).
SrrResult srr_reconstruct(const std::vector<ScalarVolume>& stacks, const SrrOperators& ops,
                          const SrrConfig& cfg, int threads = 1);

// Convergence trace as "iter,objective" CSV.
void write_convergence_csv(const std::string& path, const std::vector<double>& trace);

} // namespace ivim::srr
