// series.hpp - multi-b-value series, per-slice deformation stacks, fitted maps.
#pragma once

#include <vector>

#include "ivim/geometry.hpp"

namespace ivim {

// Ordered per-b-value volumes with shared geometry; bvalues ascending, b0 first.
struct BValueSeries {
    std::vector<double> bvalues; // s/mm^2
    std::vector<ScalarVolume> volumes;

    std::size_t count() const { return bvalues.size(); }
    const VolumeGeometry& geometry() const { return volumes.at(0).geom; }

    void validate() const {
        if (bvalues.size() != volumes.size() || bvalues.empty())
            throw ValidationError("series: b-value / volume count mismatch");
        for (std::size_t i = 0; i < volumes.size(); ++i) {
            volumes[i].validate();
            if (!(volumes[i].geom == volumes[0].geom))
                throw ValidationError("series: volumes must share geometry");
            if (i > 0 && !(bvalues[i] > bvalues[i - 1]))
                throw ValidationError("series: b-values must be strictly ascending");
        }
        if (bvalues[0] != 0.0) throw ValidationError("series: first b-value must be 0");
    }

    // Gather one voxel's signal across b-values.
    std::vector<double> voxel_signal(int x, int y, int z) const {
        std::vector<double> y_out(volumes.size());
        for (std::size_t i = 0; i < volumes.size(); ++i) y_out[i] = volumes[i].at(x, y, z);
        return y_out;
    }
};

// One 2D field per slice of a volume.
struct FieldStack {
    std::vector<DisplacementField2D> slices;
};

// Per-voxel fitted parameter images sharing the series geometry.
struct ParameterMaps {
    ScalarVolume f_map, d_map, ds_map, y0_map, mae_map;
    MaskVolume mask;

    void allocate(const VolumeGeometry& g) {
        f_map = ScalarVolume(g);
        d_map = ScalarVolume(g);
        ds_map = ScalarVolume(g);
        y0_map = ScalarVolume(g);
        mae_map = ScalarVolume(g);
        mask = MaskVolume(g);
    }
};

} // namespace ivim
