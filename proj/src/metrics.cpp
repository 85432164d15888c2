// metrics.cpp - evaluation metrics and report output.

#include "ivim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace ivim::metrics {

namespace {

double median(std::vector<double> v) {
    if (v.empty()) throw ValidationError("median of empty set");
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    double m = v[mid];
    if (v.size() % 2 == 0) {
        const double lo = *std::max_element(v.begin(), v.begin() + mid);
        m = 0.5 * (m + lo);
    }
    return m;
}

} // namespace

MaeResult mae(const BValueSeries& series, const ParameterMaps& maps, const MaskVolume& mask) {
    series.validate();
    const VolumeGeometry& geom = series.geometry();
    if (!(mask.geom == geom) || !(maps.f_map.geom == geom))
        throw ValidationError("mae: geometry mismatch");
    if (mask.count() == 0) throw ValidationError("mae: empty mask");

    MaeResult out;
    out.map = ScalarVolume(geom);
    const std::size_t nb = series.count();
    double acc = 0.0;
    std::size_t count = 0;
    std::vector<std::vector<double>> per_slice(geom.nz());
    for (int z = 0; z < geom.nz(); ++z)
        for (int y = 0; y < geom.ny(); ++y)
            for (int x = 0; x < geom.nx(); ++x) {
                if (!mask.at(x, y, z)) continue;
                const std::size_t idx = out.map.index(x, y, z);
                const double f = maps.f_map.data[idx];
                const double d = maps.d_map.data[idx];
                const double ds = maps.ds_map.data[idx];
                const double y0 = maps.y0_map.data[idx];
                double s = 0.0;
                for (std::size_t i = 0; i < nb; ++i) {
                    const double b = series.bvalues[i];
                    const double m =
                        y0 * (f * std::exp(-b * ds) + (1.0 - f) * std::exp(-b * d));
                    s += std::abs(series.volumes[i].data[idx] - m);
                }
                const double v = s / static_cast<double>(nb);
                out.map.data[idx] = v;
                per_slice[z].push_back(v);
                acc += v;
                ++count;
            }
    out.mean = acc / static_cast<double>(count);
    std::vector<double> slice_medians;
    for (auto& sv : per_slice)
        if (!sv.empty()) slice_medians.push_back(median(std::move(sv)));
    out.median_over_slices = median(std::move(slice_medians));
    return out;
}

RoiReport roi_report(const ParameterMaps& maps, const MaskVolume& mask,
                     const SliceProtocol& protocol) {
    const VolumeGeometry& geom = maps.f_map.geom;
    if (!(mask.geom == geom)) throw ValidationError("roi_report: geometry mismatch");
    if (mask.count() == 0) throw ValidationError("roi_report: empty mask");

    // Center-of-mass slice of the mask.
    double zsum = 0.0;
    std::size_t n = 0;
    for (int z = 0; z < geom.nz(); ++z)
        for (int y = 0; y < geom.ny(); ++y)
            for (int x = 0; x < geom.nx(); ++x)
                if (mask.at(x, y, z)) {
                    zsum += z;
                    ++n;
                }
    const int zc = static_cast<int>(std::lround(zsum / static_cast<double>(n)));

    RoiReport r;
    r.slice_lo = std::max(0, zc - protocol.slices_before);
    r.slice_hi = std::min(geom.nz() - 1, zc + protocol.slices_after);
    r.truncated =
        (r.slice_hi - r.slice_lo + 1) < (protocol.slices_before + protocol.slices_after + 1);

    const ScalarVolume* params[3] = {&maps.f_map, &maps.d_map, &maps.ds_map};
    std::array<double, 3> sum{}, sumsq{};
    std::size_t count = 0;
    std::array<std::vector<std::vector<double>>, 3> per_slice;
    std::vector<std::vector<double>> mae_slice;
    for (auto& ps : per_slice) ps.resize(geom.nz());
    mae_slice.resize(geom.nz());
    double mae_acc = 0.0;

    for (int z = r.slice_lo; z <= r.slice_hi; ++z)
        for (int y = 0; y < geom.ny(); ++y)
            for (int x = 0; x < geom.nx(); ++x) {
                if (!mask.at(x, y, z)) continue;
                const std::size_t idx = maps.f_map.index(x, y, z);
                for (int j = 0; j < 3; ++j) {
                    const double v = params[j]->data[idx];
                    sum[j] += v;
                    sumsq[j] += v * v;
                    per_slice[j][z].push_back(v);
                }
                mae_slice[z].push_back(maps.mae_map.data[idx]);
                mae_acc += maps.mae_map.data[idx];
                ++count;
            }
    if (count == 0) throw ValidationError("roi_report: mask empty on the selected slices");

    std::size_t used = 0;
    for (int z = r.slice_lo; z <= r.slice_hi; ++z)
        if (!mae_slice[z].empty()) ++used;
    r.slices_used = static_cast<int>(used);

    for (int j = 0; j < 3; ++j) {
        r.mean[j] = sum[j] / static_cast<double>(count);
        r.stddev[j] = std::sqrt(std::max(0.0, sumsq[j] / count - r.mean[j] * r.mean[j]));
        std::vector<double> med;
        for (int z = r.slice_lo; z <= r.slice_hi; ++z)
            if (!per_slice[j][z].empty()) med.push_back(median(std::move(per_slice[j][z])));
        r.median_over_slices[j] = median(std::move(med));
    }
    r.mae_mean = mae_acc / static_cast<double>(count);
    std::vector<double> med;
    for (int z = r.slice_lo; z <= r.slice_hi; ++z)
        if (!mae_slice[z].empty()) med.push_back(median(std::move(mae_slice[z])));
    r.mae_median_over_slices = median(std::move(med));
    return r;
}

MapErrors compare_maps(const ParameterMaps& est, const phantom::GroundTruth& gt) {
    const VolumeGeometry& geom = est.f_map.geom;
    if (!(gt.f_map.geom == geom)) throw ValidationError("compare_maps: geometry mismatch");

    const ScalarVolume* e[3] = {&est.f_map, &est.d_map, &est.ds_map};
    const ScalarVolume* t[3] = {&gt.f_map, &gt.d_map, &gt.ds_map};

    MapErrors out;
    std::array<double, 3> se_in{}, se_out{}, bias_in{}, bias_out{}, rel_in{}, rel_out{};
    std::size_t n_in = 0, n_out = 0;
    for (std::size_t p = 0; p < est.f_map.data.size(); ++p) {
        if (!est.mask.data.empty() && est.mask.data[p] == 0) continue;
        const bool inside = gt.roi_mask.data[p] != 0;
        for (int j = 0; j < 3; ++j) {
            const double diff = e[j]->data[p] - t[j]->data[p];
            const double rel = std::abs(diff) / std::max(std::abs(t[j]->data[p]), 1e-30);
            if (inside) {
                se_in[j] += diff * diff;
                bias_in[j] += diff;
                rel_in[j] += rel;
            } else {
                se_out[j] += diff * diff;
                bias_out[j] += diff;
                rel_out[j] += rel;
            }
        }
        if (inside) ++n_in;
        else ++n_out;
    }
    for (int j = 0; j < 3; ++j) {
        if (n_in > 0) {
            out.rmse_inside[j] = std::sqrt(se_in[j] / n_in);
            out.bias_inside[j] = bias_in[j] / n_in;
            out.rel_inside[j] = rel_in[j] / n_in;
        }
        if (n_out > 0) {
            out.rmse_outside[j] = std::sqrt(se_out[j] / n_out);
            out.bias_outside[j] = bias_out[j] / n_out;
            out.rel_outside[j] = rel_out[j] / n_out;
        }
    }
    return out;
}

void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open for write: " + path);
    out.precision(10);
    out << "phantom,method,correction,f_mean,d_mean,ds_mean,f_std,d_std,ds_std,"
           "mae_mean,mae_median_slices,f_median_slices,d_median_slices,ds_median_slices,"
           "slices_used,truncated\n";
    for (const auto& r : rows) {
        out << r.phantom_id << "," << r.method << "," << r.correction << "," << r.roi.mean[0]
            << "," << r.roi.mean[1] << "," << r.roi.mean[2] << "," << r.roi.stddev[0] << ","
            << r.roi.stddev[1] << "," << r.roi.stddev[2] << "," << r.roi.mae_mean << ","
            << r.roi.mae_median_over_slices << "," << r.roi.median_over_slices[0] << ","
            << r.roi.median_over_slices[1] << "," << r.roi.median_over_slices[2] << ","
            << r.roi.slices_used << "," << (r.roi.truncated ? 1 : 0) << "\n";
    }
}

} // namespace ivim::metrics
