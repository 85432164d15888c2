// pipeline.cpp - stage runners, dataset manifest handling, benchmark.

#include "ivim/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "ivim/parallel.hpp"
#include "ivim/resample.hpp"
#include "ivim/rng.hpp"
#include "ivim/volume_io.hpp"

namespace fs = std::filesystem;

namespace ivim::pipeline {

namespace {

void ensure_dir(const std::string& dir) { fs::create_directories(dir); }

std::string join(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

std::string b_tag(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "b%02zu", i);
    return buf;
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open for write: " + path);
    out << j.dump(2) << "\n";
}

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open: " + path);
    nlohmann::json j;
    in >> j;
    return j;
}

void save_field_stack(const std::string& base, const std::vector<DisplacementField2D>& slices,
                      const VolumeGeometry& geom) {
    ScalarVolume u(geom), v(geom);
    for (int z = 0; z < geom.nz(); ++z) {
        const auto& f = slices[z];
        for (int y = 0; y < geom.ny(); ++y)
            for (int x = 0; x < geom.nx(); ++x) {
                u.at(x, y, z) = f.u[f.index(x, y)];
                v.at(x, y, z) = f.v[f.index(x, y)];
            }
    }
    write_volume(base + "_u", u);
    write_volume(base + "_v", v);
}

std::vector<DisplacementField2D> load_field_stack(const std::string& base_u,
                                                  const std::string& base_v) {
    const ScalarVolume u = read_volume(base_u);
    const ScalarVolume v = read_volume(base_v);
    std::vector<DisplacementField2D> slices(u.geom.nz(),
                                            DisplacementField2D(u.geom.nx(), u.geom.ny()));
    for (int z = 0; z < u.geom.nz(); ++z)
        for (int y = 0; y < u.geom.ny(); ++y)
            for (int x = 0; x < u.geom.nx(); ++x) {
                slices[z].u[slices[z].index(x, y)] = u.at(x, y, z);
                slices[z].v[slices[z].index(x, y)] = v.at(x, y, z);
            }
    return slices;
}

void write_reg_log(const std::string& path, const std::vector<reg::SliceLogEntry>& log) {
    std::ofstream out(path);
    out.precision(12);
    out << "b_index,slice,objective_initial,objective_final,evaluations,warning\n";
    for (const auto& e : log)
        out << e.b_index << "," << e.slice << "," << e.objective_initial << ","
            << e.objective_final << "," << e.evaluations << "," << (e.warning ? 1 : 0) << "\n";
}

} // namespace

std::string cmd_phantom(const phantom::PhantomSpec& spec, const std::string& out_dir) {
    spec.validate();
    ensure_dir(out_dir);

    auto [anat, gt] = phantom::make_anatomy(spec);
    const srr::SrrOperators ops = phantom::make_srr_operators(spec);
    const std::vector<ScalarVolume> stacks = phantom::make_lr_stacks(anat, ops);
    const BValueSeries series = phantom::make_ivim_series(gt, spec);

    nlohmann::json m;
    m["spec"] = to_json_spec(spec);
    m["bvalues"] = spec.bvalues;

    write_volume(join(out_dir, "hr_anatomy"), anat);
    m["hr_anatomy"] = "hr_anatomy";

    const char* names[3] = {"stack_axial", "stack_coronal", "stack_sagittal"};
    std::vector<std::string> stack_names, orient_names{"axial", "coronal", "sagittal"};
    for (std::size_t i = 0; i < stacks.size(); ++i) {
        write_volume(join(out_dir, names[i]), stacks[i]);
        stack_names.push_back(names[i]);
    }
    m["stacks"] = stack_names;
    m["stack_orientations"] = orient_names;

    std::vector<std::string> series_names;
    for (std::size_t i = 0; i < series.count(); ++i) {
        const std::string name = "series_" + b_tag(i);
        write_volume(join(out_dir, name), series.volumes[i]);
        series_names.push_back(name);
    }
    m["series"] = series_names;

    write_volume(join(out_dir, "gt_f"), gt.f_map);
    write_volume(join(out_dir, "gt_d"), gt.d_map);
    write_volume(join(out_dir, "gt_ds"), gt.ds_map);
    write_volume(join(out_dir, "gt_y0"), gt.y0_map);
    write_mask(join(out_dir, "gt_roi_mask"), gt.roi_mask);
    m["gt"] = {{"f", "gt_f"}, {"d", "gt_d"}, {"ds", "gt_ds"}, {"y0", "gt_y0"},
               {"roi_mask", "gt_roi_mask"}};

    std::vector<std::string> fu, fv;
    for (std::size_t i = 0; i < series.count(); ++i) {
        const std::string base = "gt_field_total_" + b_tag(i);
        save_field_stack(join(out_dir, base), gt.applied_total[i].slices, spec.ivim_geometry);
        fu.push_back(base + "_u");
        fv.push_back(base + "_v");
    }
    save_field_stack(join(out_dir, "gt_field_interscan"), gt.applied_interscan.slices,
                     spec.ivim_geometry);
    m["gt_fields"] = {{"total_u", fu}, {"total_v", fv},
                      {"interscan_u", "gt_field_interscan_u"},
                      {"interscan_v", "gt_field_interscan_v"}};

    // Series listing reused by the correction stages.
    write_json_file(join(out_dir, "series.json"),
                    {{"bvalues", series.bvalues}, {"volumes", series_names}});

    const std::string manifest_path = join(out_dir, "manifest.json");
    write_json_file(manifest_path, m);
    return manifest_path;
}

Manifest load_manifest(const std::string& manifest_path) {
    const nlohmann::json j = read_json_file(manifest_path);
    Manifest m;
    m.dir = fs::path(manifest_path).parent_path().string();
    m.spec = phantom::PhantomSpec::defaults();
    from_json_spec(j.at("spec"), m.spec);
    m.bvalues = j.at("bvalues").get<std::vector<double>>();
    for (const auto& s : j.at("series")) m.series_bases.push_back(join(m.dir, s));
    for (const auto& s : j.at("stacks")) m.stack_bases.push_back(join(m.dir, s));
    for (const auto& s : j.at("stack_orientations")) m.stack_orientations.push_back(s);
    m.hr_anatomy_base = join(m.dir, j.at("hr_anatomy").get<std::string>());
    m.gt_f = join(m.dir, j.at("gt").at("f").get<std::string>());
    m.gt_d = join(m.dir, j.at("gt").at("d").get<std::string>());
    m.gt_ds = join(m.dir, j.at("gt").at("ds").get<std::string>());
    m.gt_y0 = join(m.dir, j.at("gt").at("y0").get<std::string>());
    m.gt_mask = join(m.dir, j.at("gt").at("roi_mask").get<std::string>());
    if (j.contains("gt_fields")) {
        for (const auto& s : j["gt_fields"].at("total_u"))
            m.field_total_u.push_back(join(m.dir, s));
        for (const auto& s : j["gt_fields"].at("total_v"))
            m.field_total_v.push_back(join(m.dir, s));
    }
    return m;
}

BValueSeries load_series(const std::string& series_json_path) {
    const nlohmann::json j = read_json_file(series_json_path);
    const std::string dir = fs::path(series_json_path).parent_path().string();
    BValueSeries s;
    s.bvalues = j.at("bvalues").get<std::vector<double>>();
    for (const auto& name : j.at("volumes"))
        s.volumes.push_back(read_volume(join(dir, name.get<std::string>())));
    s.validate();
    return s;
}

void save_series(const std::string& dir, const BValueSeries& series) {
    ensure_dir(dir);
    std::vector<std::string> names;
    for (std::size_t i = 0; i < series.count(); ++i) {
        const std::string name = "series_" + b_tag(i);
        write_volume(join(dir, name), series.volumes[i]);
        names.push_back(name);
    }
    write_json_file(join(dir, "series.json"), {{"bvalues", series.bvalues}, {"volumes", names}});
}

std::vector<FieldStack> load_gt_total_fields(const Manifest& m) {
    std::vector<FieldStack> out;
    for (std::size_t i = 0; i < m.field_total_u.size(); ++i) {
        FieldStack fsk;
        fsk.slices = load_field_stack(m.field_total_u[i], m.field_total_v[i]);
        out.push_back(std::move(fsk));
    }
    return out;
}

std::string cmd_srr(const Manifest& m, const srr::SrrConfig& cfg, const std::string& out_dir,
                    int threads) {
    ensure_dir(out_dir);
    std::vector<ScalarVolume> stacks;
    for (const auto& base : m.stack_bases) stacks.push_back(read_volume(base));
    const srr::SrrOperators ops = phantom::make_srr_operators(m.spec);
    const srr::SrrResult res = srr::srr_reconstruct(stacks, ops, cfg, threads);
    const std::string base = join(out_dir, "srr");
    write_volume(base, res.x);
    srr::write_convergence_csv(join(out_dir, "convergence.csv"), res.objective_trace);
    write_json_file(join(out_dir, "srr_meta.json"),
                    {{"converged", res.converged},
                     {"final_objective", res.final_objective},
                     {"iterations", res.objective_trace.size()},
                     {"config", to_json_srr(cfg)}});
    return base;
}

std::string cmd_register_interb(const BValueSeries& series, const reg::RegConfig& cfg,
                                const std::string& out_dir) {
    ensure_dir(out_dir);
    const reg::CorrectionResult res = reg::interb_correct(series, cfg);
    save_series(out_dir, res.series);
    for (std::size_t i = 1; i < res.fields.size(); ++i)
        save_field_stack(join(out_dir, "field_" + b_tag(i)), res.fields[i].slices,
                         series.geometry());
    write_reg_log(join(out_dir, "convergence.csv"), res.log);
    return join(out_dir, "series.json");
}

std::string cmd_coregister(const BValueSeries& series, const ScalarVolume& anat,
                           const reg::RegConfig& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const reg::CorrectionResult res = reg::coregister(series, anat, cfg);
    save_series(out_dir, res.series);
    save_field_stack(join(out_dir, "field_coreg"), res.fields[0].slices, series.geometry());
    write_reg_log(join(out_dir, "convergence.csv"), res.log);
    return join(out_dir, "series.json");
}

FitStageResult cmd_fit(const BValueSeries& series, const MaskVolume& mask,
                       const mcmc::FitOptions& options, const std::string& out_dir) {
    ensure_dir(out_dir);
    FitStageResult out;
    out.dir = out_dir;
    out.maps = mcmc::fit_volume(series, mask, options, &out.diagnostics);
    write_volume(join(out_dir, "map_f"), out.maps.f_map);
    write_volume(join(out_dir, "map_d"), out.maps.d_map);
    write_volume(join(out_dir, "map_ds"), out.maps.ds_map);
    write_volume(join(out_dir, "map_y0"), out.maps.y0_map);
    write_volume(join(out_dir, "map_mae"), out.maps.mae_map);
    write_mask(join(out_dir, "fit_mask"), out.maps.mask);
    write_pgm_slices(join(out_dir, "view_f"), out.maps.f_map, 0.0, 0.5);
    write_pgm_slices(join(out_dir, "view_d"), out.maps.d_map, 0.0, 0.004);
    write_pgm_slices(join(out_dir, "view_ds"), out.maps.ds_map, 0.0, 0.15);

    std::ofstream diag(join(out_dir, "fit_diagnostics.csv"));
    diag << "acceptance_F,acceptance_D,acceptance_Ds,fallback_inits,voxels\n";
    diag << out.diagnostics.mean_acceptance[0] << "," << out.diagnostics.mean_acceptance[1]
         << "," << out.diagnostics.mean_acceptance[2] << "," << out.diagnostics.fallback_inits
         << "," << out.diagnostics.voxels << "\n";

    write_json_file(join(out_dir, "fit_meta.json"),
                    {{"method", mcmc::to_string(options.method)},
                     {"b_threshold", options.b_threshold},
                     {"chain", to_json_chain(options.chain)}});
    return out;
}

ParameterMaps load_maps(const std::string& dir) {
    ParameterMaps maps;
    maps.f_map = read_volume(join(dir, "map_f"));
    maps.d_map = read_volume(join(dir, "map_d"));
    maps.ds_map = read_volume(join(dir, "map_ds"));
    maps.y0_map = read_volume(join(dir, "map_y0"));
    maps.mae_map = read_volume(join(dir, "map_mae"));
    maps.mask = read_mask(join(dir, "fit_mask"));
    return maps;
}

MaskVolume dilate_mask(const MaskVolume& mask, int radius_vox) {
    if (radius_vox <= 0) return mask;
    MaskVolume out(mask.geom);
    const int nx = mask.geom.nx(), ny = mask.geom.ny(), nz = mask.geom.nz();
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x) {
                bool hit = false;
                for (int dz = -radius_vox; dz <= radius_vox && !hit; ++dz)
                    for (int dy = -radius_vox; dy <= radius_vox && !hit; ++dy)
                        for (int dx = -radius_vox; dx <= radius_vox && !hit; ++dx) {
                            const int xx = x + dx, yy = y + dy, zz = z + dz;
                            if (xx >= 0 && xx < nx && yy >= 0 && yy < ny && zz >= 0 && zz < nz &&
                                mask.at(xx, yy, zz))
                                hit = true;
                        }
                out.set(x, y, z, hit);
            }
    return out;
}

PipelineReport run_pipeline(const PipelineConfig& cfg) {
    ensure_dir(cfg.out_dir);
    write_json_file(join(cfg.out_dir, "pipeline_config.json"), cfg.to_json());

    phantom::PhantomSpec spec = cfg.phantom;
    spec.seed = cfg.seed;

    // Stage 1a: dataset.
    const std::string manifest_path = cmd_phantom(spec, join(cfg.out_dir, "phantom"));
    const Manifest m = load_manifest(manifest_path);
    const BValueSeries raw = load_series(join(cfg.out_dir, "phantom/series.json"));

    // Stage 1b: anatomic reference.
    const std::string srr_base = cmd_srr(m, cfg.srr, join(cfg.out_dir, "srr"), cfg.threads);
    const ScalarVolume anat = read_volume(srr_base);

    // Stage 2: inter-b-value alignment.
    reg::RegConfig reg_cfg = cfg.reg;
    reg_cfg.threads = cfg.threads;
    const std::string interb_series =
        cmd_register_interb(raw, reg_cfg, join(cfg.out_dir, "interb"));

    // Stage 3: co-registration to the reference.
    const BValueSeries interb = load_series(interb_series);
    const std::string coreg_series =
        cmd_coregister(interb, anat, reg_cfg, join(cfg.out_dir, "coreg"));
    const BValueSeries corrected = load_series(coreg_series);

    // Stage 4: fits on raw and corrected data, then reports.
    const MaskVolume gt_mask = read_mask(m.gt_mask);
    const MaskVolume fit_mask = dilate_mask(gt_mask, cfg.fit_mask_dilation_vox);

    phantom::GroundTruth gt;
    gt.f_map = read_volume(m.gt_f);
    gt.d_map = read_volume(m.gt_d);
    gt.ds_map = read_volume(m.gt_ds);
    gt.y0_map = read_volume(m.gt_y0);
    gt.roi_mask = gt_mask;

    PipelineReport report;
    std::vector<metrics::ReportRow> rows;
    for (const mcmc::FitMethod method : cfg.methods) {
        for (const bool corrected_state : {false, true}) {
            const BValueSeries& series = corrected_state ? corrected : raw;
            mcmc::FitOptions fo;
            fo.method = method;
            fo.threads = cfg.threads;
            fo.chain = (method == mcmc::FitMethod::rw) ? cfg.chain_rw : cfg.chain_pcn;
            fo.chain.seed = cfg.seed;
            const std::string state = corrected_state ? "corrected" : "none";
            const std::string dir =
                join(cfg.out_dir, "fit_" + mcmc::to_string(method) + "_" + state);
            const FitStageResult fit = cmd_fit(series, fit_mask, fo, dir);

            PipelineReport::Entry entry;
            entry.method = mcmc::to_string(method);
            entry.correction = state;
            entry.roi = metrics::roi_report(fit.maps, gt_mask);
            entry.vs_truth = metrics::compare_maps(fit.maps, gt);
            report.entries.push_back(entry);

            metrics::ReportRow row;
            row.phantom_id = "seed" + std::to_string(cfg.seed);
            row.method = entry.method;
            row.correction = state;
            row.roi = entry.roi;
            rows.push_back(row);
        }
    }

    ensure_dir(join(cfg.out_dir, "reports"));
    report.report_csv = join(cfg.out_dir, "reports/report.csv");
    metrics::write_report_csv(report.report_csv, rows);
    return report;
}

nlohmann::json BenchReport::to_json() const {
    nlohmann::json j;
    j["voxels"] = voxels;
    j["iterations"] = iterations;
    j["threads_multi"] = threads_multi;
    j["pcn_single_s"] = pcn_single_s;
    j["rw_single_s"] = rw_single_s;
    j["pcn_multi_s"] = pcn_multi_s;
    j["rw_multi_s"] = rw_multi_s;
    j["pcn_single_ns_per_voxel_iter"] = pcn_single_ns;
    j["rw_single_ns_per_voxel_iter"] = rw_single_ns;
    j["pcn_multi_ns_per_voxel_iter"] = pcn_multi_ns;
    j["rw_multi_ns_per_voxel_iter"] = rw_multi_ns;
    j["reduction_single_pct"] =
        reduction_single_pct ? nlohmann::json(*reduction_single_pct) : nlohmann::json("n/a");
    j["reduction_multi_pct"] =
        reduction_multi_pct ? nlohmann::json(*reduction_multi_pct) : nlohmann::json("n/a");
    return j;
}

BenchReport cmd_bench(std::size_t voxels, int iterations, int threads, std::uint64_t seed,
                      const std::string& out_path) {
    BenchReport rep;
    rep.voxels = voxels;
    rep.iterations = iterations;
    rep.threads_multi = threads;

    if (iterations > 0 && voxels > 0) {
        // Synthetic single-region dataset: typical tissue parameters + noise.
        VolumeGeometry g;
        g.dims = {static_cast<int>(voxels), 1, 1};
        BValueSeries series;
        series.bvalues = {0, 15, 45, 80, 115, 205, 245, 345, 470, 700, 1000};
        series.volumes.assign(series.bvalues.size(), ScalarVolume(g));
        const model::IvimParams p{0.18, 0.0019, 0.068, 240.0};
        for (std::size_t i = 0; i < series.bvalues.size(); ++i) {
            const double clean = model::signal(series.bvalues[i], p);
            for (std::size_t v = 0; v < voxels; ++v) {
                Rng rng = Rng::keyed(seed, rng_tag::bench, i, v);
                series.volumes[i].data[v] = std::max(1.0, clean + 12.0 * rng.normal());
            }
        }
        MaskVolume mask(g, true);

        auto run = [&](mcmc::FitMethod method, int nthreads) {
            mcmc::FitOptions fo;
            fo.method = method;
            fo.threads = nthreads;
            fo.chain = (method == mcmc::FitMethod::rw) ? mcmc::ChainConfig::rw_defaults()
                                                       : mcmc::ChainConfig::pcn_defaults();
            fo.chain.max_iter = iterations;
            fo.chain.burn_in = std::min(iterations - 1, iterations / 2);
            fo.chain.seed = seed;
            const auto t0 = std::chrono::steady_clock::now();
            mcmc::fit_volume(series, mask, fo);
            const auto t1 = std::chrono::steady_clock::now();
            return std::chrono::duration<double>(t1 - t0).count();
        };

        rep.pcn_single_s = run(mcmc::FitMethod::pcn, 1);
        rep.rw_single_s = run(mcmc::FitMethod::rw, 1);
        rep.pcn_multi_s = run(mcmc::FitMethod::pcn, threads);
        rep.rw_multi_s = run(mcmc::FitMethod::rw, threads);

        const double scale = 1e9 / (static_cast<double>(voxels) * iterations);
        rep.pcn_single_ns = rep.pcn_single_s * scale;
        rep.rw_single_ns = rep.rw_single_s * scale;
        rep.pcn_multi_ns = rep.pcn_multi_s * scale;
        rep.rw_multi_ns = rep.rw_multi_s * scale;
        if (rep.rw_single_s > 0.0)
            rep.reduction_single_pct = 100.0 * (1.0 - rep.pcn_single_s / rep.rw_single_s);
        if (rep.rw_multi_s > 0.0)
            rep.reduction_multi_pct = 100.0 * (1.0 - rep.pcn_multi_s / rep.rw_multi_s);
    }

    if (!out_path.empty()) {
        ensure_dir(fs::path(out_path).parent_path().string());
        write_json_file(out_path, rep.to_json());
    }
    return rep;
}

} // namespace ivim::pipeline
