// Pipeline integration tests: dataset round-trips, stage artifacts, the
// end-to-end runner's determinism across thread counts, and CLI exit codes.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "ivim/pipeline.hpp"
#include "ivim/volume_io.hpp"

using namespace ivim;
namespace fs = std::filesystem;

namespace {

phantom::PhantomSpec mini_spec(std::uint64_t seed) {
    phantom::PhantomSpec spec = phantom::PhantomSpec::defaults();
    VolumeGeometry hr;
    hr.dims = {32, 32, 24};
    hr.spacing = {2.0, 2.0, 2.0};
    for (int a = 0; a < 3; ++a) hr.origin[a] = -0.5 * (hr.dims[a] - 1) * hr.step(a);
    VolumeGeometry iv;
    iv.dims = {24, 24, 6};
    iv.spacing = {2.5, 2.5, 5.0};
    iv.slice_gap = 1.0;
    for (int a = 0; a < 3; ++a) iv.origin[a] = -0.5 * (iv.dims[a] - 1) * iv.step(a);
    spec.hr_geometry = hr;
    spec.ivim_geometry = iv;
    spec.roi_center_mm = {0, 0, 0};
    spec.roi_radii_mm = {14, 12, 10};
    spec.stack_inplane_mm = 2.0;
    spec.stack_thickness_mm = 6.0;
    spec.motion_amplitude_vox = 1.5;
    spec.interscan_amplitude_vox = 1.5;
    spec.seed = seed;
    return spec;
}

pipeline::PipelineConfig mini_config(const std::string& out_dir, std::uint64_t seed,
                                     int threads) {
    pipeline::PipelineConfig cfg;
    cfg.out_dir = out_dir;
    cfg.seed = seed;
    cfg.threads = threads;
    cfg.methods = {mcmc::FitMethod::pcn, mcmc::FitMethod::lsq};
    cfg.phantom = mini_spec(seed);
    cfg.srr.max_iters = 30;
    cfg.reg.grid_dims = {10, 10};
    cfg.reg.iters_interb = 25;
    cfg.reg.iters_coreg = 15;
    cfg.chain_pcn.max_iter = 500;
    cfg.chain_pcn.burn_in = 200;
    cfg.fit_mask_dilation_vox = 1;
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("phantom dataset round-trips through the manifest") {
    const std::string dir = (fs::temp_directory_path() / "ivim_ds_test").string();
    fs::remove_all(dir);
    const phantom::PhantomSpec spec = mini_spec(42);
    const std::string manifest_path = pipeline::cmd_phantom(spec, dir);

    const pipeline::Manifest m = pipeline::load_manifest(manifest_path);
    CHECK(m.bvalues.size() == 11); // default b-value list
    CHECK(m.series_bases.size() == 11);
    CHECK(m.stack_bases.size() == 3);

    const BValueSeries series = pipeline::load_series(dir + "/series.json");
    series.validate();
    CHECK(series.count() == 11);

    // write -> read -> write is byte-identical
    const ScalarVolume v = read_volume(m.series_bases[0]);
    write_volume(dir + "/rt", v);
    CHECK(slurp(m.series_bases[0] + ".raw") == slurp(dir + "/rt.raw"));

    // ground-truth fields reload at the series geometry
    const auto fields = pipeline::load_gt_total_fields(m);
    CHECK(fields.size() == 11);
    CHECK(fields[0].slices.size() == static_cast<std::size_t>(spec.ivim_geometry.nz()));
    fs::remove_all(dir);
}

TEST_CASE("dilate_mask grows by the Chebyshev radius") {
    VolumeGeometry g;
    g.dims = {7, 7, 3};
    MaskVolume m(g, false);
    m.set(3, 3, 1, true);
    const MaskVolume d1 = pipeline::dilate_mask(m, 1);
    CHECK(d1.count() == 27);
    CHECK(pipeline::dilate_mask(m, 0).count() == 1);
}

TEST_CASE("bench with zero iterations reports n/a") {
    const pipeline::BenchReport rep = pipeline::cmd_bench(100, 0, 2, 1, "");
    CHECK(!rep.reduction_single_pct.has_value());
    CHECK(rep.to_json()["reduction_single_pct"] == "n/a");
}

TEST_CASE("run_pipeline produces stage artifacts and identical results for any thread count") {
    const std::string dir1 = (fs::temp_directory_path() / "ivim_pipe_t1").string();
    const std::string dir2 = (fs::temp_directory_path() / "ivim_pipe_t2").string();
    fs::remove_all(dir1);
    fs::remove_all(dir2);

    const pipeline::PipelineReport r1 = pipeline::run_pipeline(mini_config(dir1, 7, 1));
    const pipeline::PipelineReport r2 = pipeline::run_pipeline(mini_config(dir2, 7, 2));

    // before/after entries for both methods
    REQUIRE(r1.entries.size() == 4);
    CHECK(r1.find("pcn", "none") != nullptr);
    CHECK(r1.find("pcn", "corrected") != nullptr);
    CHECK(r1.find("lsq", "corrected") != nullptr);

    // stage artifacts exist and reload
    for (const char* sub : {"phantom/manifest.json", "srr/convergence.csv",
                            "interb/series.json", "coreg/series.json",
                            "fit_pcn_corrected/map_f.json", "reports/report.csv"})
        CHECK(fs::exists(fs::path(dir1) / sub));

    // thread count must not change a single byte of maps or reports
    for (const char* rel : {"fit_pcn_none/map_f.raw", "fit_pcn_corrected/map_f.raw",
                            "fit_pcn_corrected/map_ds.raw", "fit_pcn_corrected/map_mae.raw",
                            "fit_lsq_corrected/map_f.raw", "coreg/series_b00.raw",
                            "reports/report.csv"})
        CHECK(slurp((fs::path(dir1) / rel).string()) == slurp((fs::path(dir2) / rel).string()));

    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("CLI exit codes: 0 on success, 2 on validation error") {
    const char* bin = std::getenv("IVIM_BIN");
    REQUIRE(bin != nullptr);
    const std::string dir = (fs::temp_directory_path() / "ivim_cli_test").string();
    fs::remove_all(dir);
    fs::create_directories(dir);

    // spec file for a tiny phantom
    {
        std::ofstream spec(dir + "/spec.json");
        spec << pipeline::to_json_spec(mini_spec(3)).dump(2);
    }
    const std::string base = std::string(bin);
    CHECK(std::system((base + " phantom --spec " + dir + "/spec.json --out " + dir +
                       "/ds --seed 3 > /dev/null 2>&1")
                          .c_str()) == 0);

    // missing required --seed -> CLI validation failure
    int rc = std::system((base + " phantom --out " + dir + "/ds2 > /dev/null 2>&1").c_str());
    CHECK(WEXITSTATUS(rc) != 0);

    // malformed geometry in the spec -> exit code 2
    {
        std::ofstream spec(dir + "/bad.json");
        spec << "{\"ivim_geometry\": {\"dims\": [0, 4, 4]}}";
    }
    rc = std::system(
        (base + " phantom --spec " + dir + "/bad.json --out " + dir + "/ds3 --seed 1 > /dev/null 2>&1")
            .c_str());
    CHECK(WEXITSTATUS(rc) == 2);

    // fit on the generated dataset through the CLI
    CHECK(std::system((base + " fit --series " + dir + "/ds/series.json --mask " + dir +
                       "/ds/gt_roi_mask --method seg --out " + dir + "/fit --seed 1 --threads 2" +
                       " > /dev/null 2>&1")
                          .c_str()) == 0);
    CHECK(fs::exists(dir + "/fit/map_f.json"));
    fs::remove_all(dir);
}
