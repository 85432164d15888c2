// ivim_main.cpp - command-line front end for the IVIM motion-correction and
// fitting pipeline.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ivim/errors.hpp"
#include "ivim/parallel.hpp"
#include "ivim/pipeline.hpp"
#include "ivim/volume_io.hpp"

using namespace ivim;

namespace {

nlohmann::json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open: " + path);
    nlohmann::json j;
    in >> j;
    return j;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Anatomically guided motion correction and Bayesian IVIM fitting"};
    app.require_subcommand(1);

    // phantom
    auto* cmd_phantom = app.add_subcommand("phantom", "generate a synthetic dataset");
    std::string phantom_spec_path, phantom_out = "out/phantom";
    std::uint64_t phantom_seed = 0;
    cmd_phantom->add_option("--spec", phantom_spec_path, "phantom spec JSON");
    cmd_phantom->add_option("--out", phantom_out, "output directory");
    cmd_phantom->add_option("--seed", phantom_seed, "RNG seed")->required();

    // srr
    auto* cmd_srr = app.add_subcommand("srr", "reconstruct the anatomic reference");
    std::string srr_manifest, srr_out = "out/srr";
    srr::SrrConfig srr_cfg;
    int srr_threads = hardware_threads();
    cmd_srr->add_option("--manifest", srr_manifest, "dataset manifest.json")->required();
    cmd_srr->add_option("--out", srr_out, "output directory");
    cmd_srr->add_option("--lambda1", srr_cfg.lambda1, "regularization weight");
    cmd_srr->add_option("--beta", srr_cfg.beta, "Beltrami shape parameter");
    cmd_srr->add_option("--iters", srr_cfg.max_iters, "max iterations");
    cmd_srr->add_option("--tol", srr_cfg.tol, "relative objective tolerance");
    cmd_srr->add_option("--threads", srr_threads, "worker threads");

    // register-interb
    auto* cmd_interb = app.add_subcommand("register-interb", "align b_i slices to b0");
    std::string interb_series, interb_out = "out/interb", interb_reg_json;
    int interb_threads = hardware_threads();
    cmd_interb->add_option("--series", interb_series, "series.json of the input")->required();
    cmd_interb->add_option("--out", interb_out, "output directory");
    cmd_interb->add_option("--reg-config", interb_reg_json, "registration config JSON");
    cmd_interb->add_option("--threads", interb_threads, "worker threads");

    // coregister
    auto* cmd_coreg = app.add_subcommand("coregister", "register b0 to the anatomic reference");
    std::string coreg_series, coreg_anat, coreg_out = "out/coreg", coreg_reg_json;
    int coreg_threads = hardware_threads();
    cmd_coreg->add_option("--series", coreg_series, "series.json of the input")->required();
    cmd_coreg->add_option("--anat", coreg_anat, "anatomic reference volume base")->required();
    cmd_coreg->add_option("--out", coreg_out, "output directory");
    cmd_coreg->add_option("--reg-config", coreg_reg_json, "registration config JSON");
    cmd_coreg->add_option("--threads", coreg_threads, "worker threads");

    // fit
    auto* cmd_fit = app.add_subcommand("fit", "estimate IVIM parameter maps");
    std::string fit_series, fit_mask, fit_out = "out/fit", fit_method = "pcn", fit_chain_json;
    std::uint64_t fit_seed = 0;
    int fit_threads = hardware_threads();
    cmd_fit->add_option("--series", fit_series, "series.json of the input")->required();
    cmd_fit->add_option("--mask", fit_mask, "mask volume base")->required();
    cmd_fit->add_option("--method", fit_method, "pcn|rw|lsq|seg");
    cmd_fit->add_option("--out", fit_out, "output directory");
    cmd_fit->add_option("--seed", fit_seed, "RNG seed")->required();
    cmd_fit->add_option("--chain-config", fit_chain_json, "chain config JSON");
    cmd_fit->add_option("--threads", fit_threads, "worker threads");

    // eval
    auto* cmd_eval = app.add_subcommand("eval", "evaluate fitted maps");
    std::string eval_maps, eval_series, eval_manifest, eval_out = "out/report.csv";
    std::string eval_method = "pcn", eval_state = "corrected";
    cmd_eval->add_option("--maps", eval_maps, "fit output directory")->required();
    cmd_eval->add_option("--series", eval_series, "series.json used for the fit")->required();
    cmd_eval->add_option("--manifest", eval_manifest, "dataset manifest.json")->required();
    cmd_eval->add_option("--out", eval_out, "report CSV path");
    cmd_eval->add_option("--method", eval_method, "method label for the report");
    cmd_eval->add_option("--correction", eval_state, "correction label for the report");

    // bench
    auto* cmd_bench = app.add_subcommand("bench", "time pCN against random walk");
    std::size_t bench_voxels = 10000;
    int bench_iters = 5000;
    int bench_threads = hardware_threads();
    std::uint64_t bench_seed = 0;
    std::string bench_out = "out/bench.json";
    cmd_bench->add_option("--voxels", bench_voxels, "voxel count");
    cmd_bench->add_option("--iters", bench_iters, "chain iterations");
    cmd_bench->add_option("--threads", bench_threads, "threads for the multi-threaded runs");
    cmd_bench->add_option("--seed", bench_seed, "RNG seed");
    cmd_bench->add_option("--out", bench_out, "report JSON path");

    // pipeline
    auto* cmd_pipe = app.add_subcommand("pipeline", "run all stages end to end");
    std::string pipe_config;
    std::uint64_t pipe_seed = 0;
    int pipe_threads = 0;
    std::string pipe_out;
    cmd_pipe->add_option("--config", pipe_config, "pipeline config JSON");
    auto* pipe_seed_opt = cmd_pipe->add_option("--seed", pipe_seed, "RNG seed (overrides config)");
    auto* pipe_threads_opt =
        cmd_pipe->add_option("--threads", pipe_threads, "worker threads (overrides config)");
    auto* pipe_out_opt = cmd_pipe->add_option("--out", pipe_out, "output dir (overrides config)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_phantom->parsed()) {
            phantom::PhantomSpec spec = phantom::PhantomSpec::defaults();
            if (!phantom_spec_path.empty()) pipeline::from_json_spec(load_json(phantom_spec_path), spec);
            spec.seed = phantom_seed;
            const std::string manifest = pipeline::cmd_phantom(spec, phantom_out);
            std::cout << manifest << "\n";
        } else if (cmd_srr->parsed()) {
            const pipeline::Manifest m = pipeline::load_manifest(srr_manifest);
            const std::string base = pipeline::cmd_srr(m, srr_cfg, srr_out, srr_threads);
            std::cout << base << "\n";
        } else if (cmd_interb->parsed()) {
            reg::RegConfig cfg;
            if (!interb_reg_json.empty()) pipeline::from_json_reg(load_json(interb_reg_json), cfg);
            cfg.threads = interb_threads;
            const BValueSeries series = pipeline::load_series(interb_series);
            std::cout << pipeline::cmd_register_interb(series, cfg, interb_out) << "\n";
        } else if (cmd_coreg->parsed()) {
            reg::RegConfig cfg;
            if (!coreg_reg_json.empty()) pipeline::from_json_reg(load_json(coreg_reg_json), cfg);
            cfg.threads = coreg_threads;
            const BValueSeries series = pipeline::load_series(coreg_series);
            const ScalarVolume anat = read_volume(coreg_anat);
            std::cout << pipeline::cmd_coregister(series, anat, cfg, coreg_out) << "\n";
        } else if (cmd_fit->parsed()) {
            mcmc::FitOptions fo;
            fo.method = mcmc::fit_method_from_string(fit_method);
            fo.chain = fo.method == mcmc::FitMethod::rw ? mcmc::ChainConfig::rw_defaults()
                                                        : mcmc::ChainConfig::pcn_defaults();
            if (!fit_chain_json.empty()) pipeline::from_json_chain(load_json(fit_chain_json), fo.chain);
            fo.chain.seed = fit_seed;
            fo.threads = fit_threads;
            const BValueSeries series = pipeline::load_series(fit_series);
            const MaskVolume mask = read_mask(fit_mask);
            const pipeline::FitStageResult r = pipeline::cmd_fit(series, mask, fo, fit_out);
            std::cout << r.dir << "\n";
        } else if (cmd_eval->parsed()) {
            const pipeline::Manifest m = pipeline::load_manifest(eval_manifest);
            const BValueSeries series = pipeline::load_series(eval_series);
            ParameterMaps maps = pipeline::load_maps(eval_maps);
            const MaskVolume gt_mask = read_mask(m.gt_mask);
            phantom::GroundTruth gt;
            gt.f_map = read_volume(m.gt_f);
            gt.d_map = read_volume(m.gt_d);
            gt.ds_map = read_volume(m.gt_ds);
            gt.y0_map = read_volume(m.gt_y0);
            gt.roi_mask = gt_mask;
            metrics::ReportRow row;
            row.phantom_id = std::filesystem::path(m.dir).filename().string();
            row.method = eval_method;
            row.correction = eval_state;
            row.roi = metrics::roi_report(maps, gt_mask);
            metrics::write_report_csv(eval_out, {row});
            const metrics::MapErrors err = metrics::compare_maps(maps, gt);
            std::cout << eval_out << "\n";
            std::cout << "rmse_inside f=" << err.rmse_inside[0] << " d=" << err.rmse_inside[1]
                      << " ds=" << err.rmse_inside[2] << "\n";
        } else if (cmd_bench->parsed()) {
            const pipeline::BenchReport rep =
                pipeline::cmd_bench(bench_voxels, bench_iters, bench_threads, bench_seed, bench_out);
            std::cout << rep.to_json().dump(2) << "\n";
        } else if (cmd_pipe->parsed()) {
            pipeline::PipelineConfig cfg;
            if (!pipe_config.empty())
                cfg = pipeline::PipelineConfig::from_json(load_json(pipe_config));
            if (!pipe_seed_opt->empty()) cfg.seed = pipe_seed;
            if (!pipe_threads_opt->empty()) cfg.threads = pipe_threads;
            if (!pipe_out_opt->empty()) cfg.out_dir = pipe_out;
            const pipeline::PipelineReport rep = pipeline::run_pipeline(cfg);
            std::cout << rep.report_csv << "\n";
        }
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
