// pipeline.hpp - end-to-end orchestration: dataset generation, SRR, two-step
// motion correction, fitting, evaluation, and the sampler benchmark. Every
// stage writes its artifacts and the next stage reloads them, so runs resume
// stage by stage and rerun bit-identically for any thread count.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ivim/metrics.hpp"
#include "ivim/phantom.hpp"
#include "ivim/registration.hpp"
#include "ivim/sampler.hpp"
#include "ivim/series.hpp"
#include "ivim/srr.hpp"

namespace ivim::pipeline {

// JSON round-trips for configuration blocks; absent keys keep defaults.
void from_json_spec(const nlohmann::json& j, phantom::PhantomSpec& spec);
nlohmann::json to_json_spec(const phantom::PhantomSpec& spec);
void from_json_srr(const nlohmann::json& j, srr::SrrConfig& cfg);
nlohmann::json to_json_srr(const srr::SrrConfig& cfg);
void from_json_reg(const nlohmann::json& j, reg::RegConfig& cfg);
nlohmann::json to_json_reg(const reg::RegConfig& cfg);
void from_json_chain(const nlohmann::json& j, mcmc::ChainConfig& cfg);
nlohmann::json to_json_chain(const mcmc::ChainConfig& cfg);

struct PipelineConfig {
    std::string out_dir = "out";
    std::uint64_t seed = 1;
    int threads = 1;
    std::vector<mcmc::FitMethod> methods{mcmc::FitMethod::pcn};
    int fit_mask_dilation_vox = 2;
    phantom::PhantomSpec phantom = phantom::PhantomSpec::defaults();
    srr::SrrConfig srr;
    reg::RegConfig reg;
    mcmc::ChainConfig chain_pcn = mcmc::ChainConfig::pcn_defaults();
    mcmc::ChainConfig chain_rw = mcmc::ChainConfig::rw_defaults();

    static PipelineConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

// Dataset description written by the phantom stage.
struct Manifest {
    std::string dir;
    phantom::PhantomSpec spec;
    std::vector<double> bvalues;
    std::vector<std::string> series_bases;
    std::vector<std::string> stack_bases;
    std::vector<std::string> stack_orientations;
    std::string hr_anatomy_base;
    std::string gt_f, gt_d, gt_ds, gt_y0, gt_mask;
    std::vector<std::string> field_total_u, field_total_v;
};

// Stage entry points. Each returns the primary artifact path.
std::string cmd_phantom(const phantom::PhantomSpec& spec, const std::string& out_dir);

Manifest load_manifest(const std::string& manifest_path);
BValueSeries load_series(const std::string& series_json_path);
void save_series(const std::string& dir, const BValueSeries& series);

// Ground-truth applied fields, reloaded from the dataset (series geometry).
std::vector<FieldStack> load_gt_total_fields(const Manifest& m);

std::string cmd_srr(const Manifest& m, const srr::SrrConfig& cfg, const std::string& out_dir,
                    int threads);

std::string cmd_register_interb(const BValueSeries& series, const reg::RegConfig& cfg,
                                const std::string& out_dir);

std::string cmd_coregister(const BValueSeries& series, const ScalarVolume& anat,
                           const reg::RegConfig& cfg, const std::string& out_dir);

struct FitStageResult {
    std::string dir;
    ParameterMaps maps;
    mcmc::FitDiagnostics diagnostics;
};

FitStageResult cmd_fit(const BValueSeries& series, const MaskVolume& mask,
                       const mcmc::FitOptions& options, const std::string& out_dir);

ParameterMaps load_maps(const std::string& dir);

// Dilate a mask by a Chebyshev radius (in-plane and through-plane).
MaskVolume dilate_mask(const MaskVolume& mask, int radius_vox);

struct PipelineReport {
    struct Entry {
        std::string method;
        std::string correction;
        metrics::RoiReport roi;
        metrics::MapErrors vs_truth;
    };
    std::vector<Entry> entries;
    std::string report_csv;

    const Entry* find(const std::string& method, const std::string& correction) const {
        for (const auto& e : entries)
            if (e.method == method && e.correction == correction) return &e;
        return nullptr;
    }
};

// Full run: phantom -> srr -> inter-b -> coregister -> fit(raw + corrected)
// -> reports, all through the filesystem under cfg.out_dir.
PipelineReport run_pipeline(const PipelineConfig& cfg);

struct BenchReport {
    std::size_t voxels = 0;
    int iterations = 0;
    int threads_multi = 1;
    double pcn_single_s = 0.0, rw_single_s = 0.0;
    double pcn_multi_s = 0.0, rw_multi_s = 0.0;
    // per voxel-iteration, nanoseconds
    double pcn_single_ns = 0.0, rw_single_ns = 0.0;
    double pcn_multi_ns = 0.0, rw_multi_ns = 0.0;
    std::optional<double> reduction_single_pct; // empty when undefined
    std::optional<double> reduction_multi_pct;

    nlohmann::json to_json() const;
};

// Times pCN and rw at identical iteration and voxel counts on a synthetic
// single-region dataset.
BenchReport cmd_bench(std::size_t voxels, int iterations, int threads, std::uint64_t seed,
                      const std::string& out_path);

} // namespace ivim::pipeline
