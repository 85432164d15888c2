// pipeline_config.cpp - JSON round-trips for configuration blocks.

#include "ivim/pipeline.hpp"

namespace ivim::pipeline {

namespace {

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& value) {
    if (j.contains(key)) value = j.at(key).get<T>();
}

VolumeGeometry geometry_from_json(const nlohmann::json& j, VolumeGeometry fallback) {
    VolumeGeometry g = fallback;
    maybe(j, "dims", g.dims);
    maybe(j, "spacing_mm", g.spacing);
    maybe(j, "slice_gap_mm", g.slice_gap);
    if (j.contains("origin_mm")) {
        maybe(j, "origin_mm", g.origin);
    } else {
        for (int a = 0; a < 3; ++a) g.origin[a] = -0.5 * (g.dims[a] - 1) * g.step(a);
    }
    return g;
}

nlohmann::json geometry_to_json(const VolumeGeometry& g) {
    return {{"dims", g.dims},
            {"spacing_mm", g.spacing},
            {"origin_mm", g.origin},
            {"slice_gap_mm", g.slice_gap}};
}

model::IvimParams params_from_json(const nlohmann::json& j, model::IvimParams fallback) {
    model::IvimParams p = fallback;
    maybe(j, "f", p.f);
    maybe(j, "d", p.d);
    maybe(j, "ds", p.ds);
    maybe(j, "y0", p.y0);
    return p;
}

nlohmann::json params_to_json(const model::IvimParams& p) {
    return {{"f", p.f}, {"d", p.d}, {"ds", p.ds}, {"y0", p.y0}};
}

} // namespace

void from_json_spec(const nlohmann::json& j, phantom::PhantomSpec& spec) {
    if (j.contains("hr_geometry")) spec.hr_geometry = geometry_from_json(j["hr_geometry"], spec.hr_geometry);
    if (j.contains("ivim_geometry"))
        spec.ivim_geometry = geometry_from_json(j["ivim_geometry"], spec.ivim_geometry);
    maybe(j, "roi_center_mm", spec.roi_center_mm);
    maybe(j, "roi_radii_mm", spec.roi_radii_mm);
    if (j.contains("roi_params")) spec.roi_params = params_from_json(j["roi_params"], spec.roi_params);
    if (j.contains("background_params"))
        spec.background_params = params_from_json(j["background_params"], spec.background_params);
    maybe(j, "anat_roi_level", spec.anat_roi_level);
    maybe(j, "anat_background_level", spec.anat_background_level);
    maybe(j, "texture_amplitude", spec.texture_amplitude);
    maybe(j, "texture_scale_mm", spec.texture_scale_mm);
    maybe(j, "texture_fine_amplitude", spec.texture_fine_amplitude);
    maybe(j, "texture_fine_scale_mm", spec.texture_fine_scale_mm);
    maybe(j, "noise_sigma", spec.noise_sigma);
    maybe(j, "motion_amplitude_vox", spec.motion_amplitude_vox);
    maybe(j, "motion_grid_spacing_vox", spec.motion_grid_spacing_vox);
    maybe(j, "interscan_amplitude_vox", spec.interscan_amplitude_vox);
    maybe(j, "through_plane_motion", spec.through_plane_motion);
    maybe(j, "through_plane_amplitude_vox", spec.through_plane_amplitude_vox);
    maybe(j, "stack_inplane_mm", spec.stack_inplane_mm);
    maybe(j, "stack_thickness_mm", spec.stack_thickness_mm);
    maybe(j, "bvalues", spec.bvalues);
    maybe(j, "seed", spec.seed);
}

nlohmann::json to_json_spec(const phantom::PhantomSpec& spec) {
    nlohmann::json j;
    j["hr_geometry"] = geometry_to_json(spec.hr_geometry);
    j["ivim_geometry"] = geometry_to_json(spec.ivim_geometry);
    j["roi_center_mm"] = spec.roi_center_mm;
    j["roi_radii_mm"] = spec.roi_radii_mm;
    j["roi_params"] = params_to_json(spec.roi_params);
    j["background_params"] = params_to_json(spec.background_params);
    j["anat_roi_level"] = spec.anat_roi_level;
    j["anat_background_level"] = spec.anat_background_level;
    j["texture_amplitude"] = spec.texture_amplitude;
    j["texture_scale_mm"] = spec.texture_scale_mm;
    j["texture_fine_amplitude"] = spec.texture_fine_amplitude;
    j["texture_fine_scale_mm"] = spec.texture_fine_scale_mm;
    j["noise_sigma"] = spec.noise_sigma;
    j["motion_amplitude_vox"] = spec.motion_amplitude_vox;
    j["motion_grid_spacing_vox"] = spec.motion_grid_spacing_vox;
    j["interscan_amplitude_vox"] = spec.interscan_amplitude_vox;
    j["through_plane_motion"] = spec.through_plane_motion;
    j["through_plane_amplitude_vox"] = spec.through_plane_amplitude_vox;
    j["stack_inplane_mm"] = spec.stack_inplane_mm;
    j["stack_thickness_mm"] = spec.stack_thickness_mm;
    j["bvalues"] = spec.bvalues;
    j["seed"] = spec.seed;
    return j;
}

void from_json_srr(const nlohmann::json& j, srr::SrrConfig& cfg) {
    maybe(j, "lambda1", cfg.lambda1);
    maybe(j, "beta", cfg.beta);
    maybe(j, "max_iters", cfg.max_iters);
    maybe(j, "tol", cfg.tol);
    maybe(j, "power_iters", cfg.power_iters);
}

nlohmann::json to_json_srr(const srr::SrrConfig& cfg) {
    return {{"lambda1", cfg.lambda1},
            {"beta", cfg.beta},
            {"max_iters", cfg.max_iters},
            {"tol", cfg.tol},
            {"power_iters", cfg.power_iters}};
}

void from_json_reg(const nlohmann::json& j, reg::RegConfig& cfg) {
    maybe(j, "lambda2", cfg.lambda2);
    maybe(j, "grid_dims", cfg.grid_dims);
    maybe(j, "iters_interb", cfg.iters_interb);
    maybe(j, "iters_coreg", cfg.iters_coreg);
    maybe(j, "lcc_window", cfg.lcc_window);
    maybe(j, "lbfgs_memory", cfg.lbfgs_memory);
}

nlohmann::json to_json_reg(const reg::RegConfig& cfg) {
    return {{"lambda2", cfg.lambda2},     {"grid_dims", cfg.grid_dims},
            {"iters_interb", cfg.iters_interb}, {"iters_coreg", cfg.iters_coreg},
            {"lcc_window", cfg.lcc_window},     {"lbfgs_memory", cfg.lbfgs_memory}};
}

void from_json_chain(const nlohmann::json& j, mcmc::ChainConfig& cfg) {
    maybe(j, "max_iter", cfg.max_iter);
    maybe(j, "burn_in", cfg.burn_in);
    maybe(j, "rho", cfg.rho);
    maybe(j, "C", cfg.C);
    maybe(j, "rw_step0", cfg.rw_step0);
    maybe(j, "rw_adapt", cfg.rw_adapt);
    if (j.contains("centering")) {
        const std::string c = j.at("centering").get<std::string>();
        if (c == "at_init") cfg.centering = mcmc::ChainConfig::Centering::at_init;
        else if (c == "at_zero") cfg.centering = mcmc::ChainConfig::Centering::at_zero;
        else throw ValidationError("chain: centering must be at_init or at_zero");
    }
    maybe(j, "seed", cfg.seed);
}

nlohmann::json to_json_chain(const mcmc::ChainConfig& cfg) {
    return {{"max_iter", cfg.max_iter},
            {"burn_in", cfg.burn_in},
            {"rho", cfg.rho},
            {"C", cfg.C},
            {"centering",
             cfg.centering == mcmc::ChainConfig::Centering::at_init ? "at_init" : "at_zero"},
            {"rw_step0", cfg.rw_step0},
            {"rw_adapt", cfg.rw_adapt},
            {"seed", cfg.seed}};
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
    PipelineConfig cfg;
    maybe(j, "out_dir", cfg.out_dir);
    maybe(j, "seed", cfg.seed);
    maybe(j, "threads", cfg.threads);
    maybe(j, "fit_mask_dilation_vox", cfg.fit_mask_dilation_vox);
    if (j.contains("methods")) {
        cfg.methods.clear();
        for (const auto& m : j.at("methods"))
            cfg.methods.push_back(mcmc::fit_method_from_string(m.get<std::string>()));
    }
    if (j.contains("phantom")) from_json_spec(j["phantom"], cfg.phantom);
    if (j.contains("srr")) from_json_srr(j["srr"], cfg.srr);
    if (j.contains("reg")) from_json_reg(j["reg"], cfg.reg);
    if (j.contains("chain_pcn")) from_json_chain(j["chain_pcn"], cfg.chain_pcn);
    if (j.contains("chain_rw")) from_json_chain(j["chain_rw"], cfg.chain_rw);
    return cfg;
}

nlohmann::json PipelineConfig::to_json() const {
    nlohmann::json j;
    j["out_dir"] = out_dir;
    j["seed"] = seed;
    j["threads"] = threads;
    j["fit_mask_dilation_vox"] = fit_mask_dilation_vox;
    std::vector<std::string> ms;
    for (auto m : methods) ms.push_back(mcmc::to_string(m));
    j["methods"] = ms;
    j["phantom"] = to_json_spec(phantom);
    j["srr"] = to_json_srr(srr);
    j["reg"] = to_json_reg(reg);
    j["chain_pcn"] = to_json_chain(chain_pcn);
    j["chain_rw"] = to_json_chain(chain_rw);
    return j;
}

} // namespace ivim::pipeline
