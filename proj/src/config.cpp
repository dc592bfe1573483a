#include "hctl/config.hpp"

#include <fstream>

namespace hctl {

namespace {

template <typename T>
void read_field(const Json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("config field '") + key + "': " + e.what());
    }
}

template <typename T, std::size_t N>
void read_array(const Json& j, const char* key, std::array<T, N>& out) {
    if (!j.contains(key)) return;
    const auto& a = j.at(key);
    if (!a.is_array() || a.size() != N)
        throw ConfigError(std::string("config field '") + key + "' must be an array of size " +
                          std::to_string(N));
    for (std::size_t i = 0; i < N; ++i) out[i] = a[i].get<T>();
}

Variant parse_variant(const std::string& s) {
    if (s == "none") return Variant::kNone;
    if (s == "hard_replace") return Variant::kHardReplace;
    if (s == "soft_pull") return Variant::kSoftPull;
    if (s == "dps") return Variant::kDps;
    if (s == "weighted_h") return Variant::kWeightedH;
    if (s == "tfg_ugd") return Variant::kTfgUgd;
    if (s == "h_control") return Variant::kHControl;
    throw ConfigError("unknown guidance variant: " + s);
}

GmrfConfig gmrf_from_json(const Json& j, GmrfConfig base) {
    read_array(j, "shape", base.shape);
    read_field(j, "beta1", base.beta1);
    read_field(j, "beta2", base.beta2);
    read_field(j, "tau_diag", base.tau_diag);
    return base;
}

Json gmrf_to_json(const GmrfConfig& g) {
    return Json{{"shape", g.shape}, {"beta1", g.beta1}, {"beta2", g.beta2}, {"tau_diag", g.tau_diag}};
}

GuidanceConfig guidance_from_json(const Json& j, GuidanceConfig base) {
    read_field(j, "variant", base.variant);
    read_array(j, "window", base.window);
    read_field(j, "soft_tau", base.soft_tau);
    read_field(j, "pull_scale", base.pull_scale);
    if (j.contains("dps_zeta") && !j.at("dps_zeta").is_null())
        base.dps_zeta = j.at("dps_zeta").get<double>();
    read_field(j, "dps_jacobian", base.dps_jacobian);
    read_field(j, "weighted_alpha", base.weighted_alpha);
    read_field(j, "tfg_n_recur", base.tfg_n_recur);
    read_field(j, "tfg_n_iter", base.tfg_n_iter);
    read_field(j, "tfg_mu", base.tfg_mu);
    read_field(j, "tfg_rho", base.tfg_rho);
    read_field(j, "j_max", base.j_max);
    read_field(j, "kappa", base.kappa);
    read_field(j, "nu", base.nu);
    read_array(j, "patch_sizes", base.patch_sizes);
    read_field(j, "outer_mode", base.outer_mode);
    read_field(j, "outer_tau", base.outer_tau);
    read_field(j, "inner_recon", base.inner_recon);
    read_field(j, "readout", base.readout);
    read_field(j, "freeze", base.freeze);
    return base;
}

Json guidance_to_json(const GuidanceConfig& g) {
    Json j{{"variant", g.variant},
           {"window", g.window},
           {"soft_tau", g.soft_tau},
           {"pull_scale", g.pull_scale},
           {"dps_jacobian", g.dps_jacobian},
           {"weighted_alpha", g.weighted_alpha},
           {"tfg_n_recur", g.tfg_n_recur},
           {"tfg_n_iter", g.tfg_n_iter},
           {"tfg_mu", g.tfg_mu},
           {"tfg_rho", g.tfg_rho},
           {"j_max", g.j_max},
           {"kappa", g.kappa},
           {"nu", g.nu},
           {"patch_sizes", g.patch_sizes},
           {"outer_mode", g.outer_mode},
           {"outer_tau", g.outer_tau},
           {"inner_recon", g.inner_recon},
           {"readout", g.readout},
           {"freeze", g.freeze}};
    if (std::isnan(g.dps_zeta))
        j["dps_zeta"] = nullptr;
    else
        j["dps_zeta"] = g.dps_zeta;
    return j;
}

}  // namespace

GuidanceSpec GuidanceConfig::to_spec(int steps) const {
    GuidanceSpec spec;
    spec.variant = parse_variant(variant);
    spec.window_begin = window[0];
    spec.window_end = window[1] < 0 ? steps : window[1];
    if (spec.window_end > steps)
        throw ConfigError("guidance window end exceeds the schedule length");
    spec.soft_tau = soft_tau;
    spec.pull_scale = pull_scale;
    spec.dps_zeta = dps_zeta;
    if (dps_jacobian == "full_vjp")
        spec.dps_jacobian = JacobianMode::kFullVjp;
    else if (dps_jacobian == "stop_grad")
        spec.dps_jacobian = JacobianMode::kStopGrad;
    else
        throw ConfigError("unknown dps_jacobian: " + dps_jacobian);
    spec.weighted_alpha = weighted_alpha;
    spec.tfg = TfgConfig{tfg_n_recur, tfg_n_iter, tfg_mu, tfg_rho};
    spec.hc.j_max = j_max;
    spec.hc.kappa = kappa;
    spec.hc.nu = nu;
    spec.hc.patch_sizes = patch_sizes;
    if (outer_mode == "hard")
        spec.hc.outer_mode = OuterMode::kHard;
    else if (outer_mode == "soft")
        spec.hc.outer_mode = OuterMode::kSoft;
    else
        throw ConfigError("unknown outer_mode: " + outer_mode);
    spec.hc.outer_tau = outer_tau;
    spec.hc.pull_scale = pull_scale;
    if (inner_recon == "mean")
        spec.hc.inner_recon = InnerRecon::kMean;
    else if (inner_recon == "posterior_sample")
        spec.hc.inner_recon = InnerRecon::kPosteriorSample;
    else
        throw ConfigError("unknown inner_recon: " + inner_recon);
    if (readout == "polyak")
        spec.hc.readout = ReadoutMode::kPolyak;
    else if (readout == "last")
        spec.hc.readout = ReadoutMode::kLast;
    else
        throw ConfigError("unknown readout: " + readout);
    spec.hc.freeze_enabled = freeze;
    return spec;
}

ExperimentConfig::ExperimentConfig() {
    toy_hcontrol.variant = "h_control";
    toy_hcontrol.j_max = 4;
    toy_hcontrol.nu = 1.0;  // no early exit: keeps the per-step call count exact
    toy_hcontrol.outer_mode = "soft";
    toy_hcontrol.outer_tau = 0.2;

    toy_dps.variant = "dps";
    toy_dps.dps_jacobian = "full_vjp";

    toy_tfg.variant = "tfg_ugd";
}

ExperimentConfig ExperimentConfig::from_json(const Json& j) {
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    ExperimentConfig cfg;
    read_field(j, "task", cfg.task);
    read_field(j, "master_seed", cfg.master_seed);
    read_field(j, "seeds", cfg.seeds);
    read_field(j, "samples_per_seed", cfg.samples_per_seed);
    read_field(j, "threads", cfg.threads);
    read_field(j, "out_dir", cfg.out_dir);
    if (j.contains("schedule")) {
        read_field(j.at("schedule"), "steps", cfg.schedule.steps);
        read_field(j.at("schedule"), "kind", cfg.schedule.kind);
    }
    if (j.contains("model")) {
        read_field(j.at("model"), "backend", cfg.model.backend);
        read_field(j.at("model"), "weights", cfg.model.weights);
    }
    if (j.contains("observation")) {
        read_field(j.at("observation"), "y_obs", cfg.observation.y_obs);
        read_field(j.at("observation"), "sigma_y", cfg.observation.sigma_y);
    }
    if (j.contains("gmrf")) cfg.gmrf = gmrf_from_json(j.at("gmrf"), cfg.gmrf);
    if (j.contains("train")) {
        const Json& t = j.at("train");
        read_field(t, "iterations", cfg.train.iterations);
        read_field(t, "batch", cfg.train.batch);
        read_field(t, "lr", cfg.train.lr);
        read_field(t, "weight_decay", cfg.train.weight_decay);
        read_field(t, "hidden", cfg.train.hidden);
        read_field(t, "embed_dim", cfg.train.embed_dim);
        read_field(t, "freq_min", cfg.train.freq_min);
        read_field(t, "freq_max", cfg.train.freq_max);
        read_field(t, "precision", cfg.train.precision);
        read_field(t, "eval_samples", cfg.train.eval_samples);
    }
    if (j.contains("toy")) {
        const Json& t = j.at("toy");
        if (t.contains("hcontrol")) cfg.toy_hcontrol = guidance_from_json(t.at("hcontrol"), cfg.toy_hcontrol);
        if (t.contains("dps")) cfg.toy_dps = guidance_from_json(t.at("dps"), cfg.toy_dps);
        if (t.contains("tfg")) cfg.toy_tfg = guidance_from_json(t.at("tfg"), cfg.toy_tfg);
        if (t.contains("sweep_j")) cfg.sweep_j = t.at("sweep_j").get<std::vector<int>>();
        if (t.contains("sweep_recur")) cfg.sweep_recur = t.at("sweep_recur").get<std::vector<int>>();
    }
    if (j.contains("noise_bands")) cfg.noise_bands = j.at("noise_bands").get<std::vector<double>>();
    if (j.contains("gibbs_oracle")) {
        const Json& g = j.at("gibbs_oracle");
        read_field(g, "sigma", cfg.gibbs.sigma);
        read_field(g, "burn_in", cfg.gibbs.burn_in);
        read_field(g, "retained", cfg.gibbs.retained);
        read_field(g, "oracle_draws", cfg.gibbs.oracle_draws);
        read_field(g, "permutations", cfg.gibbs.permutations);
        read_field(g, "ed_subsample", cfg.gibbs.ed_subsample);
        read_field(g, "batch_count", cfg.gibbs.batch_count);
        read_field(g, "mask_pattern", cfg.gibbs.mask_pattern);
    }
    if (j.contains("locality")) {
        const Json& l = j.at("locality");
        if (l.contains("gmrf")) cfg.locality.gmrf = gmrf_from_json(l.at("gmrf"), cfg.locality.gmrf);
        read_field(l, "samples", cfg.locality.samples);
        if (l.contains("sigma_levels"))
            cfg.locality.sigma_levels = l.at("sigma_levels").get<std::vector<double>>();
    }
    if (j.contains("ablate")) {
        const Json& a = j.at("ablate");
        if (a.contains("gmrf")) cfg.ablate.gmrf = gmrf_from_json(a.at("gmrf"), cfg.ablate.gmrf);
        read_field(a, "tau", cfg.ablate.tau);
        read_field(a, "j_max", cfg.ablate.j_max);
        read_field(a, "kappa", cfg.ablate.kappa);
        read_field(a, "nu", cfg.ablate.nu);
        read_array(a, "patch_sizes", cfg.ablate.patch_sizes);
        read_field(a, "chains", cfg.ablate.chains);
        read_field(a, "ratio_sigma", cfg.ablate.ratio_sigma);
        read_field(a, "oracle_draws", cfg.ablate.oracle_draws);
        read_field(a, "ed_subsample", cfg.ablate.ed_subsample);
        read_field(a, "ratio_inner_iters", cfg.ablate.ratio_inner_iters);
        read_field(a, "ratio_repeats", cfg.ablate.ratio_repeats);
        read_field(a, "mask_pattern", cfg.ablate.mask_pattern);
    }

    if (cfg.seeds < 1) throw ConfigError("seeds must be >= 1");
    if (cfg.samples_per_seed < 1) throw ConfigError("samples_per_seed must be >= 1");
    if (cfg.schedule.steps < 1) throw ConfigError("schedule.steps must be >= 1");
    if (cfg.schedule.kind != "linear") throw ConfigError("schedule.kind must be 'linear'");
    if (cfg.model.backend != "mlp" && cfg.model.backend != "gaussian")
        throw ConfigError("model.backend must be 'mlp' or 'gaussian'");
    if (cfg.train.precision != "f32" && cfg.train.precision != "f64")
        throw ConfigError("train.precision must be 'f32' or 'f64'");
    return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    Json j;
    try {
        is >> j;
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return from_json(j);
}

Json ExperimentConfig::to_json() const {
    Json j;
    j["task"] = task;
    j["master_seed"] = master_seed;
    j["seeds"] = seeds;
    j["samples_per_seed"] = samples_per_seed;
    j["threads"] = threads;
    j["out_dir"] = out_dir;
    j["schedule"] = Json{{"steps", schedule.steps}, {"kind", schedule.kind}};
    j["model"] = Json{{"backend", model.backend}, {"weights", model.weights}};
    j["observation"] = Json{{"y_obs", observation.y_obs}, {"sigma_y", observation.sigma_y}};
    j["gmrf"] = gmrf_to_json(gmrf);
    j["train"] = Json{{"iterations", train.iterations},
                      {"batch", train.batch},
                      {"lr", train.lr},
                      {"weight_decay", train.weight_decay},
                      {"hidden", train.hidden},
                      {"embed_dim", train.embed_dim},
                      {"freq_min", train.freq_min},
                      {"freq_max", train.freq_max},
                      {"precision", train.precision},
                      {"eval_samples", train.eval_samples}};
    j["toy"] = Json{{"hcontrol", guidance_to_json(toy_hcontrol)},
                    {"dps", guidance_to_json(toy_dps)},
                    {"tfg", guidance_to_json(toy_tfg)},
                    {"sweep_j", sweep_j},
                    {"sweep_recur", sweep_recur}};
    j["noise_bands"] = noise_bands;
    j["gibbs_oracle"] = Json{{"sigma", gibbs.sigma},
                             {"burn_in", gibbs.burn_in},
                             {"retained", gibbs.retained},
                             {"oracle_draws", gibbs.oracle_draws},
                             {"permutations", gibbs.permutations},
                             {"ed_subsample", gibbs.ed_subsample},
                             {"batch_count", gibbs.batch_count},
                             {"mask_pattern", gibbs.mask_pattern}};
    j["locality"] = Json{{"gmrf", gmrf_to_json(locality.gmrf)},
                         {"samples", locality.samples},
                         {"sigma_levels", locality.sigma_levels}};
    j["ablate"] = Json{{"gmrf", gmrf_to_json(ablate.gmrf)},
                       {"tau", ablate.tau},
                       {"j_max", ablate.j_max},
                       {"kappa", ablate.kappa},
                       {"nu", ablate.nu},
                       {"patch_sizes", ablate.patch_sizes},
                       {"chains", ablate.chains},
                       {"ratio_sigma", ablate.ratio_sigma},
                       {"oracle_draws", ablate.oracle_draws},
                       {"ed_subsample", ablate.ed_subsample},
                       {"ratio_inner_iters", ablate.ratio_inner_iters},
                       {"ratio_repeats", ablate.ratio_repeats},
                       {"mask_pattern", ablate.mask_pattern}};
    return j;
}

NoiseSchedule ExperimentConfig::make_schedule() const {
    return build_schedule(schedule.steps, ScheduleKind::kLinear);
}

}  // namespace hctl
