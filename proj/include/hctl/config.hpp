#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "hctl/flow_mlp.hpp"
#include "hctl/guidance.hpp"

namespace hctl {

using Json = nlohmann::json;

class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct ScheduleConfig {
    int steps = 50;
    std::string kind = "linear";
};

struct GmrfConfig {
    std::array<int, 3> shape{1, 4, 4};  // (L,H,W)
    double beta1 = 0.22;
    double beta2 = 0.04;
    double tau_diag = 3.6;
};

struct ObservationConfig {
    double y_obs = 0.5;
    double sigma_y = 0.2;
};

struct ModelConfig {
    std::string backend = "mlp";  // mlp | gaussian
    std::string weights = "weights.bin";
};

struct TrainSection {
    int iterations = 20000;
    int batch = 512;
    double lr = 2e-3;
    double weight_decay = 1e-4;
    int hidden = 256;
    int embed_dim = 64;
    double freq_min = 1.0;
    double freq_max = 1000.0;
    std::string precision = "f32";
    int eval_samples = 5000;
};

// Guidance settings in config form; `to_spec` materializes a GuidanceSpec.
struct GuidanceConfig {
    std::string variant = "h_control";
    std::array<int, 2> window{0, -1};  // -1 end means the full schedule
    double soft_tau = 0.2;
    double pull_scale = 1.0;
    double dps_zeta = std::numeric_limits<double>::quiet_NaN();
    std::string dps_jacobian = "full_vjp";
    double weighted_alpha = 1.0;
    int tfg_n_recur = 2;
    int tfg_n_iter = 1;
    double tfg_mu = 0.5;
    double tfg_rho = 0.5;
    int j_max = 4;
    double kappa = 0.1;
    double nu = 1.0;
    std::array<int, 3> patch_sizes{1, 1, 1};
    std::string outer_mode = "soft";
    double outer_tau = 0.2;
    std::string inner_recon = "mean";
    std::string readout = "polyak";
    bool freeze = true;

    GuidanceSpec to_spec(int steps) const;
};

struct GibbsOracleConfig {
    double sigma = 0.5;
    int burn_in = 1000;
    int retained = 20000;
    int oracle_draws = 20000;
    int permutations = 200;
    int ed_subsample = 2000;
    int batch_count = 100;  // batch-means blocks for the z-scores
    std::string mask_pattern = "w_half";  // w_half | empty | full
};

struct LocalityConfig {
    GmrfConfig gmrf{{4, 4, 4}, 0.20, 0.05, 3.2};
    int samples = 1000;
    std::vector<double> sigma_levels{0.1, 0.3, 0.5, 0.7, 0.9};
};

struct AblateConfig {
    GmrfConfig gmrf{{1, 4, 4}, 0.22, 0.04, 3.6};
    double tau = 0.3;
    int j_max = 10;
    double kappa = 0.2;
    double nu = 0.9;
    std::array<int, 3> patch_sizes{1, 2, 2};
    int chains = 400;
    int oracle_draws = 4000;
    int ed_subsample = 400;
    double ratio_sigma = 0.5;
    int ratio_inner_iters = 16;
    int ratio_repeats = 200;
    std::string mask_pattern = "w_half";
};

struct ExperimentConfig {
    std::string task = "toy-fig";
    std::uint64_t master_seed = 20260810;
    int seeds = 10;
    int samples_per_seed = 500;
    int threads = 1;
    std::string out_dir = "out";
    ScheduleConfig schedule;
    ModelConfig model;
    ObservationConfig observation;
    GmrfConfig gmrf;
    TrainSection train;
    GuidanceConfig toy_hcontrol;
    GuidanceConfig toy_dps;
    GuidanceConfig toy_tfg;
    std::vector<int> sweep_j{0, 1, 2, 4, 8, 16};
    std::vector<int> sweep_recur{1, 2, 3, 4, 5, 6};
    std::vector<double> noise_bands{0.33, 0.66};
    GibbsOracleConfig gibbs;
    LocalityConfig locality;
    AblateConfig ablate;

    ExperimentConfig();  // wires the toy guidance defaults

    static ExperimentConfig from_json(const Json& j);
    static ExperimentConfig from_file(const std::string& path);
    // Full echo with every default materialized.
    Json to_json() const;

    NoiseSchedule make_schedule() const;
};

}  // namespace hctl
