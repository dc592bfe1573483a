#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "hctl/patches.hpp"
#include "hctl/rng.hpp"
#include "hctl/schedule.hpp"
#include "hctl/tensor.hpp"
#include "hctl/velocity_model.hpp"
#include "hctl/welford.hpp"

namespace hctl {

// Partial evidence: values on the masked sites, confidence tau.
struct Observation {
    SiteMask mask;
    StateTensor values;
    double tau = 0.2;
    bool hard = false;  // symbolic tau -> 0 (hard replacement semantics)

    void validate(const Shape4& state_shape) const;
};

enum class Variant { kNone, kHardReplace, kSoftPull, kDps, kWeightedH, kTfgUgd, kHControl };
enum class JacobianMode { kFullVjp, kStopGrad };
enum class OuterMode { kHard, kSoft };
enum class InnerRecon { kMean, kPosteriorSample };
enum class ReadoutMode { kPolyak, kLast };

struct TfgConfig {
    int n_recur = 2;
    int n_iter = 1;
    double mu = 0.5;
    double rho = 0.5;

    // Model calls per windowed outer step.
    int calls_per_step() const { return n_recur * (n_iter + 1) + 1; }
};

struct HControlConfig {
    int j_max = 10;
    double kappa = 0.1;
    double nu = 0.9;
    std::array<int, 3> patch_sizes{1, 1, 1};
    OuterMode outer_mode = OuterMode::kHard;
    double outer_tau = 0.2;   // soft outer mode confidence
    double pull_scale = 1.0;  // multiplier on the sigma*sigma_dot/tau^2 coefficient
    InnerRecon inner_recon = InnerRecon::kMean;
    ReadoutMode readout = ReadoutMode::kPolyak;
    bool freeze_enabled = true;
};

struct GuidanceSpec {
    Variant variant = Variant::kNone;
    int window_begin = 0;
    int window_end = 0;  // [s,e); s == e is an empty window

    // soft_pull
    double soft_tau = 0.2;
    double pull_scale = 1.0;

    // dps; zeta NaN means the sigma*sigma_dot/tau^2 default
    double dps_zeta = std::numeric_limits<double>::quiet_NaN();
    JacobianMode dps_jacobian = JacobianMode::kFullVjp;

    // weighted_h: lambda_sigma = sigma^alpha
    double weighted_alpha = 1.0;

    TfgConfig tfg;
    HControlConfig hc;

    void validate(int steps) const;
};

// ---------------------------------------------------------------------------
// Elementary steps (single-state spec operations)
// ---------------------------------------------------------------------------

// z_{k+1} = z_k + (sigma_{k+1}-sigma_k)(z_k - zhat0)/sigma_k; jumps exactly
// to zhat0 when sigma_{k+1} == 0.
Eigen::MatrixXd euler_step_batch(const Eigen::MatrixXd& z, const Eigen::MatrixXd& zhat_final,
                                 double sigma_k, double sigma_k1);
StateTensor euler_step(const StateTensor& z, const StateTensor& zhat_final, double sigma_k,
                       double sigma_k1);

// u + (sigma*sigma_dot/tau^2) * M (zhat0 - ztilde0)
StateTensor outer_soft_pull(const StateTensor& u, const StateTensor& zhat0, const Observation& obs,
                            double sigma, double sigma_dot);

// M ztilde0 + (1-M) zhat0
StateTensor outer_hard_replace(const StateTensor& zhat0, const Observation& obs);

// Additive velocity correction zeta * G^T M(zhat0 - ztilde0), with G the
// clean-prediction Jacobian (full_vjp) or the identity (stop_grad).
StateTensor dps_step(const VelocityModel& model, const StateTensor& z, double sigma,
                     const Observation& obs, double zeta, JacobianMode mode, NfeCounter* counter);

// u + lambda*((z - warped)/sigma - u) with lambda = sigma^alpha
StateTensor weighted_h_step(const StateTensor& u, const StateTensor& z, double sigma,
                            const StateTensor& warped, double alpha);

// ---------------------------------------------------------------------------
// Chain-level machinery
// ---------------------------------------------------------------------------

struct ChainRngs {
    Rng init;
    Rng pin;
    Rng inner;
};

std::vector<ChainRngs> make_chain_rngs(std::uint64_t master_seed, int n_chains, int offset = 0);

struct InnerGibbsResult {
    Eigen::MatrixXd readout;  // size x B
    Eigen::MatrixXd pin;      // realized noised pin per chain (empty when the loop never ran)
    std::vector<int> iters;   // realized inner iterations per chain
    std::vector<std::vector<PatchWelford>> welford;  // [chain][patch] final state
    // Per inner iteration j (1-based), averaged over chains and patches:
    std::vector<double> mean_abs_dw;          // NaN until delta readings exist
    std::vector<double> mean_stable_fraction;
};

// Observer invoked after every inner iteration with the iteration index,
// the post-freeze iterates, and the current per-chain/per-patch Welford
// states (stability flags included).
using IterateHook =
    std::function<void(int, const Eigen::MatrixXd&, const std::vector<std::vector<PatchWelford>>&)>;

// The block-conditional pseudo-Gibbs refinement at fixed sigma. Draws the
// noised pin once per chain, alternates perturb/re-denoise on the unobserved
// support, tracks per-patch Welford indicators, freezes stable patches, and
// accumulates the Polyak readout. Chains exit early when the stable fraction
// exceeds nu.
InnerGibbsResult inner_gibbs_batch(const VelocityModel& model, const Eigen::MatrixXd& zhat_obs,
                                   const Observation& obs, double sigma, const HControlConfig& cfg,
                                   const PatchPartition& partition, std::span<ChainRngs> rngs,
                                   std::span<NfeCounter> counters,
                                   const IterateHook& hook = nullptr);

// Per-chain wrapper matching the single-state API.
InnerGibbsResult inner_gibbs(const VelocityModel& model, const StateTensor& zhat_obs,
                             const Observation& obs, double sigma, const HControlConfig& cfg,
                             const PatchPartition& partition, ChainRngs& rngs, NfeCounter& counter,
                             const IterateHook& hook = nullptr);

struct StepDiagnosticsRow {
    int step = 0;
    double sigma = 0.0;
    double inner_iters = 0.0;      // mean over chains
    double stable_fraction = 0.0;  // mean over chains, at exit
    double mean_abs_dw = 0.0;      // mean over chains/patches, last reading
    long long nfe_forward = 0;     // cumulative over chains
    long long nfe_backward = 0;
};

// (noise band, inner iteration) -> mean |delta_W| accumulator
struct BandTrace {
    std::vector<double> edges{0.33, 0.66};  // interior edges of the sigma bands
    std::vector<std::vector<double>> sums;
    std::vector<std::vector<long long>> counts;

    int bands() const { return static_cast<int>(edges.size()) + 1; }
    int band_of(double sigma) const;
    void add(double sigma, int j, double abs_dw);
    double mean(int band, int j) const;
    int max_iter() const;
};

struct RunResult {
    Eigen::MatrixXd samples;          // size x B final clean states
    std::vector<NfeCounter> nfe;      // per chain
    std::vector<StepDiagnosticsRow> diagnostics;  // windowed h-control steps
    BandTrace band_trace;
};

struct RunOptions {
    std::uint64_t master_seed = 0;
    int n_chains = 1;
    int chain_offset = 0;  // global chain index base, for common random numbers
    std::vector<double> band_edges{0.33, 0.66};
};

// Full sampling trajectory under any guidance variant, batched over chains.
RunResult run_sampler(const VelocityModel& model, const NoiseSchedule& schedule,
                      const Observation& obs, const GuidanceSpec& spec, const RunOptions& options);

// Per-chain convenience wrappers.
struct SingleRunResult {
    StateTensor z0;
    NfeCounter nfe;
    std::vector<StepDiagnosticsRow> diagnostics;
};

SingleRunResult run_baseline(const VelocityModel& model, const NoiseSchedule& schedule,
                             const Observation& obs, const GuidanceSpec& spec,
                             std::uint64_t master_seed, int chain_index = 0);

SingleRunResult hcontrol_sample(const VelocityModel& model, const NoiseSchedule& schedule,
                                const Observation& obs, const GuidanceSpec& spec,
                                std::uint64_t master_seed, int chain_index = 0);

}  // namespace hctl
