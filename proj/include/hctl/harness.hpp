#pragma once

#include <string>

#include "hctl/config.hpp"
#include "hctl/errors.hpp"
#include "hctl/guidance.hpp"

namespace hctl {

// Task entry points; each returns the `results` subtree of the result record
// and writes its artifacts (CSV/SVG/binary) under cfg.out_dir.
Json cmd_train(const ExperimentConfig& cfg);
Json cmd_toy_fig(const ExperimentConfig& cfg);
Json cmd_sweep(const ExperimentConfig& cfg);
Json cmd_gibbs_oracle(const ExperimentConfig& cfg);
Json cmd_locality(const ExperimentConfig& cfg);
Json cmd_ablate(const ExperimentConfig& cfg);

// Dispatches on cfg.task, assembles the full result record
// {schema_version, config, results, runtime} and writes results.json.
// Returns the process exit code (0 ok, 1 config, 2 io, 3 numerical).
int run_task(const ExperimentConfig& cfg);

// The toy observation: first coordinate of the flat 2D state observed.
Observation toy_observation(const ObservationConfig& obs);

// Mask patterns for lattice tasks: "w_half" (observed iff w < W/2),
// "empty", "full".
SiteMask mask_from_pattern(const std::string& pattern, const Shape4& shape);

// Frozen CSV headers (schema-stability contract).
namespace csv_headers {
inline constexpr const char* kLoss = "iteration,loss,lr";
inline constexpr const char* kSamples = "seed,x1,x2";
inline constexpr const char* kSweep = "method,nfe,seed,posterior_hit,manifold_hit,mode_balance";
inline constexpr const char* kDiagnostics =
    "outer_step,sigma,inner_iters_used,stable_fraction,mean_abs_dw,nfe_forward,nfe_backward";
inline constexpr const char* kBandTrace = "band,inner_iter,mean_abs_dw";
inline constexpr const char* kZScores = "coordinate,mean_chain,mean_oracle,z_score";
inline constexpr const char* kEta = "r,eta";
inline constexpr const char* kAblate =
    "readout,freeze,energy_distance,mean_inner_iters,nfe_per_sample";
}  // namespace csv_headers

}  // namespace hctl
