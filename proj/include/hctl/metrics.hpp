#pragma once

#include <Eigen/Dense>
#include <array>

#include "hctl/checkerboard.hpp"
#include "hctl/guidance.hpp"
#include "hctl/rng.hpp"
#include "hctl/velocity_model.hpp"

namespace hctl {

struct HitReport {
    long long n = 0;
    long long manifold_hits = 0;
    long long posterior_hits = 0;
    std::array<long long, 2> mode_counts{0, 0};  // ordered by square center y

    double manifold_rate() const { return n > 0 ? static_cast<double>(manifold_hits) / n : 0.0; }
    double posterior_rate() const { return n > 0 ? static_cast<double>(posterior_hits) / n : 0.0; }
    // Fraction of posterior hits attributed to the lower-y mode square.
    double mode_balance() const {
        return posterior_hits > 0 ? static_cast<double>(mode_counts[0]) / posterior_hits : 0.0;
    }
};

// Fraction of points on the checkerboard support.
double manifold_hit(const Eigen::Matrix2Xd& points);

// A posterior hit lies inside one of the two conditional mode squares and
// within |x1 - y_obs| < 0.5 of the anchor.
HitReport posterior_hit(const Eigen::Matrix2Xd& points, const ObsModel& obs);

// Energy distance between two sample sets (columns are samples). All-pairs
// (V-statistic) means, so the result is nonnegative and exactly zero for
// identical multisets.
double energy_distance(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

// Exact conditional-posterior draws for the checkerboard observation model:
// uniform proposals on the two mode squares, importance-resampled by the
// Gaussian x1-likelihood.
Eigen::Matrix2Xd checkerboard_posterior_oracle(const ObsModel& obs, int n, Rng& rng);

// Across-chain variance of the Polyak readout relative to the last iterate,
// averaged over unobserved coordinates. R independent chains share one pin;
// freezing is disabled.
double polyak_variance_ratio(const VelocityModel& model, const Observation& obs, double sigma,
                             int inner_iters, int repeats, InnerRecon recon,
                             std::uint64_t master_seed);

// 95th percentile of the null energy distance between halves of the pooled
// sample under random reassignment (subsampled permutation null).
struct PermutationTest {
    double statistic = 0.0;
    double null_p95 = 0.0;
    int permutations = 0;
    int subsample = 0;
};

PermutationTest energy_permutation_test(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                        int permutations, int subsample, Rng& rng);

}  // namespace hctl
