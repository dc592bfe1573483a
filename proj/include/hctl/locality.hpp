#pragma once

#include <Eigen/Dense>
#include <vector>

#include "hctl/tensor.hpp"

namespace hctl {

enum class Axis { kL = 0, kH = 1, kW = 2 };

// Axis-aligned line stack: N_s rows of (|axis| * C) standardized coordinates,
// position-major (channels contiguous per position).
struct LineStack {
    Axis axis = Axis::kW;
    int length = 0;    // |axis|
    int channels = 1;  // C
    Eigen::MatrixXd design;  // N_s x (length*channels), standardized columns
    std::vector<int> degenerate_columns;  // zero-variance columns, floored

    Eigen::Index rows() const { return design.rows(); }
};

LineStack build_line_stack(const std::vector<StateTensor>& samples, Axis axis);

// Ridge-regularized sample covariance and its Cholesky inverse, with C x C
// blocks indexed by axis position pairs.
struct BlockPrecision {
    int length = 0;
    int channels = 1;
    double ridge_lambda = 1e-6;
    Eigen::MatrixXd sigma_ridged;
    Eigen::MatrixXd omega;

    Eigen::MatrixXd block(int beta, int gamma) const {
        return omega.block(beta * channels, gamma * channels, channels, channels);
    }
};

BlockPrecision block_precision(const LineStack& stack, double ridge_lambda = 1e-6);

// Top canonical partial correlations rho1(beta,gamma) in [0,1].
struct PartialCorrelationMap {
    int length = 0;
    Eigen::MatrixXd rho1;
    double floor = 0.0;       // 2*sqrt(C/N_s)
    bool degenerate = false;  // no off-diagonal mass
};

PartialCorrelationMap partial_correlation_map(const BlockPrecision& bp, Eigen::Index n_rows);

// eta(r): fraction of squared off-diagonal rho1 mass at distance > r.
double eta_decay(const PartialCorrelationMap& map, int r);

inline double noise_floor(int channels, Eigen::Index n_rows) {
    if (n_rows <= 0) throw std::invalid_argument("noise_floor: N_s must be > 0");
    return 2.0 * std::sqrt(static_cast<double>(channels) / static_cast<double>(n_rows));
}

}  // namespace hctl
