#pragma once

#include <Eigen/Dense>
#include <vector>

#include "hctl/rng.hpp"
#include "hctl/tensor.hpp"

namespace hctl {

// Gaussian Markov random field on a small 3D lattice (C = 1):
//   Q = tau_diag*I - beta1*A1 - beta2*A2
// where A1/A2 couple first/second axis-neighbors. Q_{ij} = 0 whenever the
// lattice (Manhattan) graph distance exceeds the band.
struct GmrfSpec {
    Shape4 shape;  // c == 1
    double beta1 = 0.0;
    double beta2 = 0.0;
    double tau_diag = 1.0;
    int band = 0;

    Eigen::MatrixXd Q;
    Eigen::MatrixXd Sigma;
    Eigen::MatrixXd sigma_chol;  // lower factor of Sigma, for exact sampling

    int dim() const { return shape.sites(); }
};

GmrfSpec gmrf_build(int L, int H, int W, double beta1, double beta2, double tau_diag);

// Exact draws z ~ N(0, Sigma); one column per sample.
Eigen::MatrixXd gmrf_sample(const GmrfSpec& spec, int n, Rng& rng);

// Exact conditional of z0 on the unobserved sites given the level-sigma
// noised pin zbar = (1-sigma)*z0|_M + sigma*xi on the observed sites,
// assembled from Sigma blocks by Schur complement.
struct ConditionalGaussian {
    std::vector<int> free_sites;  // unobserved site indices, ascending
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

ConditionalGaussian gmrf_conditional_oracle(const GmrfSpec& spec, const SiteMask& mask,
                                            const Eigen::VectorXd& pin, double sigma);

// Exact posterior of z0 given a noisy direct observation y = z0|_M + n,
// n ~ N(0, tau^2 I) on the observed sites: precision Q + tau^-2 diag(M).
ConditionalGaussian gmrf_posterior_given_obs(const GmrfSpec& spec, const SiteMask& mask,
                                             const Eigen::VectorXd& observed_values, double tau);

// Draws from an explicit Gaussian (mean, cov); one column per sample.
Eigen::MatrixXd gaussian_draws(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, int n,
                               Rng& rng);

}  // namespace hctl
