#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <mutex>

#include "hctl/gmrf.hpp"
#include "hctl/velocity_model.hpp"

namespace hctl {

// Bayes-optimal velocity field for a GMRF prior N(0, Sigma). The denoising
// matrix K(sigma) = (1-sigma) Sigma ((1-sigma)^2 Sigma + sigma^2 I)^-1 gives
// the exact conditional mean E[z0 | z_sigma = z]; levels are cached per
// distinct sigma.
class GaussianModel : public VelocityModel {
  public:
    explicit GaussianModel(GmrfSpec spec);

    Shape4 shape() const override { return spec_.shape; }
    bool has_input_gradient() const override { return true; }
    bool has_posterior_sample() const override { return true; }

    Eigen::MatrixXd velocity(const Eigen::MatrixXd& z, double sigma) const override;
    Eigen::MatrixXd input_vjp(const Eigen::MatrixXd& z, double sigma,
                              const Eigen::MatrixXd& cotangent) const override;
    Eigen::MatrixXd posterior_sample(const Eigen::MatrixXd& z, double sigma,
                                     const Eigen::MatrixXd& eps) const override;

    const Eigen::MatrixXd& denoise_matrix(double sigma) const;
    // Exact denoising posterior covariance Sigma - K(sigma)(1-sigma)Sigma.
    const Eigen::MatrixXd& posterior_cov(double sigma) const;
    const GmrfSpec& spec() const { return spec_; }

  private:
    struct Level {
        Eigen::MatrixXd K;
        Eigen::MatrixXd post_cov;
        Eigen::MatrixXd post_chol;
    };
    const Level& level(double sigma) const;

    GmrfSpec spec_;
    mutable std::mutex mutex_;
    mutable std::map<double, Level> cache_;
};

}  // namespace hctl
