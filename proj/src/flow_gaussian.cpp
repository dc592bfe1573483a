#include "hctl/flow_gaussian.hpp"

#include <Eigen/Cholesky>
#include <stdexcept>

namespace hctl {

GaussianModel::GaussianModel(GmrfSpec spec) : spec_(std::move(spec)) {}

const GaussianModel::Level& GaussianModel::level(double sigma) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(sigma);
    if (it != cache_.end()) return it->second;

    const int d = spec_.dim();
    const double a = 1.0 - sigma;
    Level lvl;
    if (sigma == 0.0) {
        lvl.K = Eigen::MatrixXd::Identity(d, d);
        lvl.post_cov = Eigen::MatrixXd::Zero(d, d);
        lvl.post_chol = Eigen::MatrixXd::Zero(d, d);
    } else {
        Eigen::MatrixXd p = a * a * spec_.Sigma;
        p.diagonal().array() += sigma * sigma;
        Eigen::LLT<Eigen::MatrixXd> llt(p);
        if (llt.info() != Eigen::Success)
            throw std::runtime_error("GaussianModel: level covariance not PD");
        // K = a * Sigma * P^-1; symmetric because P is a polynomial in Sigma.
        lvl.K = (llt.solve(spec_.Sigma) * a).transpose();
        lvl.post_cov = spec_.Sigma - a * lvl.K * spec_.Sigma;
        lvl.post_cov = 0.5 * (lvl.post_cov + lvl.post_cov.transpose()).eval();
        Eigen::LLT<Eigen::MatrixXd> pllt(lvl.post_cov);
        if (pllt.info() != Eigen::Success)
            throw std::runtime_error("GaussianModel: posterior covariance not PD");
        lvl.post_chol = pllt.matrixL();
    }
    return cache_.emplace(sigma, std::move(lvl)).first->second;
}

const Eigen::MatrixXd& GaussianModel::denoise_matrix(double sigma) const { return level(sigma).K; }

const Eigen::MatrixXd& GaussianModel::posterior_cov(double sigma) const {
    return level(sigma).post_cov;
}

Eigen::MatrixXd GaussianModel::velocity(const Eigen::MatrixXd& z, double sigma) const {
    check_input(z, sigma);
    if (sigma == 0.0) return Eigen::MatrixXd::Zero(z.rows(), z.cols());
    const Eigen::MatrixXd& K = level(sigma).K;
    return (z - K * z) / sigma;
}

Eigen::MatrixXd GaussianModel::input_vjp(const Eigen::MatrixXd& z, double sigma,
                                         const Eigen::MatrixXd& cotangent) const {
    check_input(z, sigma);
    if (!(sigma > 0.0)) throw std::invalid_argument("input_vjp: sigma must be in (0,1]");
    return level(sigma).K.transpose() * cotangent;
}

Eigen::MatrixXd GaussianModel::posterior_sample(const Eigen::MatrixXd& z, double sigma,
                                                const Eigen::MatrixXd& eps) const {
    check_input(z, sigma);
    if (!(sigma > 0.0)) throw std::invalid_argument("posterior_sample: sigma must be in (0,1]");
    if (eps.rows() != z.rows() || eps.cols() != z.cols())
        throw std::invalid_argument("posterior_sample: eps/state shape mismatch");
    const Level& lvl = level(sigma);
    return lvl.K * z + lvl.post_chol * eps;
}

}  // namespace hctl
