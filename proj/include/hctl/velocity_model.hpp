#pragma once

#include <Eigen/Dense>
#include <stdexcept>

#include "hctl/rng.hpp"
#include "hctl/tensor.hpp"

namespace hctl {

// Model evaluation accounting: one forward per velocity evaluation, one
// backward per input VJP. Incremented per chain by the samplers.
struct NfeCounter {
    long long forward = 0;
    long long backward = 0;

    long long nfe() const { return forward + backward; }
};

// Evaluable velocity field u(z, sigma). Batched interface: states are
// (size x B) matrices, one chain per column; evaluation is pure.
class VelocityModel {
  public:
    virtual ~VelocityModel() = default;

    virtual Shape4 shape() const = 0;
    virtual bool has_input_gradient() const = 0;
    virtual bool has_posterior_sample() const { return false; }

    virtual Eigen::MatrixXd velocity(const Eigen::MatrixXd& z, double sigma) const = 0;

    // v^T * d(zhat0)/dz for cotangent v (same layout as z).
    virtual Eigen::MatrixXd input_vjp(const Eigen::MatrixXd& /*z*/, double /*sigma*/,
                                      const Eigen::MatrixXd& /*cotangent*/) const {
        throw std::logic_error("input_vjp: model has no input-gradient capability");
    }

    // Exact draw from the level-sigma denoising posterior, consuming the
    // supplied standard-normal noise (one column per state column). Gaussian
    // backend only.
    virtual Eigen::MatrixXd posterior_sample(const Eigen::MatrixXd& /*z*/, double /*sigma*/,
                                             const Eigen::MatrixXd& /*eps*/) const {
        throw std::logic_error("posterior_sample: only the Gaussian backend supports it");
    }

  protected:
    static void check_input(const Eigen::MatrixXd& z, double sigma) {
        if (!(sigma >= 0.0 && sigma <= 1.0))
            throw std::invalid_argument("velocity: sigma must be in [0,1]");
        if (!z.allFinite()) throw std::invalid_argument("velocity: non-finite input state");
    }
};

// zhat0 = z - sigma*u(z, sigma); the identity at sigma = 0.
inline Eigen::MatrixXd clean_prediction(const VelocityModel& model, const Eigen::MatrixXd& z,
                                        double sigma) {
    if (sigma == 0.0) return z;
    return z - sigma * model.velocity(z, sigma);
}

// Single-state helpers used by the per-chain API.
inline StateTensor velocity(const VelocityModel& model, const StateTensor& z, double sigma) {
    return StateTensor(z.shape, model.velocity(z.data, sigma));
}

inline StateTensor clean_prediction(const VelocityModel& model, const StateTensor& z, double sigma) {
    return StateTensor(z.shape, clean_prediction(model, Eigen::MatrixXd(z.data), sigma));
}

inline StateTensor input_vjp(const VelocityModel& model, const StateTensor& z, double sigma,
                             const StateTensor& cotangent) {
    return StateTensor(z.shape, model.input_vjp(z.data, sigma, cotangent.data));
}

}  // namespace hctl
