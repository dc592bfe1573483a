#include "hctl/gmrf.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <stdexcept>

namespace hctl {

namespace {

int manhattan(const Shape4& s, int a, int b) {
    const int wa = a % s.w, wb = b % s.w;
    const int ha = (a / s.w) % s.h, hb = (b / s.w) % s.h;
    const int la = a / (s.w * s.h), lb = b / (s.w * s.h);
    return std::abs(wa - wb) + std::abs(ha - hb) + std::abs(la - lb);
}

// 1 if a and b differ by `step` along exactly one axis, else 0.
bool axis_neighbor(const Shape4& s, int a, int b, int step) {
    const int wa = a % s.w, wb = b % s.w;
    const int ha = (a / s.w) % s.h, hb = (b / s.w) % s.h;
    const int la = a / (s.w * s.h), lb = b / (s.w * s.h);
    const int dw = std::abs(wa - wb), dh = std::abs(ha - hb), dl = std::abs(la - lb);
    return (dw == step && dh == 0 && dl == 0) || (dw == 0 && dh == step && dl == 0) ||
           (dw == 0 && dh == 0 && dl == step);
}

}  // namespace

GmrfSpec gmrf_build(int L, int H, int W, double beta1, double beta2, double tau_diag) {
    if (L < 1 || H < 1 || W < 1) throw std::invalid_argument("gmrf_build: bad lattice shape");
    if (!(tau_diag > 0)) throw std::invalid_argument("gmrf_build: tau_diag must be > 0");
    // tau_diag > 2*(6*beta1 + 6*beta2) guarantees diagonal dominance on any
    // lattice; smaller margins are accepted as long as the Cholesky below
    // succeeds, which is the actual positive-definiteness gate.

    GmrfSpec spec;
    spec.shape = Shape4{1, L, H, W};
    spec.beta1 = beta1;
    spec.beta2 = beta2;
    spec.tau_diag = tau_diag;
    spec.band = beta2 != 0.0 ? 2 : (beta1 != 0.0 ? 1 : 0);

    const int d = spec.dim();
    spec.Q = Eigen::MatrixXd::Zero(d, d);
    for (int a = 0; a < d; ++a) {
        spec.Q(a, a) = tau_diag;
        for (int b = 0; b < d; ++b) {
            if (a == b) continue;
            if (axis_neighbor(spec.shape, a, b, 1)) spec.Q(a, b) = -beta1;
            if (axis_neighbor(spec.shape, a, b, 2)) spec.Q(a, b) = -beta2;
        }
    }

    Eigen::LLT<Eigen::MatrixXd> llt(spec.Q);
    if (llt.info() != Eigen::Success) throw std::runtime_error("gmrf_build: Q is not positive definite");
    spec.Sigma = llt.solve(Eigen::MatrixXd::Identity(d, d));
    // Symmetrize against round-off before factoring.
    spec.Sigma = 0.5 * (spec.Sigma + spec.Sigma.transpose()).eval();
    Eigen::LLT<Eigen::MatrixXd> sllt(spec.Sigma);
    if (sllt.info() != Eigen::Success)
        throw std::runtime_error("gmrf_build: Sigma is not positive definite");
    spec.sigma_chol = sllt.matrixL();

    // Band sanity: zero beyond the declared graph distance.
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
            if (manhattan(spec.shape, a, b) > spec.band && spec.Q(a, b) != 0.0)
                throw std::runtime_error("gmrf_build: band violation");
    return spec;
}

Eigen::MatrixXd gmrf_sample(const GmrfSpec& spec, int n, Rng& rng) {
    const int d = spec.dim();
    Eigen::MatrixXd eps(d, n);
    for (int k = 0; k < n; ++k)
        for (int i = 0; i < d; ++i) eps(i, k) = rng.normal();
    return spec.sigma_chol * eps;
}

ConditionalGaussian gmrf_conditional_oracle(const GmrfSpec& spec, const SiteMask& mask,
                                            const Eigen::VectorXd& pin, double sigma) {
    if (!mask.shape_matches(spec.shape)) throw std::invalid_argument("oracle: mask/shape mismatch");
    if (!(sigma > 0.0 && sigma < 1.0)) throw std::invalid_argument("oracle: sigma must be in (0,1)");

    std::vector<int> obs, free_sites;
    for (int s = 0; s < spec.dim(); ++s) (mask[s] ? obs : free_sites).push_back(s);
    if (static_cast<int>(obs.size()) != pin.size())
        throw std::invalid_argument("oracle: pin size mismatch");

    ConditionalGaussian out;
    out.free_sites = free_sites;
    const int nf = static_cast<int>(free_sites.size());
    const int no = static_cast<int>(obs.size());
    if (nf == 0) {
        out.mean.resize(0);
        out.cov.resize(0, 0);
        return out;
    }
    if (no == 0) {
        // Nothing observed: the conditional is the prior marginal.
        out.mean = Eigen::VectorXd::Zero(nf);
        out.cov.resize(nf, nf);
        for (int i = 0; i < nf; ++i)
            for (int j = 0; j < nf; ++j) out.cov(i, j) = spec.Sigma(free_sites[i], free_sites[j]);
        return out;
    }

    Eigen::MatrixXd sigma_mm(no, no), sigma_cm(nf, no), sigma_cc(nf, nf);
    for (int i = 0; i < no; ++i)
        for (int j = 0; j < no; ++j) sigma_mm(i, j) = spec.Sigma(obs[i], obs[j]);
    for (int i = 0; i < nf; ++i)
        for (int j = 0; j < no; ++j) sigma_cm(i, j) = spec.Sigma(free_sites[i], obs[j]);
    for (int i = 0; i < nf; ++i)
        for (int j = 0; j < nf; ++j) sigma_cc(i, j) = spec.Sigma(free_sites[i], free_sites[j]);

    const double a = 1.0 - sigma;
    // Cov(zbar) = a^2 Sigma_MM +
    //             sigma^2 I;  Cov(z0|_C, zbar) = a Sigma_CM.
    Eigen::MatrixXd cov_pin = a * a * sigma_mm;
    cov_pin.diagonal().array() += sigma * sigma;
    Eigen::LLT<Eigen::MatrixXd> llt(cov_pin);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("oracle: singular observation covariance");
    const Eigen::MatrixXd cross = a * sigma_cm;
    out.mean = cross * llt.solve(pin);
    out.cov = sigma_cc - cross * llt.solve(cross.transpose());
    out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
    return out;
}

ConditionalGaussian gmrf_posterior_given_obs(const GmrfSpec& spec, const SiteMask& mask,
                                             const Eigen::VectorXd& observed_values, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("posterior: tau must be > 0");
    if (observed_values.size() != spec.dim())
        throw std::invalid_argument("posterior: observed_values must cover the lattice");
    const int d = spec.dim();
    Eigen::MatrixXd prec = spec.Q;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d);
    for (int s = 0; s < d; ++s) {
        if (mask[s]) {
            prec(s, s) += 1.0 / (tau * tau);
            rhs[s] = observed_values[s] / (tau * tau);
        }
    }
    Eigen::LLT<Eigen::MatrixXd> llt(prec);
    if (llt.info() != Eigen::Success) throw std::runtime_error("posterior: precision not PD");
    ConditionalGaussian out;
    out.free_sites.resize(static_cast<std::size_t>(d));
    for (int s = 0; s < d; ++s) out.free_sites[static_cast<std::size_t>(s)] = s;
    out.mean = llt.solve(rhs);
    out.cov = llt.solve(Eigen::MatrixXd::Identity(d, d));
    out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
    return out;
}

Eigen::MatrixXd gaussian_draws(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, int n,
                               Rng& rng) {
    const int d = static_cast<int>(mean.size());
    if (d == 0) return Eigen::MatrixXd(0, n);
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    Eigen::MatrixXd root;
    if (llt.info() == Eigen::Success) {
        root = llt.matrixL();
    } else {
        // Fall back to an eigendecomposition for semi-definite covariances.
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
        root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    }
    Eigen::MatrixXd eps(d, n);
    for (int k = 0; k < n; ++k)
        for (int i = 0; i < d; ++i) eps(i, k) = rng.normal();
    Eigen::MatrixXd out = root * eps;
    out.colwise() += mean;
    return out;
}

}  // namespace hctl
