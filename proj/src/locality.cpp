#include "hctl/locality.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>

namespace hctl {

namespace {

// Order-insensitive accumulation (Kahan) so permuting the sample order leaves
// the diagnostic stable to ~1e-15.
class KahanSum {
  public:
    void add(double x) {
        const double y = x - c_;
        const double t = s_ + y;
        c_ = (t - s_) - y;
        s_ = t;
    }
    double value() const { return s_; }

  private:
    double s_ = 0.0;
    double c_ = 0.0;
};

}  // namespace

LineStack build_line_stack(const std::vector<StateTensor>& samples, Axis axis) {
    if (samples.empty()) throw std::invalid_argument("build_line_stack: need at least one sample");
    const Shape4 shape = samples.front().shape;
    for (const auto& s : samples)
        if (!(s.shape == shape)) throw std::invalid_argument("build_line_stack: inconsistent shapes");

    const int C = shape.c;
    int length = 0, off1 = 0, off2 = 0;
    switch (axis) {
        case Axis::kL: length = shape.l; off1 = shape.h; off2 = shape.w; break;
        case Axis::kH: length = shape.h; off1 = shape.l; off2 = shape.w; break;
        case Axis::kW: length = shape.w; off1 = shape.l; off2 = shape.h; break;
    }
    const Eigen::Index n_rows =
        static_cast<Eigen::Index>(samples.size()) * off1 * off2;

    LineStack stack;
    stack.axis = axis;
    stack.length = length;
    stack.channels = C;
    stack.design.resize(n_rows, static_cast<Eigen::Index>(length) * C);

    Eigen::Index row = 0;
    for (const auto& sample : samples) {
        for (int a = 0; a < off1; ++a)
            for (int b = 0; b < off2; ++b) {
                for (int pos = 0; pos < length; ++pos) {
                    int l = 0, h = 0, w = 0;
                    switch (axis) {
                        case Axis::kL: l = pos; h = a; w = b; break;
                        case Axis::kH: l = a; h = pos; w = b; break;
                        case Axis::kW: l = a; h = b; w = pos; break;
                    }
                    for (int c = 0; c < C; ++c)
                        stack.design(row, static_cast<Eigen::Index>(pos) * C + c) =
                            sample(c, l, h, w);
                }
                ++row;
            }
    }

    // Pooled per-coordinate standardization across rows.
    const Eigen::Index cols = stack.design.cols();
    for (Eigen::Index col = 0; col < cols; ++col) {
        KahanSum sum;
        for (Eigen::Index r = 0; r < n_rows; ++r) sum.add(stack.design(r, col));
        const double mean = sum.value() / static_cast<double>(n_rows);
        KahanSum sq;
        for (Eigen::Index r = 0; r < n_rows; ++r) {
            const double d = stack.design(r, col) - mean;
            sq.add(d * d);
        }
        double sd = n_rows > 1 ? std::sqrt(sq.value() / static_cast<double>(n_rows - 1)) : 0.0;
        if (sd < 1e-12) {
            sd = 1e-12;
            stack.degenerate_columns.push_back(static_cast<int>(col));
        }
        for (Eigen::Index r = 0; r < n_rows; ++r)
            stack.design(r, col) = (stack.design(r, col) - mean) / sd;
    }
    return stack;
}

BlockPrecision block_precision(const LineStack& stack, double ridge_lambda) {
    const Eigen::Index n = stack.rows();
    const Eigen::Index d = stack.design.cols();
    if (n <= d) throw std::invalid_argument("block_precision: need N_s > |axis|*C rows");

    BlockPrecision bp;
    bp.length = stack.length;
    bp.channels = stack.channels;
    bp.ridge_lambda = ridge_lambda;

    // Sigma = F^T F / (N_s - 1), accumulated with compensated sums so the
    // result is row-order invariant to ~1e-15.
    Eigen::MatrixXd sigma(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = i; j < d; ++j) {
            KahanSum sum;
            for (Eigen::Index r = 0; r < n; ++r) sum.add(stack.design(r, i) * stack.design(r, j));
            const double v = sum.value() / static_cast<double>(n - 1);
            sigma(i, j) = v;
            sigma(j, i) = v;
        }
    }

    bp.sigma_ridged = sigma;
    const double ridge = ridge_lambda * sigma.trace() / static_cast<double>(d);
    bp.sigma_ridged.diagonal().array() += ridge;

    Eigen::LLT<Eigen::MatrixXd> llt(bp.sigma_ridged);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("block_precision: ridged covariance not PD");
    bp.omega = llt.solve(Eigen::MatrixXd::Identity(d, d));
    bp.omega = 0.5 * (bp.omega + bp.omega.transpose()).eval();
    return bp;
}

PartialCorrelationMap partial_correlation_map(const BlockPrecision& bp, Eigen::Index n_rows) {
    const int len = bp.length;
    const int C = bp.channels;

    // Inverse square roots of the diagonal blocks via symmetric
    // eigendecomposition with an eigenvalue floor.
    std::vector<Eigen::MatrixXd> inv_sqrt(static_cast<std::size_t>(len));
    for (int b = 0; b < len; ++b) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(bp.block(b, b));
        if (es.info() != Eigen::Success)
            throw std::runtime_error("partial_correlation_map: eigensolver failed");
        if ((es.eigenvalues().array() < -1e-10).any())
            throw std::runtime_error("partial_correlation_map: diagonal block not PD");
        Eigen::VectorXd vals = es.eigenvalues().cwiseMax(1e-12);  // eigenvalue floor
        inv_sqrt[static_cast<std::size_t>(b)] =
            es.eigenvectors() * vals.cwiseInverse().cwiseSqrt().asDiagonal() *
            es.eigenvectors().transpose();
    }

    PartialCorrelationMap map;
    map.length = len;
    map.floor = noise_floor(C, n_rows);
    map.rho1.resize(len, len);
    for (int b = 0; b < len; ++b) {
        for (int g = b; g < len; ++g) {
            const Eigen::MatrixXd r = -inv_sqrt[static_cast<std::size_t>(b)] * bp.block(b, g) *
                                      inv_sqrt[static_cast<std::size_t>(g)];
            double rho;
            if (C == 1) {
                rho = std::abs(r(0, 0));
            } else {
                Eigen::JacobiSVD<Eigen::MatrixXd> svd(r);
                rho = svd.singularValues()[0];
            }
            rho = std::min(1.0, std::max(0.0, rho));
            map.rho1(b, g) = rho;
            map.rho1(g, b) = rho;
        }
    }

    double off = 0.0;
    for (int b = 0; b < len; ++b)
        for (int g = 0; g < len; ++g)
            if (b != g) off += map.rho1(b, g) * map.rho1(b, g);
    map.degenerate = off <= 0.0;
    return map;
}

double eta_decay(const PartialCorrelationMap& map, int r) {
    if (r < 0) throw std::invalid_argument("eta_decay: r must be >= 0");
    double tail = 0.0, total = 0.0;
    for (int b = 0; b < map.length; ++b)
        for (int g = 0; g < map.length; ++g) {
            if (b == g) continue;
            const double m = map.rho1(b, g) * map.rho1(b, g);
            total += m;
            if (std::abs(b - g) > r) tail += m;
        }
    if (total <= 0.0) return 0.0;  // degenerate denominator; flagged on the map
    return tail / total;
}

}  // namespace hctl
