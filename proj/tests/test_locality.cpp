#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "hctl/gmrf.hpp"
#include "hctl/locality.hpp"
#include "hctl/rng.hpp"

using namespace hctl;

namespace {

std::vector<StateTensor> iid_normal_states(const Shape4& shape, int n, Rng& rng) {
    std::vector<StateTensor> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        Eigen::VectorXd data(shape.size());
        for (int i = 0; i < shape.size(); ++i) data[i] = rng.normal();
        out.emplace_back(shape, data);
    }
    return out;
}

std::vector<StateTensor> gmrf_states(const GmrfSpec& spec, int n, Rng& rng) {
    const Eigen::MatrixXd draws = gmrf_sample(spec, n, rng);
    std::vector<StateTensor> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) out.emplace_back(spec.shape, draws.col(k));
    return out;
}

}  // namespace

TEST_CASE("line stack shapes and standardization") {
    Rng rng(1);
    const Shape4 shape{1, 4, 4, 4};
    auto samples = iid_normal_states(shape, 10, rng);

    const LineStack stack = build_line_stack(samples, Axis::kW);
    CHECK(stack.rows() == 160);  // 10 * 4 * 4
    CHECK(stack.length == 4);
    CHECK(stack.channels == 1);
    CHECK(stack.design.cols() == 4);

    for (Eigen::Index c = 0; c < stack.design.cols(); ++c) {
        CHECK(std::abs(stack.design.col(c).mean()) < 1e-10);
        const double var = stack.design.col(c).squaredNorm() / (stack.rows() - 1);
        CHECK(std::abs(var - 1.0) < 1e-8);
    }

    // Degenerate axis of extent 1.
    const Shape4 flat{1, 1, 4, 4};
    auto flat_samples = iid_normal_states(flat, 5, rng);
    const LineStack lstack = build_line_stack(flat_samples, Axis::kL);
    CHECK(lstack.length == 1);
    CHECK(lstack.rows() == 5 * 16);

    // Zero-variance coordinates are floored and flagged.
    auto constant = iid_normal_states(Shape4{1, 1, 1, 3}, 6, rng);
    for (auto& s : constant) s.data[1] = 7.0;
    const LineStack cstack = build_line_stack(constant, Axis::kW);
    CHECK(cstack.degenerate_columns == std::vector<int>{1});
}

TEST_CASE("block precision of independent data is near the identity") {
    Rng rng(2);
    const Shape4 shape{1, 1, 1, 4};
    auto samples = iid_normal_states(shape, 20000, rng);
    const LineStack stack = build_line_stack(samples, Axis::kW);
    const BlockPrecision bp = block_precision(stack);

    CHECK((bp.omega * bp.sigma_ridged - Eigen::MatrixXd::Identity(4, 4)).norm() < 1e-6);

    const double floor = noise_floor(1, stack.rows());
    for (int i = 0; i < 4; ++i) {
        CHECK(std::abs(bp.omega(i, i) - 1.0) < 0.05);
        for (int j = 0; j < 4; ++j)
            if (i != j) CHECK(std::abs(bp.omega(i, j)) < 3.0 * floor);
    }
}

TEST_CASE("block precision recovers a tridiagonal zero pattern") {
    // 1D chain: each sample is one full line, so the line-marginal precision
    // is exactly the banded Q.
    const GmrfSpec spec = gmrf_build(1, 1, 8, 0.4, 0.0, 2.0);
    Rng rng(3);
    auto samples = gmrf_states(spec, 20000, rng);
    const LineStack stack = build_line_stack(samples, Axis::kW);
    const BlockPrecision bp = block_precision(stack);
    const double floor = noise_floor(1, stack.rows());
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            if (std::abs(i - j) <= 1) continue;
            const double scaled = std::abs(bp.omega(i, j)) /
                                  std::sqrt(bp.omega(i, i) * bp.omega(j, j));
            CHECK(scaled < 3.0 * floor);
        }
}

TEST_CASE("partial correlation map: diagonal, scalar reduction, chain value") {
    const GmrfSpec spec = gmrf_build(1, 1, 6, 0.45, 0.0, 2.0);
    Rng rng(4);
    auto samples = gmrf_states(spec, 30000, rng);
    const LineStack stack = build_line_stack(samples, Axis::kW);
    const BlockPrecision bp = block_precision(stack);
    const PartialCorrelationMap map = partial_correlation_map(bp, stack.rows());

    for (int b = 0; b < 6; ++b) CHECK(std::abs(map.rho1(b, b) - 1.0) < 1e-8);

    // C = 1: rho1 is |Omega_bg| / sqrt(Omega_bb Omega_gg).
    for (int b = 0; b < 6; ++b)
        for (int g = 0; g < 6; ++g) {
            if (b == g) continue;
            const double expect = std::abs(bp.omega(b, g)) /
                                  std::sqrt(bp.omega(b, b) * bp.omega(g, g));
            CHECK(map.rho1(b, g) == doctest::Approx(std::min(1.0, expect)));
        }

    // Known partial correlation of the interior chain pair: beta / tau_diag.
    const double expect = 0.45 / 2.0;
    const double tol = 5.0 / std::sqrt(static_cast<double>(stack.rows()));
    CHECK(std::abs(map.rho1(2, 3) - expect) < tol + 0.01);
    CHECK(map.rho1.maxCoeff() <= 1.0);
    CHECK(map.rho1.minCoeff() >= 0.0);
}

TEST_CASE("eta decay on crafted maps") {
    PartialCorrelationMap map;
    map.length = 4;
    map.rho1 = Eigen::MatrixXd::Zero(4, 4);
    for (int i = 0; i < 4; ++i) map.rho1(i, i) = 1.0;

    // Mass only at distance 1.
    map.rho1(0, 1) = map.rho1(1, 0) = 0.5;
    map.rho1(1, 2) = map.rho1(2, 1) = 0.5;
    CHECK(eta_decay(map, 0) == doctest::Approx(1.0));
    CHECK(eta_decay(map, 1) == doctest::Approx(0.0));

    // Uniform off-diagonal mass on 4 positions: eta(1) = (4+2)/12.
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            if (i != j) map.rho1(i, j) = 0.3;
    CHECK(eta_decay(map, 0) == doctest::Approx(1.0));
    CHECK(eta_decay(map, 1) == doctest::Approx(0.5));
    CHECK(eta_decay(map, 2) == doctest::Approx(2.0 / 12.0));
    CHECK(eta_decay(map, 3) == doctest::Approx(0.0));
    for (int r = 1; r < 4; ++r) CHECK(eta_decay(map, r) <= eta_decay(map, r - 1));

    // All-zero off-diagonal: degenerate denominator returns 0.
    PartialCorrelationMap zero;
    zero.length = 3;
    zero.rho1 = Eigen::MatrixXd::Identity(3, 3);
    CHECK(eta_decay(zero, 0) == 0.0);
}

TEST_CASE("noise floor formula") {
    CHECK(noise_floor(48, 29000) == doctest::Approx(2.0 * std::sqrt(48.0 / 29000.0)));
    CHECK(noise_floor(48, 29000) == doctest::Approx(0.0813).epsilon(0.01));
    CHECK(noise_floor(1, 4) == doctest::Approx(1.0));
    CHECK(noise_floor(1, 8000) / noise_floor(1, 16000) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("sample order permutation leaves the map stable to 1e-12") {
    const GmrfSpec spec = gmrf_build(1, 2, 4, 0.2, 0.0, 1.8);
    Rng rng(5);
    auto samples = gmrf_states(spec, 3000, rng);
    auto shuffled = samples;
    std::mt19937 mt(99);
    std::shuffle(shuffled.begin(), shuffled.end(), mt);

    for (Axis axis : {Axis::kH, Axis::kW}) {
        const auto a = partial_correlation_map(block_precision(build_line_stack(samples, axis)),
                                               static_cast<Eigen::Index>(samples.size()) * 2);
        const auto b = partial_correlation_map(block_precision(build_line_stack(shuffled, axis)),
                                               static_cast<Eigen::Index>(samples.size()) * 2);
        CHECK((a.rho1 - b.rho1).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("per-coordinate affine rescaling leaves the map invariant to 1e-8") {
    const GmrfSpec spec = gmrf_build(1, 1, 5, 0.3, 0.05, 2.2);
    Rng rng(6);
    auto samples = gmrf_states(spec, 4000, rng);
    auto scaled = samples;
    std::vector<double> scale(5), shift(5);
    for (int i = 0; i < 5; ++i) {
        scale[static_cast<std::size_t>(i)] = rng.uniform(0.2, 5.0);
        shift[static_cast<std::size_t>(i)] = rng.uniform(-3.0, 3.0);
    }
    for (auto& s : scaled)
        for (int i = 0; i < 5; ++i)
            s.data[i] = scale[static_cast<std::size_t>(i)] * s.data[i] +
                        shift[static_cast<std::size_t>(i)];

    const auto a = partial_correlation_map(block_precision(build_line_stack(samples, Axis::kW)),
                                           static_cast<Eigen::Index>(samples.size()));
    const auto b = partial_correlation_map(block_precision(build_line_stack(scaled, Axis::kW)),
                                           static_cast<Eigen::Index>(samples.size()));
    CHECK((a.rho1 - b.rho1).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("order-2 lattice: eta(2) small and beyond-band mass at the floor") {
    const GmrfSpec spec = gmrf_build(4, 4, 4, 0.20, 0.05, 3.2);
    Rng rng(7);
    const int n = 700;  // N_s = 700*16 = 11200 lines per axis
    auto samples = gmrf_states(spec, n, rng);

    for (Axis axis : {Axis::kL, Axis::kH, Axis::kW}) {
        const LineStack stack = build_line_stack(samples, axis);
        REQUIRE(stack.rows() >= 10000);
        const BlockPrecision bp = block_precision(stack);
        const PartialCorrelationMap map = partial_correlation_map(bp, stack.rows());
        CHECK(eta_decay(map, 2) < 0.1);
        for (int b = 0; b < map.length; ++b)
            for (int g = 0; g < map.length; ++g)
                if (std::abs(b - g) > spec.band) CHECK(map.rho1(b, g) <= 2.0 * map.floor);
    }
}

TEST_CASE("order-1 lattice: distance-2 partial correlation at the floor") {
    const GmrfSpec spec = gmrf_build(1, 4, 8, 0.25, 0.0, 2.4);
    Rng rng(8);
    auto samples = gmrf_states(spec, 3000, rng);  // N_s = 3000*4 = 12000 on W
    const LineStack stack = build_line_stack(samples, Axis::kW);
    const PartialCorrelationMap map =
        partial_correlation_map(block_precision(stack), stack.rows());
    for (int b = 0; b < map.length; ++b)
        for (int g = 0; g < map.length; ++g)
            if (std::abs(b - g) == 2) CHECK(map.rho1(b, g) <= 2.0 * map.floor);
}

TEST_CASE("block precision rejects underdetermined stacks") {
    Rng rng(9);
    auto samples = iid_normal_states(Shape4{1, 1, 1, 8}, 5, rng);
    const LineStack stack = build_line_stack(samples, Axis::kW);
    CHECK_THROWS_AS(block_precision(stack), std::invalid_argument);
}
