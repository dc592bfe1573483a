#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hctl/flow_gaussian.hpp"
#include "hctl/gmrf.hpp"
#include "hctl/metrics.hpp"
#include "hctl/rng.hpp"

using namespace hctl;

TEST_CASE("manifold hit basics") {
    Eigen::Matrix2Xd inside(2, 3);
    inside << 0.5, 0.5, 0.5, 0.5, 0.5, 0.5;
    CHECK(manifold_hit(inside) == 1.0);

    Eigen::Matrix2Xd outside(2, 2);
    outside << 0.5, 0.5, 1.5, 1.5;
    CHECK(manifold_hit(outside) == 0.0);

    Rng rng(1);
    CHECK(manifold_hit(Checkerboard::sample(5000, rng)) == 1.0);

    CHECK_THROWS_AS(manifold_hit(Eigen::Matrix2Xd(2, 0)), std::invalid_argument);
}

TEST_CASE("posterior hit attribution") {
    const ObsModel obs{0.5, 0.2, 0};
    Eigen::Matrix2Xd pts(2, 3);
    pts.col(0) << 0.5, 0.5;    // upper mode square
    pts.col(1) << 0.5, 1.6;    // outside both mode squares
    pts.col(2) << -0.5, -0.5;  // filled square, but not a conditional mode
    const HitReport r = posterior_hit(pts, obs);
    CHECK(r.n == 3);
    CHECK(r.posterior_hits == 1);
    CHECK(r.mode_counts[1] == 1);  // modes ordered by center y; (0.5,0.5) is the upper one
    CHECK(r.mode_counts[0] == 0);
    CHECK(r.manifold_hits == 2);  // col(2) is on the support
}

TEST_CASE("posterior hits imply manifold hits pointwise") {
    Rng rng(2);
    const ObsModel obs{0.5, 0.2, 0};
    Eigen::Matrix2Xd pts(2, 5000);
    for (int k = 0; k < 5000; ++k) {
        pts(0, k) = rng.uniform(-3.0, 3.0);
        pts(1, k) = rng.uniform(-3.0, 3.0);
    }
    for (int k = 0; k < 5000; ++k) {
        const HitReport r = posterior_hit(pts.middleCols(k, 1), obs);
        if (r.posterior_hits > 0) CHECK(r.manifold_hits > 0);
    }
}

TEST_CASE("energy distance basics") {
    Rng rng(3);
    Eigen::MatrixXd x(1, 500);
    for (int i = 0; i < 500; ++i) x(0, i) = rng.normal();
    CHECK(std::abs(energy_distance(x, x)) <= 1e-12);

    Eigen::MatrixXd y(1, 400);
    for (int i = 0; i < 400; ++i) y(0, i) = rng.normal() + 10.0;
    const double big = energy_distance(x, y);
    CHECK(big > 15.0);
    CHECK(std::abs(energy_distance(x, y) - energy_distance(y, x)) < 1e-12);
}

TEST_CASE("energy distance is nonnegative across same-distribution pairs") {
    Rng rng(4);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 10 + static_cast<int>(rng.below(30));
        Eigen::MatrixXd x(2, n), y(2, n);
        for (int i = 0; i < 2 * n; ++i) {
            x.data()[i] = rng.normal();
            y.data()[i] = rng.normal();
        }
        CHECK(energy_distance(x, y) >= -1e-10);
    }
}

TEST_CASE("checkerboard posterior oracle") {
    Rng rng(5);
    const ObsModel obs{0.5, 0.2, 0};
    const int n = 20000;
    const Eigen::Matrix2Xd draws = checkerboard_posterior_oracle(obs, n, rng);
    const HitReport r = posterior_hit(draws, obs);
    CHECK(r.posterior_rate() == 1.0);  // supported on the two mode squares by construction

    // Exact symmetry of the two modes: balance 0.5 within 3 binomial sigmas.
    const double bal = r.mode_balance();
    CHECK(std::abs(bal - 0.5) < 3.0 * std::sqrt(0.25 / n));

    // x1 concentrates near the anchor at sigma_y = 0.2.
    double mean_x = 0.0;
    for (int k = 0; k < n; ++k) mean_x += draws(0, k);
    mean_x /= n;
    CHECK(std::abs(mean_x - 0.5) < 0.02);
}

TEST_CASE("energy permutation test separates equal from shifted laws") {
    Rng rng(6);
    Eigen::MatrixXd ref(2, 4000), same(2, 4000), shifted(2, 4000);
    for (int i = 0; i < ref.size(); ++i) {
        ref.data()[i] = rng.normal();
        same.data()[i] = rng.normal();
        shifted.data()[i] = rng.normal() + 0.25;
    }
    Rng perm1(7), perm2(7);
    const PermutationTest ok = energy_permutation_test(same, ref, 100, 800, perm1);
    CHECK(ok.statistic < ok.null_p95 * 3.0 + 0.05);  // same law: small statistic
    const PermutationTest bad = energy_permutation_test(shifted, ref, 100, 800, perm2);
    CHECK(bad.statistic > bad.null_p95);  // shifted law: detected
}

TEST_CASE("polyak variance ratio: identity at J=1, reduction at J=16") {
    GmrfSpec spec = gmrf_build(1, 2, 4, 0.25, 0.05, 3.0);
    GaussianModel model(spec);
    const Shape4 shape = model.shape();
    Observation obs;
    obs.mask = SiteMask(shape.l, shape.h, shape.w);
    for (int s = 0; s < 4; ++s) obs.mask.set(s, true);
    obs.values = StateTensor::zeros(shape);
    for (int s = 0; s < 4; ++s) obs.values.data[s] = 0.6;
    obs.tau = 0.2;

    const double one = polyak_variance_ratio(model, obs, 0.5, 1, 80, InnerRecon::kPosteriorSample, 9);
    CHECK(one == 1.0);

    const double r16 =
        polyak_variance_ratio(model, obs, 0.5, 16, 200, InnerRecon::kPosteriorSample, 9);
    CHECK(r16 < 0.9);
    CHECK(r16 > 0.0);

    // Invariance to an overall shift of the pin values.
    Observation shifted = obs;
    for (int s = 0; s < 4; ++s) shifted.values.data[s] += 2.5;
    const double r16b =
        polyak_variance_ratio(model, shifted, 0.5, 16, 200, InnerRecon::kPosteriorSample, 9);
    CHECK(std::abs(r16 - r16b) < 1e-10);
}
