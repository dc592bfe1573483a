#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "hctl/checkerboard.hpp"
#include "hctl/gmrf.hpp"
#include "hctl/rng.hpp"

using namespace hctl;

TEST_CASE("checkerboard geometry") {
    const auto squares = Checkerboard::squares();
    REQUIRE(squares.size() == 8);
    double cx = 0.0, cy = 0.0;
    for (const auto& s : squares) {
        cx += s.cx();
        cy += s.cy();
    }
    CHECK(cx == doctest::Approx(0.0));  // centers are symmetric about the origin
    CHECK(cy == doctest::Approx(0.0));
}

TEST_CASE("checkerboard logdensity values") {
    CHECK(Checkerboard::logdensity(0.5, 0.5) == doctest::Approx(-std::log(8.0)));
    CHECK(Checkerboard::logdensity(0.5, 1.5) == -std::numeric_limits<double>::infinity());
    CHECK(Checkerboard::logdensity(3.0, 3.0) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("checkerboard logdensity integrates to one") {
    // Grid quadrature over [-3,3]^2.
    const int n = 600;
    const double h = 6.0 / n;
    double mass = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double x = -3.0 + (i + 0.5) * h;
            const double y = -3.0 + (j + 0.5) * h;
            const double ld = Checkerboard::logdensity(x, y);
            if (std::isfinite(ld)) mass += std::exp(ld) * h * h;
        }
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("checkerboard samples live on the support with balanced squares") {
    Rng rng(42);
    const int n = 80000;
    const Eigen::Matrix2Xd pts = Checkerboard::sample(n, rng);
    std::map<std::pair<int, int>, int> counts;
    double mx = 0.0, my = 0.0;
    for (int k = 0; k < n; ++k) {
        REQUIRE(Checkerboard::on_support(pts(0, k), pts(1, k)));
        counts[{static_cast<int>(std::floor(pts(0, k))), static_cast<int>(std::floor(pts(1, k)))}]++;
        mx += pts(0, k);
        my += pts(1, k);
    }
    REQUIRE(counts.size() == 8);
    // Binomial concentration: |p_hat - 1/8| < 3 sigma.
    const double p = 1.0 / 8.0;
    const double sigma3 = 3.0 * std::sqrt(p * (1 - p) / n);
    for (const auto& [sq, c] : counts)
        CHECK(std::abs(static_cast<double>(c) / n - p) < sigma3);
    // Empirical mean near the symmetric center (0,0); sd of the mean ~ 1.3/sqrt(n).
    CHECK(std::abs(mx / n) < 5.0 * 1.3 / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(my / n) < 5.0 * 1.3 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("conditional modes of the first-coordinate observation") {
    auto modes = Checkerboard::conditional_modes(ObsModel{0.5, 0.2, 0});
    REQUIRE(modes.size() == 2);
    std::sort(modes.begin(), modes.end(), [](auto a, auto b) { return a.j < b.j; });
    CHECK(modes[0].cx() == doctest::Approx(0.5));
    CHECK(modes[0].cy() == doctest::Approx(-1.5));
    CHECK(modes[1].cy() == doctest::Approx(0.5));

    CHECK(Checkerboard::conditional_modes(ObsModel{2.5, 0.2, 0}).empty());

    auto left = Checkerboard::conditional_modes(ObsModel{-1.5, 0.2, 0});
    REQUIRE(left.size() == 2);
    std::sort(left.begin(), left.end(), [](auto a, auto b) { return a.j < b.j; });
    CHECK(left[0].cx() == doctest::Approx(-1.5));
    CHECK(left[0].cy() == doctest::Approx(-1.5));
    CHECK(left[1].cy() == doctest::Approx(0.5));
}

TEST_CASE("gmrf_build structure") {
    // (1,1,4) chain with first-order coupling only: tridiagonal Q.
    const GmrfSpec chain = gmrf_build(1, 1, 4, 0.3, 0.0, 2.0);
    CHECK(chain.band == 1);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            if (i == j)
                CHECK(chain.Q(i, j) == 2.0);
            else if (std::abs(i - j) == 1)
                CHECK(chain.Q(i, j) == -0.3);
            else
                CHECK(chain.Q(i, j) == 0.0);
        }

    // Independent sites.
    const GmrfSpec iid = gmrf_build(1, 2, 2, 0.0, 0.0, 2.0);
    CHECK(iid.band == 0);
    CHECK((iid.Sigma - Eigen::MatrixXd::Identity(4, 4) / 2.0).norm() < 1e-12);

    // Order-2 coupling on a 4^3 lattice: zero beyond Manhattan distance 2.
    const GmrfSpec cube = gmrf_build(4, 4, 4, 0.05, 0.02, 1.0);
    CHECK(cube.band == 2);
    const Shape4 shape{1, 4, 4, 4};
    for (int a = 0; a < 64; ++a)
        for (int b = 0; b < 64; ++b) {
            const int wa = a % 4, ha = (a / 4) % 4, la = a / 16;
            const int wb = b % 4, hb = (b / 4) % 4, lb = b / 16;
            const int dist = std::abs(wa - wb) + std::abs(ha - hb) + std::abs(la - lb);
            if (dist > 2) CHECK(cube.Q(a, b) == 0.0);
        }
    (void)shape;

    CHECK_THROWS_AS(gmrf_build(1, 1, 4, 0.3, 0.0, 0.3), std::runtime_error);  // Cholesky failure
}

TEST_CASE("Q * Sigma is the identity") {
    const GmrfSpec spec = gmrf_build(2, 3, 4, 0.05, 0.01, 1.2);
    const Eigen::MatrixXd prod = spec.Q * spec.Sigma;
    CHECK((prod - Eigen::MatrixXd::Identity(spec.dim(), spec.dim())).norm() /
              std::sqrt(static_cast<double>(spec.dim())) <
          1e-8);
}

TEST_CASE("gmrf_sample matches Sigma entrywise") {
    const GmrfSpec spec = gmrf_build(1, 2, 4, 0.25, 0.0, 2.5);
    Rng rng(9);
    const int n = 50000;
    const Eigen::MatrixXd draws = gmrf_sample(spec, n, rng);
    const Eigen::VectorXd mean = draws.rowwise().mean();
    const Eigen::MatrixXd centered = draws.colwise() - mean;
    const Eigen::MatrixXd cov = centered * centered.transpose() / (n - 1);
    for (int i = 0; i < spec.dim(); ++i) {
        // Mean within 5 standard errors of zero.
        const double se_mean = std::sqrt(spec.Sigma(i, i) / n);
        CHECK(std::abs(mean[i]) < 5.0 * se_mean);
        for (int j = 0; j < spec.dim(); ++j) {
            const double se_cov = std::sqrt((spec.Sigma(i, i) * spec.Sigma(j, j) +
                                             spec.Sigma(i, j) * spec.Sigma(i, j)) /
                                            n);
            CHECK(std::abs(cov(i, j) - spec.Sigma(i, j)) < 5.0 * se_cov);
        }
    }
}

TEST_CASE("conditional oracle degenerate cases") {
    const GmrfSpec spec = gmrf_build(1, 2, 2, 0.0, 0.0, 1.0);  // Q = I
    SiteMask all(1, 2, 2, true);
    Eigen::VectorXd pin(4);
    pin << 1, 2, 3, 4;
    const auto cond = gmrf_conditional_oracle(spec, all, pin, 0.5);
    CHECK(cond.free_sites.empty());
    CHECK(cond.mean.size() == 0);

    // Independent prior: conditioning changes nothing on the complement.
    SiteMask one(1, 2, 2);
    one.set(0, true);
    Eigen::VectorXd pin1(1);
    pin1 << 3.0;
    const auto c2 = gmrf_conditional_oracle(spec, one, pin1, 0.5);
    REQUIRE(c2.free_sites.size() == 3);
    CHECK(c2.mean.norm() == doctest::Approx(0.0));
    CHECK((c2.cov - Eigen::MatrixXd::Identity(3, 3)).norm() < 1e-12);
}

TEST_CASE("conditional oracle agrees with Monte Carlo regression") {
    // 1D tridiagonal chain, observe site 1 (middle), sigma = 0.2.
    const GmrfSpec spec = gmrf_build(1, 1, 3, 0.4, 0.0, 2.0);
    SiteMask mask(1, 1, 3);
    mask.set(1, true);
    const double sigma = 0.2;
    const double pin_value = 1.0;
    Eigen::VectorXd pin(1);
    pin << pin_value;
    const auto cond = gmrf_conditional_oracle(spec, mask, pin, sigma);
    REQUIRE(cond.free_sites == std::vector<int>{0, 2});

    // Monte Carlo: sample (z0, zbar) jointly, estimate E[z0_C | zbar] and
    // Cov[z0_C | zbar] by local weighting around the pin value.
    Rng rng(123);
    const int n = 1000000;
    const Eigen::MatrixXd z0 = gmrf_sample(spec, n, rng);
    Eigen::VectorXd w(n);
    double wsum = 0.0;
    // Importance weights: p(zbar | z0) at the observed pin.
    const double a = 1.0 - sigma;
    for (int k = 0; k < n; ++k) {
        const double resid = pin_value - a * z0(1, k);
        w[k] = std::exp(-0.5 * resid * resid / (sigma * sigma));
        wsum += w[k];
    }
    Eigen::Vector2d mc_mean = Eigen::Vector2d::Zero();
    for (int k = 0; k < n; ++k)
        mc_mean += w[k] * Eigen::Vector2d(z0(0, k), z0(2, k));
    mc_mean /= wsum;
    Eigen::Matrix2d mc_cov = Eigen::Matrix2d::Zero();
    for (int k = 0; k < n; ++k) {
        const Eigen::Vector2d d = Eigen::Vector2d(z0(0, k), z0(2, k)) - mc_mean;
        mc_cov += w[k] * d * d.transpose();
    }
    mc_cov /= wsum;

    // Effective sample size governs the Monte Carlo error.
    const double ess = wsum * wsum / w.squaredNorm();
    const double tol_mean = 5.0 / std::sqrt(ess);
    for (int i = 0; i < 2; ++i) CHECK(std::abs(mc_mean[i] - cond.mean[i]) < tol_mean);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            CHECK(std::abs(mc_cov(i, j) - cond.cov(i, j)) < 10.0 / std::sqrt(ess));
}

TEST_CASE("posterior given noisy direct observation") {
    const GmrfSpec spec = gmrf_build(1, 1, 4, 0.3, 0.0, 2.0);
    SiteMask mask(1, 1, 4);
    mask.set(0, true);
    mask.set(2, true);
    Eigen::VectorXd values = Eigen::VectorXd::Zero(4);
    values[0] = 1.0;
    values[2] = -0.5;
    const auto post = gmrf_posterior_given_obs(spec, mask, values, 0.3);
    // Posterior precision is Q + tau^-2 diag(M); verify by reconstruction.
    Eigen::MatrixXd prec = spec.Q;
    prec(0, 0) += 1.0 / 0.09;
    prec(2, 2) += 1.0 / 0.09;
    CHECK((post.cov * prec - Eigen::MatrixXd::Identity(4, 4)).norm() < 1e-8);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(4);
    rhs[0] = values[0] / 0.09;
    rhs[2] = values[2] / 0.09;
    CHECK((prec * post.mean - rhs).norm() < 1e-10);
}
