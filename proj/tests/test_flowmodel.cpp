#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hctl/flow_gaussian.hpp"
#include "hctl/flow_mlp.hpp"
#include "hctl/gmrf.hpp"
#include "hctl/rng.hpp"

using namespace hctl;

namespace {

GaussianModel scalar_model(double prior_var = 1.0) {
    // 1-site lattice: Q = 1/prior_var, Sigma = prior_var.
    GmrfSpec spec = gmrf_build(1, 1, 1, 0.0, 0.0, 1.0 / prior_var);
    return GaussianModel(std::move(spec));
}

MlpNet<double> small_net(Rng& rng, int hidden = 32, int embed = 16) {
    TimeEmbedding te{embed, 1.0, 1000.0};
    return MlpNet<double>::random_init(Shape4{1, 1, 1, 2}, hidden, te, rng);
}

double mlp_loss(const MlpNet<double>& net, const Eigen::MatrixXd& z, const Eigen::VectorXd& sigmas,
                const Eigen::MatrixXd& target) {
    MlpNet<double>::Trace trace;
    Eigen::MatrixXd u = net.forward_trace(z, sigmas, trace);
    return (u - target).squaredNorm() / static_cast<double>(z.cols());
}

// Flattened parameter access helpers for the finite-difference oracle.
std::vector<double*> param_pointers(MlpNet<double>& net) {
    std::vector<double*> out;
    for (auto& w : net.weights)
        for (Eigen::Index i = 0; i < w.size(); ++i) out.push_back(w.data() + i);
    for (auto& b : net.biases)
        for (Eigen::Index i = 0; i < b.size(); ++i) out.push_back(b.data() + i);
    return out;
}

std::vector<double> grad_flat(const MlpNet<double>::Grads& grads) {
    std::vector<double> out;
    for (const auto& w : grads.weights)
        for (Eigen::Index i = 0; i < w.size(); ++i) out.push_back(*(w.data() + i));
    for (const auto& b : grads.biases)
        for (Eigen::Index i = 0; i < b.size(); ++i) out.push_back(*(b.data() + i));
    return out;
}

}  // namespace

TEST_CASE("gaussian backend closed forms at unit prior") {
    GaussianModel model = scalar_model(1.0);
    Eigen::MatrixXd z(1, 1);
    z(0, 0) = 2.0;

    // sigma = 0.5: K = 0.5/(0.25+0.25) = 1, so u = 0.
    CHECK(model.velocity(z, 0.5)(0, 0) == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(model.denoise_matrix(0.5)(0, 0) == doctest::Approx(1.0));

    // sigma -> 1: K -> 0, u -> z.
    CHECK(model.denoise_matrix(1.0)(0, 0) == doctest::Approx(0.0));
    CHECK(model.velocity(z, 1.0)(0, 0) == doctest::Approx(2.0));

    // sigma = 0: zero velocity by convention, identity clean prediction.
    CHECK(model.velocity(z, 0.0)(0, 0) == 0.0);
    CHECK(clean_prediction(model, z, 0.0)(0, 0) == 2.0);

    // sigma = 0.9: K = 0.1/0.82, zhat = K z.
    CHECK(clean_prediction(model, z, 0.9)(0, 0) == doctest::Approx(0.1 / 0.82 * 2.0));
}

TEST_CASE("gaussian clean prediction equals K z on a coupled lattice") {
    GmrfSpec spec = gmrf_build(1, 2, 3, 0.2, 0.05, 2.0);
    GaussianModel model(spec);
    Rng rng(5);
    Eigen::MatrixXd z(spec.dim(), 3);
    for (int i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
    for (double sigma : {0.1, 0.5, 0.9}) {
        const Eigen::MatrixXd expect = model.denoise_matrix(sigma) * z;
        CHECK((clean_prediction(model, z, sigma) - expect).norm() < 1e-12);
    }
}

TEST_CASE("gaussian velocity and clean prediction are linear in z") {
    GmrfSpec spec = gmrf_build(1, 2, 2, 0.15, 0.0, 1.5);
    GaussianModel model(spec);
    Rng rng(6);
    Eigen::MatrixXd x(4, 1), y(4, 1);
    for (int i = 0; i < 4; ++i) {
        x(i, 0) = rng.normal();
        y(i, 0) = rng.normal();
    }
    const double a = 1.3, b = -0.7;
    for (double sigma : {0.2, 0.6, 1.0}) {
        const Eigen::MatrixXd lhs = model.velocity(a * x + b * y, sigma);
        const Eigen::MatrixXd rhs = a * model.velocity(x, sigma) + b * model.velocity(y, sigma);
        CHECK((lhs - rhs).norm() < 1e-10);
        const Eigen::MatrixXd lhs2 = clean_prediction(model, a * x + b * y, sigma);
        const Eigen::MatrixXd rhs2 =
            a * clean_prediction(model, x, sigma) + b * clean_prediction(model, y, sigma);
        CHECK((lhs2 - rhs2).norm() < 1e-10);
    }
}

TEST_CASE("gaussian input vjp is K transpose") {
    GmrfSpec spec = gmrf_build(1, 1, 4, 0.3, 0.05, 2.2);
    GaussianModel model(spec);
    Rng rng(7);
    Eigen::MatrixXd z(4, 1), v(4, 1);
    for (int i = 0; i < 4; ++i) {
        z(i, 0) = rng.normal();
        v(i, 0) = rng.normal();
    }
    const double sigma = 0.4;
    const Eigen::MatrixXd expect = model.denoise_matrix(sigma).transpose() * v;
    CHECK((model.input_vjp(z, sigma, v) - expect).norm() < 1e-12);
    CHECK(model.input_vjp(z, sigma, Eigen::MatrixXd::Zero(4, 1)).norm() == 0.0);
}

TEST_CASE("gaussian posterior sample has the exact posterior law") {
    GmrfSpec spec = gmrf_build(1, 1, 3, 0.3, 0.0, 2.0);
    GaussianModel model(spec);
    Rng rng(8);
    Eigen::VectorXd z0(3);
    z0 << 0.7, -0.2, 1.1;
    const double sigma = 0.5;
    const int n = 200000;
    Eigen::MatrixXd z = z0.replicate(1, n);
    Eigen::MatrixXd eps(3, n);
    for (int i = 0; i < eps.size(); ++i) eps.data()[i] = rng.normal();
    const Eigen::MatrixXd draws = model.posterior_sample(z, sigma, eps);
    const Eigen::VectorXd mean = draws.rowwise().mean();
    const Eigen::VectorXd expect_mean = model.denoise_matrix(sigma) * z0;
    const Eigen::MatrixXd centered = draws.colwise() - mean;
    const Eigen::MatrixXd cov = centered * centered.transpose() / (n - 1);
    const Eigen::MatrixXd expect_cov = model.posterior_cov(sigma);
    for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(mean[i] - expect_mean[i]) < 5.0 * std::sqrt(expect_cov(i, i) / n));
        for (int j = 0; j < 3; ++j) {
            const double se = std::sqrt((expect_cov(i, i) * expect_cov(j, j) +
                                         expect_cov(i, j) * expect_cov(i, j)) / n);
            CHECK(std::abs(cov(i, j) - expect_cov(i, j)) < 5.0 * se);
        }
    }
}

TEST_CASE("velocity input validation") {
    GaussianModel model = scalar_model();
    Eigen::MatrixXd z(1, 1);
    z(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(model.velocity(z, 0.5), std::invalid_argument);
    z(0, 0) = 1.0;
    CHECK_THROWS_AS(model.velocity(z, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(model.velocity(z, -0.1), std::invalid_argument);
}

TEST_CASE("time embedding frequencies are geometric in [1,1000]") {
    TimeEmbedding te{16, 1.0, 1000.0};
    const Eigen::VectorXd f = te.frequencies();
    REQUIRE(f.size() == 8);
    CHECK(f[0] == doctest::Approx(1.0));
    CHECK(f[7] == doctest::Approx(1000.0));
    for (int i = 1; i < 8; ++i) CHECK(f[i] > f[i - 1]);
}

TEST_CASE("mlp forward is pure (bit-identical repeat calls)") {
    Rng rng(21);
    MlpNet<double> net = small_net(rng);
    MlpModel model(net);
    Eigen::MatrixXd z(2, 5);
    for (int i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
    const Eigen::MatrixXd a = model.velocity(z, 0.37);
    const Eigen::MatrixXd b = model.velocity(z, 0.37);
    CHECK(a == b);
}

TEST_CASE("mlp parameter gradients match central finite differences") {
    Rng rng(22);
    for (int point = 0; point < 20; ++point) {
        MlpNet<double> net = small_net(rng, 16, 8);
        const int batch = 3;
        Eigen::MatrixXd z(2, batch), target(2, batch);
        Eigen::VectorXd sigmas(batch);
        for (int i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
        for (int i = 0; i < target.size(); ++i) target.data()[i] = rng.normal();
        for (int i = 0; i < batch; ++i) sigmas[i] = rng.uniform(0.05, 0.95);

        MlpNet<double>::Trace trace;
        MlpNet<double>::Grads grads;
        Eigen::MatrixXd u = net.forward_trace(z, sigmas, trace);
        const Eigen::MatrixXd dout = 2.0 * (u - target) / batch;
        net.backward(trace, dout, &grads);
        const std::vector<double> g = grad_flat(grads);

        // Directional derivative against a random unit direction.
        auto params = param_pointers(net);
        REQUIRE(params.size() == g.size());
        std::vector<double> dir(params.size());
        double nrm = 0.0;
        for (auto& d : dir) {
            d = rng.normal();
            nrm += d * d;
        }
        nrm = std::sqrt(nrm);
        for (auto& d : dir) d /= nrm;

        const double h = 1e-6;
        for (std::size_t i = 0; i < params.size(); ++i) *params[i] += h * dir[i];
        const double lp = mlp_loss(net, z, sigmas, target);
        for (std::size_t i = 0; i < params.size(); ++i) *params[i] -= 2.0 * h * dir[i];
        const double lm = mlp_loss(net, z, sigmas, target);
        for (std::size_t i = 0; i < params.size(); ++i) *params[i] += h * dir[i];

        const double fd = (lp - lm) / (2.0 * h);
        double analytic = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) analytic += g[i] * dir[i];
        CHECK(std::abs(fd - analytic) / std::max(1e-8, std::abs(fd)) < 1e-4);

        // Spot-check a few individual coordinates as well.
        for (int probe = 0; probe < 5; ++probe) {
            const std::size_t idx = static_cast<std::size_t>(rng.below(params.size()));
            const double h2 = 1e-5 * std::max(1.0, std::abs(*params[idx]));
            const double save = *params[idx];
            *params[idx] = save + h2;
            const double fp = mlp_loss(net, z, sigmas, target);
            *params[idx] = save - h2;
            const double fm = mlp_loss(net, z, sigmas, target);
            *params[idx] = save;
            const double fd2 = (fp - fm) / (2.0 * h2);
            if (std::abs(fd2) > 1e-7)
                CHECK(std::abs(fd2 - g[idx]) / std::abs(fd2) < 1e-4);
        }
    }
}

TEST_CASE("mlp input vjp matches central finite differences") {
    Rng rng(23);
    for (int point = 0; point < 20; ++point) {
        MlpNet<double> net = small_net(rng, 24, 8);
        MlpModel model(net);
        Eigen::MatrixXd z(2, 1), v(2, 1);
        z(0, 0) = rng.normal();
        z(1, 0) = rng.normal();
        v(0, 0) = rng.normal();
        v(1, 0) = rng.normal();
        const double sigma = rng.uniform(0.05, 1.0);
        const Eigen::MatrixXd g = model.input_vjp(z, sigma, v);

        for (int dim = 0; dim < 2; ++dim) {
            const double h = 1e-6 * std::max(1.0, std::abs(z(dim, 0)));
            Eigen::MatrixXd zp = z, zm = z;
            zp(dim, 0) += h;
            zm(dim, 0) -= h;
            const double fp = (v.transpose() * clean_prediction(model, zp, sigma))(0, 0);
            const double fm = (v.transpose() * clean_prediction(model, zm, sigma))(0, 0);
            const double fd = (fp - fm) / (2.0 * h);
            CHECK(std::abs(fd - g(dim, 0)) / std::max(1e-8, std::abs(fd)) < 1e-4);
        }
    }

    // Zero cotangent gives a zero gradient.
    MlpNet<double> net = small_net(rng);
    MlpModel model(net);
    Eigen::MatrixXd z = Eigen::MatrixXd::Random(2, 1);
    CHECK(model.input_vjp(z, 0.5, Eigen::MatrixXd::Zero(2, 1)).norm() == 0.0);
}

TEST_CASE("cosine schedule reaches its floor") {
    const double lr0 = 2e-3;
    const int total = 20000;
    CHECK(cosine_lr(lr0, 0, total) == doctest::Approx(lr0));
    CHECK(cosine_lr(lr0, total - 1, total) < 1e-6 * lr0);
    CHECK(cosine_lr(lr0, total / 2, total) == doctest::Approx(0.5 * lr0));
}

TEST_CASE("short training run decreases the loss deterministically") {
    TrainConfig cfg;
    cfg.iterations = 250;
    cfg.batch = 128;
    cfg.hidden = 64;
    cfg.embed_dim = 16;
    cfg.precision = TrainPrecision::kF32;
    const TrainOutcome a = train_mlp(cfg, 777);
    CHECK(a.curve.back().loss < a.curve.front().loss);

    const TrainOutcome b = train_mlp(cfg, 777);
    REQUIRE(a.net.weights.size() == b.net.weights.size());
    for (std::size_t i = 0; i < a.net.weights.size(); ++i) {
        CHECK(a.net.weights[i] == b.net.weights[i]);
        CHECK(a.net.biases[i] == b.net.biases[i]);
    }

    // Training in double is supported as well.
    TrainConfig cfg64 = cfg;
    cfg64.iterations = 60;
    cfg64.precision = TrainPrecision::kF64;
    const TrainOutcome c = train_mlp(cfg64, 3);
    CHECK(c.curve.back().loss < c.curve.front().loss);
}

TEST_CASE("weights round-trip through the binary format") {
    Rng rng(31);
    MlpNet<double> net = small_net(rng);
    const std::string path = "weights_roundtrip_test.bin";
    save_weights(path, net);
    const MlpNet<double> loaded = load_weights(path);
    REQUIRE(loaded.weights.size() == net.weights.size());
    for (std::size_t i = 0; i < net.weights.size(); ++i) {
        CHECK(loaded.weights[i] == net.weights[i]);
        CHECK(loaded.biases[i] == net.biases[i]);
    }
    CHECK(loaded.embed.dim == net.embed.dim);
    CHECK(loaded.state_shape == net.state_shape);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_weights("definitely_missing_weights.bin"), std::runtime_error);
}
