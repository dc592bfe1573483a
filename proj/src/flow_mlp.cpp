#include "hctl/flow_mlp.hpp"

#include "hctl/errors.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace hctl {

namespace {

template <typename Scalar>
struct AdamW {
    using Mat = typename MlpNet<Scalar>::Mat;
    using Vec = typename MlpNet<Scalar>::Vec;

    std::vector<Mat> mw, vw;
    std::vector<Vec> mb, vb;
    double beta1, beta2, eps;
    long step = 0;

    AdamW(const MlpNet<Scalar>& net, const TrainConfig& cfg)
        : beta1(cfg.adam_beta1), beta2(cfg.adam_beta2), eps(cfg.adam_eps) {
        for (const auto& w : net.weights) {
            mw.push_back(Mat::Zero(w.rows(), w.cols()));
            vw.push_back(Mat::Zero(w.rows(), w.cols()));
        }
        for (const auto& b : net.biases) {
            mb.push_back(Vec::Zero(b.size()));
            vb.push_back(Vec::Zero(b.size()));
        }
    }

    template <typename P, typename G, typename M>
    void update_tensor(P& p, const G& g, M& m, M& v, double lr, double wd) {
        const Scalar b1 = static_cast<Scalar>(beta1), b2 = static_cast<Scalar>(beta2);
        m = b1 * m + (Scalar(1) - b1) * g;
        v = (b2 * v.array() + (Scalar(1) - b2) * g.array().square()).matrix();
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        const Scalar a = static_cast<Scalar>(lr / c1);
        const Scalar sc2 = static_cast<Scalar>(std::sqrt(c2));
        // Decoupled weight decay.
        p.array() -= a * (m.array() / (v.array().sqrt() / sc2 + static_cast<Scalar>(eps))) +
                     static_cast<Scalar>(lr * wd) * p.array();
    }

    void update(MlpNet<Scalar>& net, const typename MlpNet<Scalar>::Grads& grads, double lr,
                double wd) {
        ++step;
        for (std::size_t i = 0; i < net.weights.size(); ++i) {
            update_tensor(net.weights[i], grads.weights[i], mw[i], vw[i], lr, wd);
            update_tensor(net.biases[i], grads.biases[i], mb[i], vb[i], lr, wd);
        }
    }
};

template <typename Scalar>
TrainOutcome train_impl(const TrainConfig& cfg, std::uint64_t master_seed) {
    using Mat = typename MlpNet<Scalar>::Mat;
    using Vec = typename MlpNet<Scalar>::Vec;

    Rng rng = Rng::stream(master_seed, StreamRole::kTraining);
    TimeEmbedding embed{cfg.embed_dim, cfg.freq_min, cfg.freq_max};
    const Shape4 state_shape{1, 1, 1, 2};
    MlpNet<Scalar> net = MlpNet<Scalar>::random_init(state_shape, cfg.hidden, embed, rng);
    AdamW<Scalar> opt(net, cfg);

    TrainOutcome out;
    out.curve.reserve(static_cast<std::size_t>(cfg.iterations / cfg.loss_log_every) + 1);

    const int b = cfg.batch;
    std::vector<int> strata(static_cast<std::size_t>(b));
    Mat z0(2, b), eps(2, b), z(2, b), target(2, b);
    Vec sigmas(b);
    typename MlpNet<Scalar>::Trace trace;
    typename MlpNet<Scalar>::Grads grads;


    for (int it = 0; it < cfg.iterations; ++it) {
        {
            // Variance-reduced batch with unchanged marginals: antithetic
            // noise pairs share (z0, sigma), and the sigma draws are
            // stratified across the pairs.
            const int pairs = b / 2;
            Eigen::Matrix2Xd z0d = Checkerboard::sample(pairs, rng);
            for (int k = 0; k < pairs; ++k) strata[k] = k;
            for (int k = pairs - 1; k > 0; --k)
                std::swap(strata[static_cast<std::size_t>(k)],
                          strata[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(k) + 1))]);
            for (int p = 0; p < pairs; ++p) {
                const double ex = rng.normal(), ey = rng.normal();
                const double u = (strata[static_cast<std::size_t>(p)] + rng.uniform01()) / pairs;
                double sig = std::pow(u, cfg.sigma_power);
                if (cfg.sigma_grid_mix > 0.0 && rng.uniform01() < cfg.sigma_grid_mix) {
                    const int k = static_cast<int>(rng.below(
                        static_cast<std::uint64_t>(cfg.sigma_grid_steps)));
                    sig = static_cast<double>(cfg.sigma_grid_steps - k) / cfg.sigma_grid_steps;
                }
                const Scalar sg = static_cast<Scalar>(sig);
                for (int half = 0; half < 2; ++half) {
                    const int k = 2 * p + half;
                    z0(0, k) = static_cast<Scalar>(z0d(0, p));
                    z0(1, k) = static_cast<Scalar>(z0d(1, p));
                    eps(0, k) = static_cast<Scalar>(half == 0 ? ex : -ex);
                    eps(1, k) = static_cast<Scalar>(half == 0 ? ey : -ey);
                    sigmas[k] = sg;
                }
            }
            if (b % 2) {  // odd tail sample, fully fresh
                z0(0, b - 1) = static_cast<Scalar>(Checkerboard::sample(1, rng)(0, 0));
                z0(1, b - 1) = static_cast<Scalar>(Checkerboard::sample(1, rng)(1, 0));
                eps(0, b - 1) = static_cast<Scalar>(rng.normal());
                eps(1, b - 1) = static_cast<Scalar>(rng.normal());
                sigmas[b - 1] = static_cast<Scalar>(std::pow(rng.uniform01(), cfg.sigma_power));
            }
        }
        for (int k = 0; k < b; ++k) {
            const Scalar s = sigmas[k];
            z.col(k) = (Scalar(1) - s) * z0.col(k) + s * eps.col(k);
        }
        target = eps - z0;

        Mat u = net.forward_trace(z, sigmas, trace);
        Mat resid = u - target;
        const double loss = static_cast<double>(resid.squaredNorm()) / b;
        const double lr = cosine_lr(cfg.lr, it, cfg.iterations);
        if (!std::isfinite(loss)) throw TrainingDiverged(it);
        if (it % cfg.loss_log_every == 0) out.curve.push_back({it, loss, lr});

        Mat dout = resid * static_cast<Scalar>(2.0 / b);
        net.backward(trace, dout, &grads);
        opt.update(net, grads, lr, cfg.weight_decay);
    }

    if constexpr (std::is_same_v<Scalar, double>) {
        out.net = net;
    } else {
        out.net = net.template cast<double>();
    }
    return out;
}

constexpr char kMagic[4] = {'H', 'C', 'T', 'L'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

}  // namespace

TrainOutcome train_mlp(const TrainConfig& cfg, std::uint64_t master_seed) {
    if (cfg.iterations < 1 || cfg.batch < 1 || cfg.lr <= 0 || cfg.hidden < 1)
        throw std::invalid_argument("train_mlp: config fields must be positive");
    if (cfg.precision == TrainPrecision::kF64) return train_impl<double>(cfg, master_seed);
    return train_impl<float>(cfg, master_seed);
}

void save_weights(const std::string& path, const MlpNet<double>& net) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("save_weights: cannot open " + path);
    os.write(kMagic, 4);
    put<std::uint32_t>(os, kVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(net.weights.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(net.state_shape.c));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(net.state_shape.l));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(net.state_shape.h));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(net.state_shape.w));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(net.embed.dim));
    put<double>(os, net.embed.freq_min);
    put<double>(os, net.embed.freq_max);
    for (std::size_t i = 0; i < net.weights.size(); ++i) {
        const auto& w = net.weights[i];
        put<std::uint32_t>(os, static_cast<std::uint32_t>(w.rows()));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(w.cols()));
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) put<double>(os, w(r, c));
        const auto& b = net.biases[i];
        for (Eigen::Index r = 0; r < b.size(); ++r) put<double>(os, b[r]);
    }
    if (!os) throw IoError("save_weights: write failed for " + path);
}

MlpNet<double> load_weights(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_weights: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("load_weights: bad magic in " + path);
    if (get<std::uint32_t>(is) != kVersion) throw IoError("load_weights: bad version");
    const auto layers = get<std::uint32_t>(is);
    MlpNet<double> net;
    net.state_shape.c = static_cast<int>(get<std::uint32_t>(is));
    net.state_shape.l = static_cast<int>(get<std::uint32_t>(is));
    net.state_shape.h = static_cast<int>(get<std::uint32_t>(is));
    net.state_shape.w = static_cast<int>(get<std::uint32_t>(is));
    net.embed.dim = static_cast<int>(get<std::uint32_t>(is));
    net.embed.freq_min = get<double>(is);
    net.embed.freq_max = get<double>(is);
    net.weights.resize(layers);
    net.biases.resize(layers);
    for (std::uint32_t i = 0; i < layers; ++i) {
        const auto rows = get<std::uint32_t>(is);
        const auto cols = get<std::uint32_t>(is);
        Eigen::MatrixXd w(rows, cols);
        for (std::uint32_t r = 0; r < rows; ++r)
            for (std::uint32_t c = 0; c < cols; ++c) w(r, c) = get<double>(is);
        Eigen::VectorXd b(rows);
        for (std::uint32_t r = 0; r < rows; ++r) b[r] = get<double>(is);
        net.weights[i] = std::move(w);
        net.biases[i] = std::move(b);
    }
    if (!is) throw IoError("load_weights: truncated file " + path);
    return net;
}

}  // namespace hctl
