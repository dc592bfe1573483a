#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "hctl/checkerboard.hpp"
#include "hctl/rng.hpp"
#include "hctl/velocity_model.hpp"

namespace hctl {

// Sinusoidal time embedding with geometrically spaced frequencies.
struct TimeEmbedding {
    int dim = 64;  // even: dim/2 (sin, cos) pairs
    double freq_min = 1.0;
    double freq_max = 1000.0;

    Eigen::VectorXd frequencies() const {
        if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("TimeEmbedding: dim must be even >= 2");
        const int n = dim / 2;
        Eigen::VectorXd f(n);
        for (int i = 0; i < n; ++i) {
            const double t = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
            f[i] = freq_min * std::pow(freq_max / freq_min, t);
        }
        return f;
    }
};

// 6 affine layers with SiLU activations between them; input is the state
// concatenated with the time embedding, output has the state dimension.
template <typename Scalar>
struct MlpNet {
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    static constexpr int kLayers = 6;

    Shape4 state_shape;
    TimeEmbedding embed;
    std::vector<Mat> weights;  // kLayers matrices, (out x in)
    std::vector<Vec> biases;

    int state_dim() const { return state_shape.size(); }
    int input_dim() const { return state_dim() + embed.dim; }

    static MlpNet random_init(const Shape4& state_shape, int hidden, const TimeEmbedding& embed,
                              Rng& rng) {
        MlpNet net;
        net.state_shape = state_shape;
        net.embed = embed;
        const int din = net.input_dim();
        const int dout = net.state_dim();
        std::vector<int> dims{din, hidden, hidden, hidden, hidden, hidden, dout};
        net.weights.resize(kLayers);
        net.biases.resize(kLayers);
        for (int i = 0; i < kLayers; ++i) {
            const int rows = dims[static_cast<std::size_t>(i) + 1];
            const int cols = dims[static_cast<std::size_t>(i)];
            // He fan-in scaling; the output layer starts small so the field
            // begins near zero and training stays stable at the full lr.
            const double scale = (i + 1 == kLayers ? 0.01 : 1.0) * std::sqrt(2.0 / cols);
            net.weights[static_cast<std::size_t>(i)].resize(rows, cols);
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c)
                    net.weights[static_cast<std::size_t>(i)](r, c) =
                        static_cast<Scalar>(scale * rng.normal());
            net.biases[static_cast<std::size_t>(i)] = Vec::Zero(rows);
        }
        return net;
    }

    // Input assembly: [state; sin/cos embedding], one sigma per column.
    Mat assemble_input(const Mat& states, const Vec& sigmas) const {
        const int d = state_dim();
        const int b = static_cast<int>(states.cols());
        if (states.rows() != d) throw std::invalid_argument("MlpNet: bad state dimension");
        Mat x0(input_dim(), b);
        x0.topRows(d) = states;
        const Eigen::VectorXd f = embed.frequencies();
        const int n = embed.dim / 2;
        Mat phases = (f.cast<Scalar>() * sigmas.transpose());
        Mat s = phases.array().sin();
        Mat c = phases.array().cos();
        for (int i = 0; i < n; ++i) {
            x0.row(d + 2 * i) = s.row(i);
            x0.row(d + 2 * i + 1) = c.row(i);
        }
        return x0;
    }

    struct Trace {
        std::vector<Mat> inputs;  // input to each layer (kLayers entries)
        std::vector<Mat> pre;     // preactivations of the SiLU layers (kLayers-1)
        std::vector<Mat> sig;     // logistic of the preactivations (kLayers-1)
    };

    Mat forward(const Mat& states, double sigma) const {
        Vec sigmas = Vec::Constant(states.cols(), static_cast<Scalar>(sigma));
        return forward_multi(states, sigmas, nullptr);
    }

    Mat forward_trace(const Mat& states, const Vec& sigmas, Trace& trace) const {
        return forward_multi(states, sigmas, &trace);
    }

    Mat forward_multi(const Mat& states, const Vec& sigmas, Trace* trace) const {
        Mat x = assemble_input(states, sigmas);
        if (trace) {
            trace->inputs.assign(kLayers, Mat());
            trace->pre.assign(kLayers - 1, Mat());
            trace->sig.assign(kLayers - 1, Mat());
        }
        for (int i = 0; i < kLayers; ++i) {
            if (trace) trace->inputs[static_cast<std::size_t>(i)] = x;
            Mat a = (weights[static_cast<std::size_t>(i)] * x).colwise() +
                    biases[static_cast<std::size_t>(i)];
            if (i + 1 < kLayers) {
                Mat s = (Scalar(1) / (Scalar(1) + (-a.array()).exp())).matrix();
                x = a.cwiseProduct(s);
                if (trace) {
                    trace->pre[static_cast<std::size_t>(i)] = std::move(a);
                    trace->sig[static_cast<std::size_t>(i)] = std::move(s);
                }
            } else {
                x = std::move(a);
            }
        }
        return x;
    }

    struct Grads {
        std::vector<Mat> weights;
        std::vector<Vec> biases;
    };

    // Reverse pass. dout is dL/d(output); returns dL/d(state input) and, when
    // grads is non-null, accumulates parameter gradients.
    Mat backward(const Trace& trace, const Mat& dout, Grads* grads) const {
        if (grads) {
            grads->weights.assign(kLayers, Mat());
            grads->biases.assign(kLayers, Vec());
        }
        Mat dx = dout;
        for (int i = kLayers - 1; i >= 0; --i) {
            Mat da;
            if (i == kLayers - 1) {
                da = std::move(dx);
            } else {
                // d silu(a)/da = s + a*s*(1-s), with s = logistic(a)
                const Mat& a = trace.pre[static_cast<std::size_t>(i)];
                const Mat& s = trace.sig[static_cast<std::size_t>(i)];
                Mat deriv = (s.array() + a.array() * s.array() * (1 - s.array())).matrix();
                da = dx.cwiseProduct(deriv);
            }
            if (grads) {
                grads->weights[static_cast<std::size_t>(i)] =
                    da * trace.inputs[static_cast<std::size_t>(i)].transpose();
                grads->biases[static_cast<std::size_t>(i)] = da.rowwise().sum();
            }
            dx = weights[static_cast<std::size_t>(i)].transpose() * da;
        }
        return dx.topRows(state_dim());
    }

    template <typename Other>
    MlpNet<Other> cast() const {
        MlpNet<Other> out;
        out.state_shape = state_shape;
        out.embed = embed;
        out.weights.reserve(weights.size());
        out.biases.reserve(biases.size());
        for (const auto& w : weights) out.weights.push_back(w.template cast<Other>());
        for (const auto& b : biases) out.biases.push_back(b.template cast<Other>());
        return out;
    }
};

// Velocity-model adapter around trained weights (pure, double precision).
class MlpModel : public VelocityModel {
  public:
    explicit MlpModel(MlpNet<double> net) : net_(std::move(net)) {}

    Shape4 shape() const override { return net_.state_shape; }
    bool has_input_gradient() const override { return true; }

    Eigen::MatrixXd velocity(const Eigen::MatrixXd& z, double sigma) const override {
        check_input(z, sigma);
        return net_.forward(z, sigma);
    }

    Eigen::MatrixXd input_vjp(const Eigen::MatrixXd& z, double sigma,
                              const Eigen::MatrixXd& cotangent) const override {
        check_input(z, sigma);
        if (!(sigma > 0.0)) throw std::invalid_argument("input_vjp: sigma must be in (0,1]");
        MlpNet<double>::Trace trace;
        Eigen::VectorXd sigmas = Eigen::VectorXd::Constant(z.cols(), sigma);
        net_.forward_trace(z, sigmas, trace);
        // zhat0 = z - sigma*u  =>  v^T dzhat0/dz = v - sigma * (v^T du/dz)
        Eigen::MatrixXd du = net_.backward(trace, cotangent, nullptr);
        return cotangent - sigma * du;
    }

    const MlpNet<double>& net() const { return net_; }

  private:
    MlpNet<double> net_;
};

enum class TrainPrecision { kF32, kF64 };

struct TrainConfig {
    int iterations = 20000;
    int batch = 512;
    double lr = 2e-3;
    double weight_decay = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int hidden = 256;
    int embed_dim = 64;
    double freq_min = 1.0;
    double freq_max = 1000.0;
    TrainPrecision precision = TrainPrecision::kF32;
    // sigma ~ U(0,1)^sigma_power per sample; powers > 1 emphasize low noise
    double sigma_power = 1.0;
    // fraction of samples whose sigma is drawn uniformly from the discrete
    // sampling grid {1-k/steps} instead of the continuous law
    double sigma_grid_mix = 0.0;
    int sigma_grid_steps = 50;
    int loss_log_every = 1;
};

struct LossPoint {
    int iteration;
    double loss;
    double lr;
};

struct TrainOutcome {
    MlpNet<double> net;
    std::vector<LossPoint> curve;
};

class TrainingDiverged : public std::runtime_error {
  public:
    TrainingDiverged(int iteration)
        : std::runtime_error("training loss became non-finite at iteration " +
                             std::to_string(iteration)),
          iteration(iteration) {}
    int iteration;
};

// cosine decay to zero over `total` iterations
inline double cosine_lr(double base_lr, int iteration, int total) {
    return base_lr * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(iteration) / total));
}

// Conditional flow-matching regression of u(z_sigma, sigma) onto eps - z0 on
// the checkerboard density, sigma ~ U(0,1) per sample.
TrainOutcome train_mlp(const TrainConfig& cfg, std::uint64_t master_seed);

void save_weights(const std::string& path, const MlpNet<double>& net);
MlpNet<double> load_weights(const std::string& path);

}  // namespace hctl
