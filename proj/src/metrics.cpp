#include "hctl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace hctl {

double manifold_hit(const Eigen::Matrix2Xd& points) {
    if (points.cols() == 0) throw std::invalid_argument("manifold_hit: empty sample set");
    long long hits = 0;
    for (Eigen::Index k = 0; k < points.cols(); ++k)
        if (Checkerboard::on_support(points(0, k), points(1, k))) ++hits;
    return static_cast<double>(hits) / points.cols();
}

HitReport posterior_hit(const Eigen::Matrix2Xd& points, const ObsModel& obs) {
    if (points.cols() == 0) throw std::invalid_argument("posterior_hit: empty sample set");
    auto modes = Checkerboard::conditional_modes(obs);
    std::sort(modes.begin(), modes.end(),
              [](const LatticeSquare& a, const LatticeSquare& b) { return a.j < b.j; });

    HitReport report;
    report.n = points.cols();
    for (Eigen::Index k = 0; k < points.cols(); ++k) {
        const double x = points(0, k), y = points(1, k);
        if (Checkerboard::on_support(x, y)) ++report.manifold_hits;
        if (!(std::abs(x - obs.y_obs) < 0.5)) continue;
        for (std::size_t m = 0; m < modes.size() && m < 2; ++m) {
            if (modes[m].contains(x, y)) {
                ++report.posterior_hits;
                ++report.mode_counts[m];
                break;
            }
        }
    }
    return report;
}

namespace {

double mean_pair_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    // All-pairs mean of ||a_i - b_j||.
    double sum = 0.0;
    for (Eigen::Index i = 0; i < a.cols(); ++i)
        for (Eigen::Index j = 0; j < b.cols(); ++j) sum += (a.col(i) - b.col(j)).norm();
    return sum / (static_cast<double>(a.cols()) * static_cast<double>(b.cols()));
}

}  // namespace

double energy_distance(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    if (x.cols() < 2 || y.cols() < 2)
        throw std::invalid_argument("energy_distance: need at least two samples per set");
    if (x.rows() != y.rows()) throw std::invalid_argument("energy_distance: dimension mismatch");
    return 2.0 * mean_pair_distance(x, y) - mean_pair_distance(x, x) - mean_pair_distance(y, y);
}

Eigen::Matrix2Xd checkerboard_posterior_oracle(const ObsModel& obs, int n, Rng& rng) {
    if (n < 1) throw std::invalid_argument("posterior oracle: n must be >= 1");
    const auto modes = Checkerboard::conditional_modes(obs);
    if (modes.empty()) throw std::invalid_argument("posterior oracle: no conditional modes");

    const int proposals = 8 * n;
    Eigen::Matrix2Xd prop(2, proposals);
    std::vector<double> weights(static_cast<std::size_t>(proposals));
    double total = 0.0;
    for (int k = 0; k < proposals; ++k) {
        const auto& sq = modes[static_cast<std::size_t>(rng.below(modes.size()))];
        const double x = sq.i + rng.uniform01();
        const double y = sq.j + rng.uniform01();
        prop(0, k) = x;
        prop(1, k) = y;
        const double d = (x - obs.y_obs) / obs.sigma_y;
        weights[static_cast<std::size_t>(k)] = std::exp(-0.5 * d * d);
        total += weights[static_cast<std::size_t>(k)];
    }

    // Systematic resampling on the self-normalized weights.
    Eigen::Matrix2Xd out(2, n);
    const double step = total / n;
    double cursor = rng.uniform01() * step;
    double cumulative = 0.0;
    int src = -1;
    for (int k = 0; k < n; ++k) {
        while (cumulative < cursor && src + 1 < proposals) {
            ++src;
            cumulative += weights[static_cast<std::size_t>(src)];
        }
        out.col(k) = prop.col(std::max(src, 0));
        cursor += step;
    }
    return out;
}

double polyak_variance_ratio(const VelocityModel& model, const Observation& obs, double sigma,
                             int inner_iters, int repeats, InnerRecon recon,
                             std::uint64_t master_seed) {
    if (repeats < 2) throw std::invalid_argument("polyak_variance_ratio: repeats must be >= 2");
    if (inner_iters < 1) throw std::invalid_argument("polyak_variance_ratio: J must be >= 1");
    const Shape4 shape = model.shape();
    obs.validate(shape);

    // One shared pin and one shared start: the across-chain spread then
    // measures only the Monte Carlo variance of the readouts.
    Rng pin_rng = Rng::stream(master_seed, StreamRole::kPinNoise);
    const int size = shape.size();
    Eigen::VectorXd zbar(size);
    for (int i = 0; i < size; ++i)
        zbar[i] = (1.0 - sigma) * obs.values.data[i] + sigma * pin_rng.normal();

    const int sites = shape.sites();
    const int channels = shape.c;
    std::vector<int> free_rows;
    for (int c = 0; c < channels; ++c)
        for (int s = 0; s < sites; ++s)
            if (!obs.mask[s]) free_rows.push_back(c * sites + s);
    if (free_rows.empty()) throw std::invalid_argument("polyak_variance_ratio: empty complement");

    // Start the chains at the pinned observation composed with zeros.
    Eigen::VectorXd start = Eigen::VectorXd::Zero(size);
    for (int c = 0; c < channels; ++c)
        for (int s = 0; s < sites; ++s)
            if (obs.mask[s]) start[c * sites + s] = obs.values.data[c * sites + s];

    Eigen::MatrixXd polyak(static_cast<int>(free_rows.size()), repeats);
    Eigen::MatrixXd last(static_cast<int>(free_rows.size()), repeats);

    for (int r = 0; r < repeats; ++r) {
        Rng inner = Rng::stream(master_seed, StreamRole::kInnerNoise, static_cast<std::uint64_t>(r));
        Eigen::VectorXd x = start;
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(size);
        for (int j = 1; j <= inner_iters; ++j) {
            Eigen::VectorXd xi(size);
            for (int i = 0; i < size; ++i) xi[i] = inner.normal();
            Eigen::VectorXd z = (1.0 - sigma) * x + sigma * xi;
            for (int c = 0; c < channels; ++c)
                for (int s = 0; s < sites; ++s)
                    if (obs.mask[s]) z[c * sites + s] = zbar[c * sites + s];
            Eigen::VectorXd xnew;
            if (recon == InnerRecon::kMean) {
                xnew = z - sigma * model.velocity(z, sigma);
            } else {
                Eigen::VectorXd eps(size);
                for (int i = 0; i < size; ++i) eps[i] = inner.normal();
                xnew = model.posterior_sample(z, sigma, eps);
            }
            x = xnew;
            mean += (x - mean) / j;
        }
        for (std::size_t i = 0; i < free_rows.size(); ++i) {
            polyak(static_cast<int>(i), r) = mean[free_rows[i]];
            last(static_cast<int>(i), r) = x[free_rows[i]];
        }
    }

    double ratio_sum = 0.0;
    for (std::size_t i = 0; i < free_rows.size(); ++i) {
        const auto row_p = polyak.row(static_cast<int>(i));
        const auto row_l = last.row(static_cast<int>(i));
        const double vp = (row_p.array() - row_p.mean()).square().sum() / (repeats - 1);
        const double vl = (row_l.array() - row_l.mean()).square().sum() / (repeats - 1);
        ratio_sum += vl > 0.0 ? vp / vl : 1.0;
    }
    return ratio_sum / static_cast<double>(free_rows.size());
}

namespace {

// n distinct column indices by partial Fisher-Yates.
std::vector<int> sample_indices(int population, int n, Rng& rng) {
    std::vector<int> idx(static_cast<std::size_t>(population));
    for (int i = 0; i < population; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < n; ++i)
        std::swap(idx[static_cast<std::size_t>(i)],
                  idx[static_cast<std::size_t>(i) +
                      static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(population - i)))]);
    idx.resize(static_cast<std::size_t>(n));
    return idx;
}

Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& src, const std::vector<int>& idx) {
    Eigen::MatrixXd out(src.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k)
        out.col(static_cast<Eigen::Index>(k)) = src.col(idx[k]);
    return out;
}

}  // namespace

PermutationTest energy_permutation_test(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                        int permutations, int subsample, Rng& rng) {
    if (permutations < 1) throw std::invalid_argument("energy_permutation_test: permutations >= 1");
    const int n = std::min({subsample, static_cast<int>(x.cols()), static_cast<int>(y.cols()) / 2});
    if (n < 2) throw std::invalid_argument("energy_permutation_test: too few samples");

    PermutationTest test;
    test.permutations = permutations;
    test.subsample = n;
    test.statistic = energy_distance(gather_columns(x, sample_indices(static_cast<int>(x.cols()), n, rng)),
                                     gather_columns(y, sample_indices(static_cast<int>(y.cols()), n, rng)));

    // Null: disjoint halves resampled from the reference set alone.
    std::vector<double> null_values(static_cast<std::size_t>(permutations));
    for (int p = 0; p < permutations; ++p) {
        auto idx = sample_indices(static_cast<int>(y.cols()), 2 * n, rng);
        const std::vector<int> a(idx.begin(), idx.begin() + n);
        const std::vector<int> b(idx.begin() + n, idx.end());
        null_values[static_cast<std::size_t>(p)] =
            energy_distance(gather_columns(y, a), gather_columns(y, b));
    }
    std::sort(null_values.begin(), null_values.end());
    const auto pos = static_cast<std::size_t>(std::ceil(0.95 * permutations));
    test.null_p95 = null_values[std::min(pos > 0 ? pos - 1 : 0, null_values.size() - 1)];
    return test;
}

}  // namespace hctl
