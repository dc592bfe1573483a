#include "hctl/harness.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <thread>

#include "hctl/flow_gaussian.hpp"
#include "hctl/flow_mlp.hpp"
#include "hctl/gmrf.hpp"
#include "hctl/locality.hpp"
#include "hctl/metrics.hpp"
#include "hctl/svg.hpp"

namespace hctl {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

class CsvFile {
  public:
    CsvFile(const fs::path& path, const std::string& header) : os_(path, std::ios::trunc) {
        if (!os_) throw IoError("cannot open " + path.string());
        os_ << header << "\n";
        path_ = path.string();
    }
    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) os_ << ",";
            os_ << cells[i];
        }
        os_ << "\n";
    }
    void close() {
        os_.flush();
        if (!os_) throw IoError("write failed for " + path_);
        os_.close();
    }

  private:
    std::ofstream os_;
    std::string path_;
};

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

Eigen::Matrix2Xd as_points(const Eigen::MatrixXd& samples) {
    if (samples.rows() != 2) throw std::logic_error("as_points: expected 2D states");
    return samples;
}

struct SeedStats {
    std::vector<double> per_seed;
    double mean = 0.0;
    double stddev = 0.0;
};

SeedStats seed_stats(const std::vector<double>& values) {
    SeedStats s;
    s.per_seed = values;
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(values.size());
    double acc = 0.0;
    for (double v : values) acc += (v - s.mean) * (v - s.mean);
    s.stddev = values.size() > 1 ? std::sqrt(acc / (static_cast<double>(values.size()) - 1)) : 0.0;
    return s;
}

// Per-seed hit reports from a pooled (2 x seeds*samples) cloud.
std::vector<HitReport> per_seed_hits(const Eigen::Matrix2Xd& points, const ObsModel& obs,
                                     int seeds, int samples_per_seed) {
    std::vector<HitReport> out;
    out.reserve(static_cast<std::size_t>(seeds));
    for (int s = 0; s < seeds; ++s) {
        Eigen::Matrix2Xd block = points.middleCols(static_cast<Eigen::Index>(s) * samples_per_seed,
                                                   samples_per_seed);
        out.push_back(posterior_hit(block, obs));
    }
    return out;
}

Json hits_to_json(const std::vector<HitReport>& reports) {
    Json per_seed = Json::array();
    long long hits = 0, manifold = 0, n = 0;
    for (const auto& r : reports) {
        per_seed.push_back(Json{{"posterior_hit", r.posterior_rate()},
                                {"manifold_hit", r.manifold_rate()},
                                {"mode_balance", r.mode_balance()},
                                {"mode_counts", r.mode_counts}});
        hits += r.posterior_hits;
        manifold += r.manifold_hits;
        n += r.n;
    }
    std::vector<double> rates;
    for (const auto& r : reports) rates.push_back(r.posterior_rate());
    SeedStats stats = seed_stats(rates);
    const double pooled = n > 0 ? static_cast<double>(hits) / n : 0.0;
    const double pooled_se = n > 0 ? std::sqrt(std::max(pooled * (1.0 - pooled), 1e-12) / n) : 0.0;
    return Json{{"per_seed", per_seed},
                {"posterior_hit_mean", stats.mean},
                {"posterior_hit_std", stats.stddev},
                {"posterior_hit_pooled", pooled},
                {"posterior_hit_pooled_se", pooled_se},
                {"manifold_hit_pooled", n > 0 ? static_cast<double>(manifold) / n : 0.0}};
}

void write_samples_csv(const fs::path& path, const Eigen::Matrix2Xd& points, int samples_per_seed) {
    CsvFile csv(path, csv_headers::kSamples);
    for (Eigen::Index k = 0; k < points.cols(); ++k) {
        const int seed = static_cast<int>(k / samples_per_seed);
        csv.row({std::to_string(seed), num(points(0, k)), num(points(1, k))});
    }
    csv.close();
}

void write_toy_scatter(const fs::path& path, const Eigen::Matrix2Xd& points, const ObsModel& obs,
                       const std::string& title) {
    ScatterSpec spec;
    spec.title = title;
    spec.vline = obs.y_obs;
    for (const auto& sq : Checkerboard::squares())
        spec.outlined_squares.emplace_back(sq.i, sq.j);
    // Cap the cloud for readability.
    const Eigen::Index cap = std::min<Eigen::Index>(points.cols(), 2500);
    write_scatter_svg(path.string(), points.leftCols(cap), spec);
}

void write_diagnostics_csv(const fs::path& path, const std::vector<StepDiagnosticsRow>& rows) {
    CsvFile csv(path, csv_headers::kDiagnostics);
    for (const auto& r : rows)
        csv.row({std::to_string(r.step), num(r.sigma), num(r.inner_iters), num(r.stable_fraction),
                 num(r.mean_abs_dw), std::to_string(r.nfe_forward), std::to_string(r.nfe_backward)});
    csv.close();
}

void write_band_trace_csv(const fs::path& path, const BandTrace& trace) {
    CsvFile csv(path, csv_headers::kBandTrace);
    for (int band = 0; band < trace.bands(); ++band)
        for (int j = 1; j <= trace.max_iter(); ++j) {
            const double v = trace.mean(band, j);
            if (std::isfinite(v)) csv.row({std::to_string(band), std::to_string(j), num(v)});
        }
    csv.close();
}

std::unique_ptr<VelocityModel> load_model(const ExperimentConfig& cfg) {
    if (cfg.model.backend == "gaussian") {
        GmrfSpec spec = gmrf_build(cfg.gmrf.shape[0], cfg.gmrf.shape[1], cfg.gmrf.shape[2],
                                   cfg.gmrf.beta1, cfg.gmrf.beta2, cfg.gmrf.tau_diag);
        return std::make_unique<GaussianModel>(std::move(spec));
    }
    fs::path path = cfg.model.weights;
    if (!fs::exists(path)) {
        fs::path fallback = fs::path(cfg.out_dir) / cfg.model.weights;
        if (fs::exists(fallback)) path = fallback;
    }
    return std::make_unique<MlpModel>(load_weights(path.string()));
}

}  // namespace

Observation toy_observation(const ObservationConfig& obs_cfg) {
    Observation obs;
    obs.mask = SiteMask(1, 1, 2);
    obs.mask.set(0, true);
    obs.values = StateTensor::zeros(Shape4{1, 1, 1, 2});
    obs.values.data[0] = obs_cfg.y_obs;
    obs.tau = obs_cfg.sigma_y;
    return obs;
}

SiteMask mask_from_pattern(const std::string& pattern, const Shape4& shape) {
    SiteMask mask(shape.l, shape.h, shape.w);
    if (pattern == "empty") return mask;
    if (pattern == "full") return mask.complement();
    if (pattern == "w_half") {
        for (int l = 0; l < shape.l; ++l)
            for (int h = 0; h < shape.h; ++h)
                for (int w = 0; w < shape.w / 2; ++w)
                    mask.set(site_index(shape, l, h, w), true);
        return mask;
    }
    throw ConfigError("unknown mask pattern: " + pattern);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

Json cmd_train(const ExperimentConfig& cfg) {
    ensure_dir(cfg.out_dir);
    TrainConfig tc;
    tc.iterations = cfg.train.iterations;
    tc.batch = cfg.train.batch;
    tc.lr = cfg.train.lr;
    tc.weight_decay = cfg.train.weight_decay;
    tc.hidden = cfg.train.hidden;
    tc.embed_dim = cfg.train.embed_dim;
    tc.freq_min = cfg.train.freq_min;
    tc.freq_max = cfg.train.freq_max;
    tc.precision = cfg.train.precision == "f64" ? TrainPrecision::kF64 : TrainPrecision::kF32;

    TrainOutcome outcome = train_mlp(tc, cfg.master_seed);

    const fs::path weights_path = fs::path(cfg.out_dir) / "weights.bin";
    save_weights(weights_path.string(), outcome.net);
    {
        CsvFile csv(fs::path(cfg.out_dir) / "loss.csv", csv_headers::kLoss);
        for (const auto& p : outcome.curve)
            csv.row({std::to_string(p.iteration), num(p.loss), num(p.lr)});
        csv.close();
    }

    MlpModel model(outcome.net);
    NoiseSchedule schedule = cfg.make_schedule();
    GuidanceSpec none;
    none.variant = Variant::kNone;
    RunOptions options;
    options.master_seed = cfg.master_seed;
    options.n_chains = cfg.train.eval_samples;
    Observation obs = toy_observation(cfg.observation);
    RunResult run = run_sampler(model, schedule, obs, none, options);
    const double hit = manifold_hit(as_points(run.samples));

    std::cout << "manifold_hit=" << std::setprecision(6) << hit << " over "
              << cfg.train.eval_samples << " unconditional samples\n";

    return Json{{"initial_loss", outcome.curve.front().loss},
                {"final_loss", outcome.curve.back().loss},
                {"final_lr", outcome.curve.back().lr},
                {"manifold_hit", hit},
                {"eval_samples", cfg.train.eval_samples},
                {"nfe_per_sample", run.nfe.front().nfe()},
                {"weights", weights_path.string()}};
}

// ---------------------------------------------------------------------------
// toy-fig
// ---------------------------------------------------------------------------

namespace {

struct ToyMethodResult {
    std::string name;
    Eigen::Matrix2Xd points;
    long long nfe_per_sample = 0;
    std::vector<StepDiagnosticsRow> diagnostics;
    BandTrace band_trace;
};

ToyMethodResult run_toy_method(const VelocityModel& model, const ExperimentConfig& cfg,
                               const std::string& name, const GuidanceSpec& spec) {
    const int n = cfg.seeds * cfg.samples_per_seed;
    RunOptions options;
    options.master_seed = cfg.master_seed;
    options.n_chains = n;
    options.band_edges = cfg.noise_bands;
    Observation obs = toy_observation(cfg.observation);
    RunResult run = run_sampler(model, cfg.make_schedule(), obs, spec, options);
    ToyMethodResult out;
    out.name = name;
    out.points = as_points(run.samples);
    out.nfe_per_sample = run.nfe.front().nfe();
    out.diagnostics = std::move(run.diagnostics);
    out.band_trace = std::move(run.band_trace);
    return out;
}

}  // namespace

Json cmd_toy_fig(const ExperimentConfig& cfg) {
    ensure_dir(cfg.out_dir);
    auto model = load_model(cfg);
    const int n_total = cfg.seeds * cfg.samples_per_seed;
    const ObsModel obs_model{cfg.observation.y_obs, cfg.observation.sigma_y, 0};
    const int steps = cfg.schedule.steps;

    std::vector<ToyMethodResult> methods;

    // Ground-truth conditional oracle.
    {
        Rng oracle_rng = Rng::stream(cfg.master_seed, StreamRole::kOracle);
        ToyMethodResult oracle;
        oracle.name = "oracle";
        oracle.points = checkerboard_posterior_oracle(obs_model, n_total, oracle_rng);
        oracle.nfe_per_sample = 0;
        methods.push_back(std::move(oracle));
    }
    methods.push_back(run_toy_method(*model, cfg, "dps", cfg.toy_dps.to_spec(steps)));
    methods.push_back(run_toy_method(*model, cfg, "tfg_ugd", cfg.toy_tfg.to_spec(steps)));
    methods.push_back(run_toy_method(*model, cfg, "h_control", cfg.toy_hcontrol.to_spec(steps)));

    Json results;
    Json method_json = Json::object();
    for (const auto& m : methods) {
        write_samples_csv(fs::path(cfg.out_dir) / (m.name + "_samples.csv"), m.points,
                          cfg.samples_per_seed);
        write_toy_scatter(fs::path(cfg.out_dir) / (m.name + "_scatter.svg"), m.points, obs_model,
                          m.name);
        auto reports = per_seed_hits(m.points, obs_model, cfg.seeds, cfg.samples_per_seed);
        Json j = hits_to_json(reports);
        j["nfe_per_sample"] = m.nfe_per_sample;
        method_json[m.name] = j;
        if (m.name == "h_control") {
            write_diagnostics_csv(fs::path(cfg.out_dir) / "h_control_diagnostics.csv",
                                  m.diagnostics);
            write_band_trace_csv(fs::path(cfg.out_dir) / "h_control_band_trace.csv", m.band_trace);
        }
    }
    results["methods"] = method_json;

    // Pairwise margins in pooled standard errors (h-control vs the baselines).
    const auto& h = method_json["h_control"];
    Json margins = Json::object();
    for (const std::string other : {"dps", "tfg_ugd"}) {
        const double diff = h["posterior_hit_pooled"].get<double>() -
                            method_json[other]["posterior_hit_pooled"].get<double>();
        const double se = std::sqrt(std::pow(h["posterior_hit_pooled_se"].get<double>(), 2) +
                                    std::pow(method_json[other]["posterior_hit_pooled_se"].get<double>(), 2));
        margins[other] = Json{{"difference", diff},
                              {"pooled_se", se},
                              {"margin_in_se", se > 0 ? diff / se : 0.0}};
    }
    results["hcontrol_margins"] = margins;
    return results;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

Json cmd_sweep(const ExperimentConfig& cfg) {
    ensure_dir(cfg.out_dir);
    auto model = load_model(cfg);
    const ObsModel obs_model{cfg.observation.y_obs, cfg.observation.sigma_y, 0};
    const int steps = cfg.schedule.steps;

    struct Cell {
        std::string method;
        int param;
        GuidanceSpec spec;
        ToyMethodResult result;
    };
    std::vector<Cell> cells;
    for (int j : cfg.sweep_j) {
        GuidanceConfig gc = cfg.toy_hcontrol;
        gc.j_max = j;
        cells.push_back(Cell{"h_control", j, gc.to_spec(steps), {}});
    }
    for (int r : cfg.sweep_recur) {
        GuidanceConfig gc = cfg.toy_tfg;
        gc.tfg_n_recur = r;
        cells.push_back(Cell{"tfg_ugd", r, gc.to_spec(steps), {}});
    }
    {
        GuidanceConfig gc = cfg.toy_dps;
        gc.dps_jacobian = "stop_grad";
        cells.push_back(Cell{"dps_stop_grad", 0, gc.to_spec(steps), {}});
    }

    const int n_threads = std::max(1, cfg.threads);
    auto work = [&](int start) {
        for (std::size_t i = static_cast<std::size_t>(start); i < cells.size();
             i += static_cast<std::size_t>(n_threads)) {
            const std::string label = cells[i].method + "_" + std::to_string(cells[i].param);
            cells[i].result = run_toy_method(*model, cfg, label, cells[i].spec);
        }
    };
    if (n_threads == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(work, t);
        for (auto& t : pool) t.join();
    }

    CsvFile csv(fs::path(cfg.out_dir) / "sweep.csv", csv_headers::kSweep);
    Json cells_json = Json::array();
    LineSeries hc_series{"h-control", "#1f6fb2", {}, {}, {}};
    LineSeries tfg_series{"tfg-ugd", "#c0392b", {}, {}, {}};
    for (auto& cell : cells) {
        auto reports = per_seed_hits(cell.result.points, obs_model, cfg.seeds, cfg.samples_per_seed);
        Json j = hits_to_json(reports);
        j["method"] = cell.method;
        j["param"] = cell.param;
        j["nfe_per_sample"] = cell.result.nfe_per_sample;
        cells_json.push_back(j);
        for (int s = 0; s < cfg.seeds; ++s) {
            const auto& r = reports[static_cast<std::size_t>(s)];
            csv.row({cell.method + "_" + std::to_string(cell.param),
                     std::to_string(cell.result.nfe_per_sample), std::to_string(s),
                     num(r.posterior_rate()), num(r.manifold_rate()), num(r.mode_balance())});
        }
        const double mean = j["posterior_hit_mean"].get<double>();
        const double stddev = j["posterior_hit_std"].get<double>();
        if (cell.method == "h_control") {
            hc_series.x.push_back(static_cast<double>(cell.result.nfe_per_sample));
            hc_series.y.push_back(mean);
            hc_series.err.push_back(stddev);
        } else if (cell.method == "tfg_ugd") {
            tfg_series.x.push_back(static_cast<double>(cell.result.nfe_per_sample));
            tfg_series.y.push_back(mean);
            tfg_series.err.push_back(stddev);
        }
    }
    csv.close();
    write_linechart_svg((fs::path(cfg.out_dir) / "sweep.svg").string(), {hc_series, tfg_series},
                        "posterior-hit rate vs NFE", "NFE", "posterior-hit", false);
    return Json{{"cells", cells_json}};
}

// ---------------------------------------------------------------------------
// gibbs-oracle
// ---------------------------------------------------------------------------

namespace {

struct ChainLawStats {
    Eigen::VectorXd mean_chain;
    Eigen::VectorXd z_scores;
    double max_abs_z = 0.0;
    double cov_frobenius_rel = 0.0;
    double cov_trace_ratio = 0.0;
    PermutationTest ed;
};

// Batch-means z-scores plus covariance agreement of chain iterates (columns)
// against an explicit Gaussian law.
ChainLawStats chain_law_stats(const Eigen::MatrixXd& iterates, const ConditionalGaussian& law,
                              int batch_count, const Eigen::MatrixXd& reference_draws,
                              int permutations, int ed_subsample, Rng& perm_rng) {
    ChainLawStats stats;
    const int d = static_cast<int>(iterates.rows());
    const Eigen::Index n = iterates.cols();
    stats.mean_chain = iterates.rowwise().mean();

    const int blocks = std::max(2, batch_count);
    const Eigen::Index block_len = n / blocks;
    Eigen::MatrixXd block_means(d, blocks);
    for (int b = 0; b < blocks; ++b)
        block_means.col(b) = iterates.middleCols(b * block_len, block_len).rowwise().mean();
    stats.z_scores.resize(d);
    for (int i = 0; i < d; ++i) {
        const auto row = block_means.row(i);
        const double m = row.mean();
        const double var = (row.array() - m).square().sum() / (blocks - 1);
        const double se = std::sqrt(std::max(var / blocks, 1e-300));
        stats.z_scores[i] = (stats.mean_chain[i] - law.mean[i]) / se;
        stats.max_abs_z = std::max(stats.max_abs_z, std::abs(stats.z_scores[i]));
    }

    Eigen::MatrixXd centered = iterates.colwise() - stats.mean_chain;
    Eigen::MatrixXd cov = centered * centered.transpose() / static_cast<double>(n - 1);
    stats.cov_frobenius_rel = (cov - law.cov).norm() / law.cov.norm();
    stats.cov_trace_ratio = cov.trace() / law.cov.trace();
    stats.ed = energy_permutation_test(iterates, reference_draws, permutations, ed_subsample,
                                       perm_rng);
    return stats;
}

Json stats_to_json(const ChainLawStats& stats) {
    return Json{{"max_abs_z", stats.max_abs_z},
                {"cov_frobenius_rel", stats.cov_frobenius_rel},
                {"cov_trace_ratio", stats.cov_trace_ratio},
                {"energy_distance", stats.ed.statistic},
                {"energy_null_p95", stats.ed.null_p95},
                {"energy_subsample", stats.ed.subsample},
                {"energy_permutations", stats.ed.permutations}};
}

// Runs the inner chain at fixed sigma and collects complement-restricted
// iterates after burn-in.
struct CollectedChain {
    Eigen::MatrixXd iterates;  // n_free x retained
    Eigen::VectorXd pin_on_observed;
    std::vector<int> free_rows;
};

CollectedChain collect_chain(const VelocityModel& model, const Observation& obs, double sigma,
                             InnerRecon recon, int burn_in, int retained,
                             std::uint64_t master_seed) {
    const Shape4 shape = model.shape();
    const int sites = shape.sites();
    CollectedChain out;
    for (int c = 0; c < shape.c; ++c)
        for (int s = 0; s < sites; ++s)
            if (!obs.mask[s]) out.free_rows.push_back(c * sites + s);

    HControlConfig hc;
    hc.j_max = burn_in + retained;
    hc.nu = 1.0;
    hc.freeze_enabled = false;
    hc.inner_recon = recon;
    hc.readout = ReadoutMode::kLast;
    PatchPartition partition = partition_complement(obs.mask, {1, 1, 1});

    out.iterates.resize(static_cast<Eigen::Index>(out.free_rows.size()), retained);
    auto hook = [&](int j, const Eigen::MatrixXd& x,
                    const std::vector<std::vector<PatchWelford>>&) {
        if (j <= burn_in) return;
        const Eigen::Index col = j - burn_in - 1;
        for (std::size_t i = 0; i < out.free_rows.size(); ++i)
            out.iterates(static_cast<Eigen::Index>(i), col) = x(out.free_rows[i], 0);
    };

    auto rngs = make_chain_rngs(master_seed, 1, 0);
    NfeCounter counter;
    // Initialize the chain at the masked composition of the evidence with zeros.
    Eigen::VectorXd start = Eigen::VectorXd::Zero(shape.size());
    for (int c = 0; c < shape.c; ++c)
        for (int s = 0; s < sites; ++s)
            if (obs.mask[s]) start[c * sites + s] = obs.values.data[c * sites + s];
    InnerGibbsResult r =
        inner_gibbs_batch(model, start, obs, sigma, hc, partition,
                          std::span<ChainRngs>(rngs.data(), 1), std::span<NfeCounter>(&counter, 1),
                          hook);

    std::vector<double> pin_vals;
    for (int s = 0; s < sites; ++s)
        if (obs.mask[s]) pin_vals.push_back(r.pin(s, 0));
    out.pin_on_observed = Eigen::Map<Eigen::VectorXd>(pin_vals.data(),
                                                      static_cast<Eigen::Index>(pin_vals.size()));
    return out;
}

}  // namespace

Json cmd_gibbs_oracle(const ExperimentConfig& cfg) {
    ensure_dir(cfg.out_dir);
    GmrfSpec spec = gmrf_build(cfg.gmrf.shape[0], cfg.gmrf.shape[1], cfg.gmrf.shape[2],
                               cfg.gmrf.beta1, cfg.gmrf.beta2, cfg.gmrf.tau_diag);
    GaussianModel model(spec);
    const Shape4 shape = model.shape();
    const auto& gc = cfg.gibbs;

    Rng obs_rng = Rng::stream(cfg.master_seed, StreamRole::kObsNoise);
    Rng oracle_rng = Rng::stream(cfg.master_seed, StreamRole::kOracle);
    Rng perm_rng = Rng::stream(cfg.master_seed, StreamRole::kPermute);

    Json results;

    // Masked case: the chain law must match the Schur-complement conditional.
    {
        Observation obs;
        obs.mask = mask_from_pattern(gc.mask_pattern, shape);
        obs.values = StateTensor(shape, gmrf_sample(model.spec(), 1, obs_rng).col(0));
        obs.tau = 0.2;
        CollectedChain chain = collect_chain(model, obs, gc.sigma, InnerRecon::kPosteriorSample,
                                             gc.burn_in, gc.retained, cfg.master_seed);
        ConditionalGaussian law =
            gmrf_conditional_oracle(model.spec(), obs.mask, chain.pin_on_observed, gc.sigma);
        Eigen::MatrixXd draws = gaussian_draws(law.mean, law.cov, gc.oracle_draws, oracle_rng);
        ChainLawStats stats = chain_law_stats(chain.iterates, law, gc.batch_count, draws,
                                              gc.permutations, gc.ed_subsample, perm_rng);
        results["posterior_sample"] = stats_to_json(stats);

        CsvFile csv(fs::path(cfg.out_dir) / "gibbs_zscores.csv", csv_headers::kZScores);
        for (std::size_t i = 0; i < chain.free_rows.size(); ++i)
            csv.row({std::to_string(chain.free_rows[i]),
                     num(stats.mean_chain[static_cast<Eigen::Index>(i)]),
                     num(law.mean[static_cast<Eigen::Index>(i)]),
                     num(stats.z_scores[static_cast<Eigen::Index>(i)])});
        csv.close();

        // Mean-mode chain: mean agreement holds, the covariance contracts.
        CollectedChain mean_chain = collect_chain(model, obs, gc.sigma, InnerRecon::kMean,
                                                  gc.burn_in, gc.retained, cfg.master_seed + 1);
        ConditionalGaussian mean_law =
            gmrf_conditional_oracle(model.spec(), obs.mask, mean_chain.pin_on_observed, gc.sigma);
        Eigen::MatrixXd mean_draws =
            gaussian_draws(mean_law.mean, mean_law.cov, gc.oracle_draws, oracle_rng);
        ChainLawStats mean_stats = chain_law_stats(mean_chain.iterates, mean_law, gc.batch_count,
                                                   mean_draws, gc.permutations, gc.ed_subsample,
                                                   perm_rng);
        results["mean_mode"] = stats_to_json(mean_stats);
    }

    // Empty mask: the full-state chain must match the unconditional prior.
    {
        Observation obs;
        obs.mask = SiteMask(shape.l, shape.h, shape.w);  // nothing observed
        obs.values = StateTensor::zeros(shape);
        obs.tau = 0.2;
        CollectedChain chain = collect_chain(model, obs, gc.sigma, InnerRecon::kPosteriorSample,
                                             gc.burn_in, gc.retained, cfg.master_seed + 2);
        ConditionalGaussian prior;
        prior.mean = Eigen::VectorXd::Zero(spec.dim());
        prior.cov = spec.Sigma;
        Eigen::MatrixXd draws = gaussian_draws(prior.mean, prior.cov, gc.oracle_draws, oracle_rng);
        ChainLawStats stats = chain_law_stats(chain.iterates, prior, gc.batch_count, draws,
                                              gc.permutations, gc.ed_subsample, perm_rng);
        results["empty_mask"] = stats_to_json(stats);
    }

    results["sigma"] = gc.sigma;
    results["retained"] = gc.retained;
    return results;
}

// ---------------------------------------------------------------------------
// locality
// ---------------------------------------------------------------------------

namespace {

Json axis_diagnostic(const std::vector<StateTensor>& samples, Axis axis, int band,
                     const fs::path& out_dir, const std::string& tag) {
    LineStack stack = build_line_stack(samples, axis);
    BlockPrecision bp = block_precision(stack);
    PartialCorrelationMap map = partial_correlation_map(bp, stack.rows());

    const char axis_name = axis == Axis::kL ? 'l' : (axis == Axis::kH ? 'h' : 'w');
    const std::string base = tag + "_axis_" + axis_name;
    {
        std::ofstream os(out_dir / (base + "_rho1.csv"), std::ios::trunc);
        if (!os) throw IoError("cannot open rho1 csv");
        for (int i = 0; i < map.length; ++i) {
            for (int j = 0; j < map.length; ++j) {
                if (j) os << ",";
                os << num(map.rho1(i, j));
            }
            os << "\n";
        }
    }
    write_heatmap_svg((out_dir / (base + "_rho1.svg")).string(), map.rho1, base);
    {
        CsvFile csv(out_dir / (base + "_eta.csv"), csv_headers::kEta);
        for (int r = 0; r < map.length; ++r)
            csv.row({std::to_string(r), num(eta_decay(map, r))});
        csv.close();
    }

    double max_beyond_band = 0.0;
    for (int b = 0; b < map.length; ++b)
        for (int g = 0; g < map.length; ++g)
            if (std::abs(b - g) > band) max_beyond_band = std::max(max_beyond_band, map.rho1(b, g));
    double max_diag_dev = 0.0;
    for (int b = 0; b < map.length; ++b)
        max_diag_dev = std::max(max_diag_dev, std::abs(map.rho1(b, b) - 1.0));

    return Json{{"axis", std::string(1, axis_name)},
                {"n_lines", static_cast<long long>(stack.rows())},
                {"noise_floor", map.floor},
                {"eta1", eta_decay(map, 1)},
                {"eta2", eta_decay(map, 2)},
                {"max_rho_beyond_band", max_beyond_band},
                {"max_diag_deviation", max_diag_dev}};
}

std::vector<StateTensor> columns_to_states(const Eigen::MatrixXd& m, const Shape4& shape) {
    std::vector<StateTensor> out;
    out.reserve(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index k = 0; k < m.cols(); ++k) out.emplace_back(shape, m.col(k));
    return out;
}

}  // namespace

Json cmd_locality(const ExperimentConfig& cfg) {
    ensure_dir(cfg.out_dir);
    const auto& lc = cfg.locality;
    GmrfSpec spec = gmrf_build(lc.gmrf.shape[0], lc.gmrf.shape[1], lc.gmrf.shape[2], lc.gmrf.beta1,
                               lc.gmrf.beta2, lc.gmrf.tau_diag);
    const int band = spec.band;
    GaussianModel model(spec);
    const Shape4 shape = model.shape();

    Json results;
    results["band"] = band;

    // Exact prior samples.
    Rng sample_rng = Rng::stream(cfg.master_seed, StreamRole::kOracle);
    Eigen::MatrixXd clean = gmrf_sample(model.spec(), lc.samples, sample_rng);
    auto clean_states = columns_to_states(clean, shape);
    Json clean_json = Json::array();
    for (Axis axis : {Axis::kL, Axis::kH, Axis::kW})
        clean_json.push_back(axis_diagnostic(clean_states, axis, band, cfg.out_dir, "clean"));
    results["clean"] = clean_json;

    // Clean predictions along sampled trajectories at the requested levels.
    NoiseSchedule schedule = cfg.make_schedule();
    auto rngs = make_chain_rngs(cfg.master_seed, lc.samples, 0);
    Eigen::MatrixXd z(shape.size(), lc.samples);
    for (int b = 0; b < lc.samples; ++b)
        for (int i = 0; i < shape.size(); ++i) z(i, b) = rngs[static_cast<std::size_t>(b)].init.normal();

    Json level_json = Json::array();
    for (int k = 0; k < schedule.steps(); ++k) {
        const double sk = schedule[k];
        Eigen::MatrixXd zhat = clean_prediction(model, z, sk);
        for (double level : lc.sigma_levels) {
            if (std::abs(sk - level) < 1e-9) {
                auto states = columns_to_states(zhat, shape);
                Json axes = Json::array();
                std::ostringstream tag;
                tag << "sigma_" << std::setprecision(3) << level;
                for (Axis axis : {Axis::kL, Axis::kH, Axis::kW})
                    axes.push_back(axis_diagnostic(states, axis, band, cfg.out_dir, tag.str()));
                level_json.push_back(Json{{"sigma", level}, {"axes", axes}});
            }
        }
        z = euler_step_batch(z, zhat, sk, schedule[k + 1]);
    }
    results["levels"] = level_json;
    return results;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

Json cmd_ablate(const ExperimentConfig& cfg) {
    ensure_dir(cfg.out_dir);
    const auto& ac = cfg.ablate;
    GmrfSpec spec = gmrf_build(ac.gmrf.shape[0], ac.gmrf.shape[1], ac.gmrf.shape[2], ac.gmrf.beta1,
                               ac.gmrf.beta2, ac.gmrf.tau_diag);
    GaussianModel model(spec);
    const Shape4 shape = model.shape();

    Observation obs;
    obs.mask = mask_from_pattern(ac.mask_pattern, shape);
    Rng obs_rng = Rng::stream(cfg.master_seed, StreamRole::kObsNoise);
    Eigen::VectorXd z0_ref = gmrf_sample(model.spec(), 1, obs_rng).col(0);
    Eigen::VectorXd evidence = z0_ref;
    for (int s = 0; s < shape.sites(); ++s)
        if (obs.mask[s]) evidence[s] += ac.tau * obs_rng.normal();
    obs.values = StateTensor(shape, evidence);
    obs.tau = ac.tau;

    // Exact posterior given the noisy evidence, as the energy-distance reference.
    ConditionalGaussian posterior = gmrf_posterior_given_obs(model.spec(), obs.mask, evidence, ac.tau);
    Rng oracle_rng = Rng::stream(cfg.master_seed, StreamRole::kOracle);
    Eigen::MatrixXd oracle_draws = gaussian_draws(posterior.mean, posterior.cov, ac.oracle_draws,
                                                  oracle_rng);

    NoiseSchedule schedule = cfg.make_schedule();
    Json cells = Json::array();
    CsvFile csv(fs::path(cfg.out_dir) / "ablate.csv", csv_headers::kAblate);
    double freeze_on_iters = 0.0, freeze_off_iters = 0.0;

    for (const auto readout : {ReadoutMode::kPolyak, ReadoutMode::kLast}) {
        for (const bool freeze : {true, false}) {
            GuidanceSpec gspec;
            gspec.variant = Variant::kHControl;
            gspec.window_begin = 0;
            gspec.window_end = schedule.steps();
            gspec.hc.j_max = ac.j_max;
            gspec.hc.kappa = ac.kappa;
            gspec.hc.nu = ac.nu;
            gspec.hc.patch_sizes = ac.patch_sizes;
            gspec.hc.outer_mode = OuterMode::kSoft;
            gspec.hc.outer_tau = ac.tau;
            gspec.hc.inner_recon = InnerRecon::kMean;
            gspec.hc.readout = readout;
            gspec.hc.freeze_enabled = freeze;

            RunOptions options;
            options.master_seed = cfg.master_seed;
            options.n_chains = ac.chains;
            RunResult run = run_sampler(model, schedule, obs, gspec, options);

            double iter_sum = 0.0;
            for (const auto& row : run.diagnostics) iter_sum += row.inner_iters;
            const double mean_iters =
                run.diagnostics.empty() ? 0.0 : iter_sum / static_cast<double>(run.diagnostics.size());
            double nfe_mean = 0.0;
            for (const auto& c : run.nfe) nfe_mean += static_cast<double>(c.nfe());
            nfe_mean /= static_cast<double>(run.nfe.size());

            Rng perm_rng = Rng::stream(cfg.master_seed, StreamRole::kPermute);
            PermutationTest ed = energy_permutation_test(run.samples, oracle_draws, 1,
                                                         ac.ed_subsample, perm_rng);

            const std::string readout_name = readout == ReadoutMode::kPolyak ? "polyak" : "last";
            cells.push_back(Json{{"readout", readout_name},
                                 {"freeze", freeze},
                                 {"energy_distance", ed.statistic},
                                 {"mean_inner_iters", mean_iters},
                                 {"nfe_per_sample", nfe_mean}});
            csv.row({readout_name, freeze ? "on" : "off", num(ed.statistic), num(mean_iters),
                     num(nfe_mean)});
            if (freeze)
                freeze_on_iters += mean_iters / 2.0;
            else
                freeze_off_iters += mean_iters / 2.0;
        }
    }
    csv.close();

    const double ratio = polyak_variance_ratio(model, obs, ac.ratio_sigma, ac.ratio_inner_iters,
                                               ac.ratio_repeats, InnerRecon::kPosteriorSample,
                                               cfg.master_seed);

    return Json{{"cells", cells},
                {"mean_inner_iters_freeze_on", freeze_on_iters},
                {"mean_inner_iters_freeze_off", freeze_off_iters},
                {"j_max", ac.j_max},
                {"polyak_variance_ratio", ratio}};
}

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

int run_task(const ExperimentConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    Json results;
    try {
        if (cfg.task == "train")
            results = cmd_train(cfg);
        else if (cfg.task == "toy-fig")
            results = cmd_toy_fig(cfg);
        else if (cfg.task == "sweep")
            results = cmd_sweep(cfg);
        else if (cfg.task == "gibbs-oracle")
            results = cmd_gibbs_oracle(cfg);
        else if (cfg.task == "locality")
            results = cmd_locality(cfg);
        else if (cfg.task == "ablate")
            results = cmd_ablate(cfg);
        else
            throw ConfigError("unknown task: " + cfg.task);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const std::ios_base::failure& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    }

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::vector<std::string> artifacts;
    for (const auto& entry : fs::directory_iterator(cfg.out_dir))
        if (entry.is_regular_file() && entry.path().filename() != "results.json")
            artifacts.push_back(entry.path().filename().string());
    std::sort(artifacts.begin(), artifacts.end());

    Json record{{"schema_version", 1},
                {"config", cfg.to_json()},
                {"results", results},
                {"runtime", Json{{"wall_seconds", wall}, {"artifacts", artifacts}}}};
    std::ofstream os(fs::path(cfg.out_dir) / "results.json", std::ios::trunc);
    if (!os) {
        std::cerr << "io error: cannot write results.json\n";
        return 2;
    }
    os << record.dump(2) << "\n";
    if (!os) {
        std::cerr << "io error: results.json write failed\n";
        return 2;
    }
    return 0;
}

}  // namespace hctl
