#include "hctl/guidance.hpp"

#include <algorithm>
#include <stdexcept>

namespace hctl {

namespace {

// result = M ? a : b, entrywise with channel-broadcast mask; exact copies.
void compose_into(Eigen::MatrixXd& out, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                  const SiteMask& mask, int channels) {
    const int sites = mask.sites();
    out.resize(b.rows(), b.cols());
    out = b;
    for (int c = 0; c < channels; ++c)
        for (int s = 0; s < sites; ++s)
            if (mask[s]) out.row(c * sites + s) = a.row(c * sites + s);
}

void apply_masked(Eigen::MatrixXd& target, const Eigen::MatrixXd& source, const SiteMask& mask,
                  int channels) {
    const int sites = mask.sites();
    for (int c = 0; c < channels; ++c)
        for (int s = 0; s < sites; ++s)
            if (mask[s]) target.row(c * sites + s) = source.row(c * sites + s);
}

// M ⊙ (a - b), zero elsewhere.
Eigen::MatrixXd masked_residual(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                                const SiteMask& mask, int channels) {
    const int sites = mask.sites();
    Eigen::MatrixXd r = Eigen::MatrixXd::Zero(a.rows(), a.cols());
    for (int c = 0; c < channels; ++c)
        for (int s = 0; s < sites; ++s) {
            const int row = c * sites + s;
            if (mask[s]) r.row(row) = a.row(row).array() - b[row];
        }
    return r;
}

// Shared by the soft pull and the default DPS step size so that the J=0
// reduction of the inner loop reproduces DPS stop-grad bit-exactly.
double guidance_pull_coefficient(double sigma, double sigma_dot, double pull_scale, double tau) {
    return sigma * sigma_dot * pull_scale / (tau * tau);
}

}  // namespace

void Observation::validate(const Shape4& state_shape) const {
    if (!mask.shape_matches(state_shape)) throw std::invalid_argument("Observation: mask/state shape mismatch");
    if (!(values.shape == state_shape)) throw std::invalid_argument("Observation: values/state shape mismatch");
    if (!hard && !(tau > 0.0)) throw std::invalid_argument("Observation: tau must be > 0 unless hard");
    const int sites = mask.sites();
    for (int c = 0; c < state_shape.c; ++c)
        for (int s = 0; s < sites; ++s)
            if (mask[s] && !std::isfinite(values.data[c * sites + s]))
                throw std::invalid_argument("Observation: non-finite value on an observed site");
}

void GuidanceSpec::validate(int steps) const {
    if (window_begin < 0 || window_end < window_begin || window_end > steps)
        throw std::invalid_argument("GuidanceSpec: window must satisfy 0 <= s <= e <= K");
    if (variant == Variant::kSoftPull && !(soft_tau > 0.0))
        throw std::invalid_argument("GuidanceSpec: soft_pull requires tau > 0");
    if (variant == Variant::kTfgUgd && (tfg.n_recur < 1 || tfg.n_iter < 0))
        throw std::invalid_argument("GuidanceSpec: tfg requires n_recur >= 1, n_iter >= 0");
    if (variant == Variant::kHControl) {
        if (hc.j_max < 0) throw std::invalid_argument("HControlConfig: j_max must be >= 0");
        if (!(hc.kappa > 0.0 && hc.kappa <= 1.0)) throw std::invalid_argument("HControlConfig: kappa in (0,1]");
        if (!(hc.nu > 0.0 && hc.nu <= 1.0)) throw std::invalid_argument("HControlConfig: nu in (0,1]");
        if (hc.outer_mode == OuterMode::kSoft && !(hc.outer_tau > 0.0))
            throw std::invalid_argument("HControlConfig: soft outer mode requires tau > 0");
    }
}

// ---------------------------------------------------------------------------
// Elementary steps
// ---------------------------------------------------------------------------

Eigen::MatrixXd euler_step_batch(const Eigen::MatrixXd& z, const Eigen::MatrixXd& zhat_final,
                                 double sigma_k, double sigma_k1) {
    if (!(sigma_k > 0.0)) throw std::invalid_argument("euler_step: sigma_k must be > 0");
    if (sigma_k1 == 0.0) return zhat_final;  // algebraic full jump
    return z + ((sigma_k1 - sigma_k) / sigma_k) * (z - zhat_final);
}

StateTensor euler_step(const StateTensor& z, const StateTensor& zhat_final, double sigma_k,
                       double sigma_k1) {
    return StateTensor(z.shape, euler_step_batch(z.data, zhat_final.data, sigma_k, sigma_k1));
}

StateTensor outer_soft_pull(const StateTensor& u, const StateTensor& zhat0, const Observation& obs,
                            double sigma, double sigma_dot) {
    if (!(obs.tau > 0.0)) throw std::invalid_argument("outer_soft_pull: tau must be > 0");
    const double coef = sigma * sigma_dot / (obs.tau * obs.tau);
    Eigen::MatrixXd r = masked_residual(zhat0.data, obs.values.data, obs.mask, zhat0.shape.c);
    return StateTensor(u.shape, u.data + coef * r.col(0));
}

StateTensor outer_hard_replace(const StateTensor& zhat0, const Observation& obs) {
    return mask_compose(obs.values, zhat0, obs.mask);
}

StateTensor dps_step(const VelocityModel& model, const StateTensor& z, double sigma,
                     const Observation& obs, double zeta, JacobianMode mode, NfeCounter* counter) {
    if (!(sigma > 0.0 && sigma <= 1.0)) throw std::invalid_argument("dps_step: sigma in (0,1]");
    if (mode == JacobianMode::kFullVjp && !model.has_input_gradient())
        throw std::logic_error("dps_step: full_vjp requires input-gradient capability");
    Eigen::MatrixXd zhat = clean_prediction(model, Eigen::MatrixXd(z.data), sigma);
    if (counter) counter->forward += 1;
    Eigen::MatrixXd r = masked_residual(zhat, obs.values.data, obs.mask, z.shape.c);
    Eigen::MatrixXd g;
    if (mode == JacobianMode::kFullVjp) {
        g = model.input_vjp(z.data, sigma, r);
        if (counter) counter->backward += 1;
    } else {
        g = r;
    }
    return StateTensor(z.shape, zeta * g.col(0));
}

StateTensor weighted_h_step(const StateTensor& u, const StateTensor& z, double sigma,
                            const StateTensor& warped, double alpha) {
    if (!(sigma > 0.0 && sigma <= 1.0)) throw std::invalid_argument("weighted_h_step: sigma in (0,1]");
    const double lambda = std::pow(sigma, alpha);
    Eigen::VectorXd hard_pull = (z.data - warped.data) / sigma;
    return StateTensor(u.shape, u.data + lambda * (hard_pull - u.data));
}

// ---------------------------------------------------------------------------
// Chain machinery
// ---------------------------------------------------------------------------

std::vector<ChainRngs> make_chain_rngs(std::uint64_t master_seed, int n_chains, int offset) {
    std::vector<ChainRngs> out;
    out.reserve(static_cast<std::size_t>(n_chains));
    for (int b = 0; b < n_chains; ++b) {
        const std::uint64_t idx = static_cast<std::uint64_t>(offset + b);
        out.push_back(ChainRngs{Rng::stream(master_seed, StreamRole::kInitNoise, idx),
                                Rng::stream(master_seed, StreamRole::kPinNoise, idx),
                                Rng::stream(master_seed, StreamRole::kInnerNoise, idx)});
    }
    return out;
}

int BandTrace::band_of(double sigma) const {
    int b = 0;
    for (double e : edges)
        if (sigma >= e) ++b;
    return b;
}

void BandTrace::add(double sigma, int j, double abs_dw) {
    if (!std::isfinite(abs_dw)) return;
    const int band = band_of(sigma);
    if (static_cast<int>(sums.size()) < bands()) {
        sums.resize(static_cast<std::size_t>(bands()));
        counts.resize(static_cast<std::size_t>(bands()));
    }
    auto& s = sums[static_cast<std::size_t>(band)];
    auto& c = counts[static_cast<std::size_t>(band)];
    if (static_cast<int>(s.size()) < j) {
        s.resize(static_cast<std::size_t>(j), 0.0);
        c.resize(static_cast<std::size_t>(j), 0);
    }
    s[static_cast<std::size_t>(j - 1)] += abs_dw;
    c[static_cast<std::size_t>(j - 1)] += 1;
}

double BandTrace::mean(int band, int j) const {
    if (band < 0 || band >= static_cast<int>(sums.size())) return std::nan("");
    const auto& s = sums[static_cast<std::size_t>(band)];
    const auto& c = counts[static_cast<std::size_t>(band)];
    if (j < 1 || j > static_cast<int>(s.size()) || c[static_cast<std::size_t>(j - 1)] == 0)
        return std::nan("");
    return s[static_cast<std::size_t>(j - 1)] / c[static_cast<std::size_t>(j - 1)];
}

int BandTrace::max_iter() const {
    std::size_t m = 0;
    for (const auto& s : sums) m = std::max(m, s.size());
    return static_cast<int>(m);
}

InnerGibbsResult inner_gibbs_batch(const VelocityModel& model, const Eigen::MatrixXd& zhat_obs,
                                   const Observation& obs, double sigma, const HControlConfig& cfg,
                                   const PatchPartition& partition, std::span<ChainRngs> rngs,
                                   std::span<NfeCounter> counters, const IterateHook& hook) {
    if (!(sigma > 0.0 && sigma <= 1.0)) throw std::invalid_argument("inner_gibbs: sigma in (0,1]");
    if (cfg.j_max < 0) throw std::invalid_argument("inner_gibbs: j_max must be >= 0");
    if (cfg.inner_recon == InnerRecon::kPosteriorSample && !model.has_posterior_sample())
        throw std::logic_error("inner_gibbs: posterior_sample mode needs the Gaussian backend");

    const Shape4 shape = model.shape();
    const int size = shape.size();
    const int sites = shape.sites();
    const int channels = shape.c;
    const int n_chains = static_cast<int>(zhat_obs.cols());
    const int n_patches = partition.count();

    InnerGibbsResult result;
    result.readout = zhat_obs;
    result.iters.assign(static_cast<std::size_t>(n_chains), 0);
    result.welford.assign(static_cast<std::size_t>(n_chains),
                          std::vector<PatchWelford>(static_cast<std::size_t>(n_patches)));
    if (cfg.j_max == 0 || n_patches == 0) return result;

    // Freshly noised pin, one draw per chain, held fixed for the whole loop.
    Eigen::MatrixXd zbar(size, n_chains);
    for (int b = 0; b < n_chains; ++b)
        for (int i = 0; i < size; ++i)
            zbar(i, b) = (1.0 - sigma) * obs.values.data[i] + sigma * rngs[b].pin.normal();
    result.pin = zbar;

    Eigen::MatrixXd x = zhat_obs;                                  // zhat0^{(j-1)}
    Eigen::MatrixXd polyak = Eigen::MatrixXd::Zero(size, n_chains);
    std::vector<char> active(static_cast<std::size_t>(n_chains), 1);
    result.mean_abs_dw.assign(static_cast<std::size_t>(cfg.j_max), std::nan(""));
    result.mean_stable_fraction.assign(static_cast<std::size_t>(cfg.j_max), std::nan(""));

    std::vector<int> act;
    act.reserve(static_cast<std::size_t>(n_chains));
    for (int j = 1; j <= cfg.j_max; ++j) {
        act.clear();
        for (int b = 0; b < n_chains; ++b)
            if (active[static_cast<std::size_t>(b)]) act.push_back(b);
        if (act.empty()) break;
        const int na = static_cast<int>(act.size());

        // Perturb the complement with fresh noise, pin the observed sites.
        Eigen::MatrixXd zc(size, na);
        for (int a = 0; a < na; ++a) {
            const int b = act[static_cast<std::size_t>(a)];
            Eigen::VectorXd xi(size);
            for (int i = 0; i < size; ++i) xi[i] = rngs[b].inner.normal();
            zc.col(a) = (1.0 - sigma) * x.col(b) + sigma * xi;
            for (int c = 0; c < channels; ++c)
                for (int s = 0; s < sites; ++s)
                    if (obs.mask[s]) zc(c * sites + s, a) = zbar(c * sites + s, b);
        }

        // Re-denoise (one forward per active chain).
        Eigen::MatrixXd xnew;
        if (cfg.inner_recon == InnerRecon::kMean) {
            xnew = zc - sigma * model.velocity(zc, sigma);
        } else {
            Eigen::MatrixXd eps(size, na);
            for (int a = 0; a < na; ++a) {
                const int b = act[static_cast<std::size_t>(a)];
                for (int i = 0; i < size; ++i) eps(i, a) = rngs[b].inner.normal();
            }
            xnew = model.posterior_sample(zc, sigma, eps);
        }
        for (int b : act) counters[b].forward += 1;

        double dw_sum = 0.0;
        long long dw_count = 0;
        double stable_sum = 0.0;
        for (int a = 0; a < na; ++a) {
            const int b = act[static_cast<std::size_t>(a)];
            auto& pw = result.welford[static_cast<std::size_t>(b)];
            Eigen::VectorXd col = xnew.col(a);

            // Welford bookkeeping on the fresh (pre-freeze) iterate.
            int n_stable = 0;
            for (int g = 0; g < n_patches; ++g) {
                auto& w = pw[static_cast<std::size_t>(g)];
                for (int site : partition.patches[static_cast<std::size_t>(g)])
                    for (int c = 0; c < channels; ++c) w.feed(col[c * sites + site]);
                w.close_iteration(cfg.kappa);
                if (w.delta_readings >= 1) {
                    dw_sum += std::abs(w.delta_curr);
                    ++dw_count;
                }
                // Freeze: stable patches hold the previous iterate bit-exactly.
                if (cfg.freeze_enabled && w.stable) {
                    for (int site : partition.patches[static_cast<std::size_t>(g)])
                        for (int c = 0; c < channels; ++c)
                            col[c * sites + site] = x(c * sites + site, b);
                }
                if (w.stable) ++n_stable;
            }

            x.col(b) = col;
            polyak.col(b) += (col - polyak.col(b)) / j;
            result.iters[static_cast<std::size_t>(b)] = j;

            const double frac = static_cast<double>(n_stable) / n_patches;
            stable_sum += frac;
            if (cfg.freeze_enabled && frac > cfg.nu) active[static_cast<std::size_t>(b)] = 0;
        }
        if (dw_count > 0) result.mean_abs_dw[static_cast<std::size_t>(j - 1)] = dw_sum / dw_count;
        result.mean_stable_fraction[static_cast<std::size_t>(j - 1)] = stable_sum / na;
        if (hook) hook(j, x, result.welford);
    }

    result.readout = cfg.readout == ReadoutMode::kPolyak ? polyak : x;
    return result;
}

InnerGibbsResult inner_gibbs(const VelocityModel& model, const StateTensor& zhat_obs,
                             const Observation& obs, double sigma, const HControlConfig& cfg,
                             const PatchPartition& partition, ChainRngs& rngs, NfeCounter& counter,
                             const IterateHook& hook) {
    return inner_gibbs_batch(model, zhat_obs.data, obs, sigma, cfg, partition,
                             std::span<ChainRngs>(&rngs, 1), std::span<NfeCounter>(&counter, 1),
                             hook);
}

// ---------------------------------------------------------------------------
// Full sampler
// ---------------------------------------------------------------------------

namespace {

// One TFG-UGD outer step with self-recurrence; consumes the step entirely.
Eigen::MatrixXd tfg_ugd_step_batch(const VelocityModel& model, Eigen::MatrixXd z, double sigma_k,
                                   double sigma_k1, const Observation& obs, const TfgConfig& cfg,
                                   std::span<ChainRngs> rngs, std::span<NfeCounter> counters) {
    const Shape4 shape = model.shape();
    const int size = shape.size();
    const int n_chains = static_cast<int>(z.cols());
    const auto count_all = [&] {
        for (int b = 0; b < n_chains; ++b) counters[b].forward += 1;
    };

    Eigen::MatrixXd u = model.velocity(z, sigma_k);
    count_all();
    Eigen::MatrixXd zhat = z - sigma_k * u;

    for (int r = 1; r <= cfg.n_recur; ++r) {
        for (int i = 0; i < cfg.n_iter; ++i) {
            // Mean guidance: gradient step on the clean prediction, re-embedded
            // at the implied noise direction, then re-evaluated.
            Eigen::MatrixXd eps_dir = (z - (1.0 - sigma_k) * zhat) / sigma_k;
            Eigen::MatrixXd guided = zhat - cfg.mu * masked_residual(zhat, obs.values.data, obs.mask, shape.c);
            z = (1.0 - sigma_k) * guided + sigma_k * eps_dir;
            u = model.velocity(z, sigma_k);
            count_all();
            zhat = z - sigma_k * u;
        }
        // z-space guidance of strength rho, then a fresh evaluation drives the advance.
        z -= cfg.rho * masked_residual(zhat, obs.values.data, obs.mask, shape.c);
        u = model.velocity(z, sigma_k);
        count_all();
        zhat = z - sigma_k * u;
        Eigen::MatrixXd znext = euler_step_batch(z, zhat, sigma_k, sigma_k1);
        if (r < cfg.n_recur) {
            // Re-noise back to sigma_k through the forward kernel.
            const double a = (1.0 - sigma_k) / (1.0 - sigma_k1);
            const double noise = std::sqrt(std::max(0.0, sigma_k * sigma_k - a * a * sigma_k1 * sigma_k1));
            Eigen::MatrixXd xi(size, n_chains);
            for (int b = 0; b < n_chains; ++b)
                for (int idx = 0; idx < size; ++idx) xi(idx, b) = rngs[b].inner.normal();
            z = a * znext + noise * xi;
        } else {
            z = znext;
        }
    }
    return z;
}

}  // namespace

RunResult run_sampler(const VelocityModel& model, const NoiseSchedule& schedule,
                      const Observation& obs, const GuidanceSpec& spec, const RunOptions& options) {
    const int steps = schedule.steps();
    spec.validate(steps);
    const Shape4 shape = model.shape();
    if (spec.variant != Variant::kNone) obs.validate(shape);

    const int size = shape.size();
    const int n_chains = options.n_chains;
    auto rngs = make_chain_rngs(options.master_seed, n_chains, options.chain_offset);

    RunResult result;
    result.nfe.assign(static_cast<std::size_t>(n_chains), NfeCounter{});
    result.band_trace.edges = options.band_edges;

    Eigen::MatrixXd z(size, n_chains);
    for (int b = 0; b < n_chains; ++b)
        for (int i = 0; i < size; ++i) z(i, b) = rngs[b].init.normal();

    PatchPartition partition;
    if (spec.variant == Variant::kHControl)
        partition = partition_complement(obs.mask, spec.hc.patch_sizes);

    const auto count_forward_all = [&] {
        for (auto& c : result.nfe) c.forward += 1;
    };

    std::span<ChainRngs> rng_span(rngs);
    std::span<NfeCounter> counter_span(result.nfe);

    for (int k = 0; k < steps; ++k) {
        const double sk = schedule[k];
        const double sk1 = schedule[k + 1];
        const bool windowed = k >= spec.window_begin && k < spec.window_end &&
                              spec.variant != Variant::kNone;
        // Forward-time slope of the schedule over this step (positive).
        const double sigma_dot = (sk - sk1) * steps;

        if (windowed && spec.variant == Variant::kTfgUgd) {
            z = tfg_ugd_step_batch(model, std::move(z), sk, sk1, obs, spec.tfg, rng_span,
                                   counter_span);
            continue;
        }

        Eigen::MatrixXd u = model.velocity(z, sk);
        count_forward_all();
        Eigen::MatrixXd zhat = z - sk * u;
        Eigen::MatrixXd zfinal;

        if (!windowed) {
            zfinal = std::move(zhat);
        } else {
            switch (spec.variant) {
                case Variant::kHardReplace: {
                    compose_into(zfinal, Eigen::MatrixXd(obs.values.data.replicate(1, n_chains)),
                                 zhat, obs.mask, shape.c);
                    break;
                }
                case Variant::kSoftPull: {
                    const double coef =
                        guidance_pull_coefficient(sk, sigma_dot, spec.pull_scale, spec.soft_tau);
                    zfinal = zhat - sk * coef * masked_residual(zhat, obs.values.data, obs.mask, shape.c);
                    break;
                }
                case Variant::kDps: {
                    const double zeta =
                        std::isnan(spec.dps_zeta)
                            ? guidance_pull_coefficient(sk, sigma_dot, spec.pull_scale, obs.tau)
                            : spec.dps_zeta;
                    Eigen::MatrixXd r = masked_residual(zhat, obs.values.data, obs.mask, shape.c);
                    Eigen::MatrixXd g;
                    if (spec.dps_jacobian == JacobianMode::kFullVjp) {
                        g = model.input_vjp(z, sk, r);
                        for (auto& c : result.nfe) c.backward += 1;
                    } else {
                        g = std::move(r);
                    }
                    zfinal = zhat - sk * zeta * g;
                    break;
                }
                case Variant::kWeightedH: {
                    const double lambda = std::pow(sk, spec.weighted_alpha);
                    Eigen::MatrixXd hard_pull =
                        (z.colwise() - Eigen::VectorXd(obs.values.data)) / sk;
                    Eigen::MatrixXd u_ctrl = u + lambda * (hard_pull - u);
                    zfinal = z - sk * u_ctrl;
                    break;
                }
                case Variant::kHControl: {
                    const auto& hc = spec.hc;
                    Eigen::MatrixXd zobs;
                    if (hc.outer_mode == OuterMode::kHard) {
                        compose_into(zobs, Eigen::MatrixXd(obs.values.data.replicate(1, n_chains)),
                                     zhat, obs.mask, shape.c);
                    } else {
                        const double coef =
                            guidance_pull_coefficient(sk, sigma_dot, hc.pull_scale, hc.outer_tau);
                        zobs = zhat - sk * coef * masked_residual(zhat, obs.values.data, obs.mask, shape.c);
                    }
                    InnerGibbsResult inner = inner_gibbs_batch(model, zobs, obs, sk, hc, partition,
                                                               rng_span, counter_span);
                    compose_into(zfinal, zobs, inner.readout, obs.mask, shape.c);

                    StepDiagnosticsRow row;
                    row.step = k;
                    row.sigma = sk;
                    double iter_sum = 0.0, frac_sum = 0.0, dw_sum = 0.0;
                    long long dw_n = 0;
                    for (int b = 0; b < n_chains; ++b) {
                        iter_sum += inner.iters[static_cast<std::size_t>(b)];
                        int n_stable = 0;
                        for (const auto& w : inner.welford[static_cast<std::size_t>(b)]) {
                            n_stable += w.stable ? 1 : 0;
                            if (w.delta_readings >= 1) {
                                dw_sum += std::abs(w.delta_curr);
                                ++dw_n;
                            }
                        }
                        frac_sum += partition.count() > 0
                                        ? static_cast<double>(n_stable) / partition.count()
                                        : 0.0;
                    }
                    row.inner_iters = iter_sum / n_chains;
                    row.stable_fraction = frac_sum / n_chains;
                    row.mean_abs_dw = dw_n > 0 ? dw_sum / dw_n : 0.0;
                    for (const auto& c : result.nfe) {
                        row.nfe_forward += c.forward;
                        row.nfe_backward += c.backward;
                    }
                    result.diagnostics.push_back(row);

                    for (int j = 1; j <= static_cast<int>(inner.mean_abs_dw.size()); ++j) {
                        const double v = inner.mean_abs_dw[static_cast<std::size_t>(j - 1)];
                        if (std::isfinite(v)) result.band_trace.add(sk, j, v);
                    }
                    break;
                }
                default:
                    zfinal = std::move(zhat);
            }
        }
        z = euler_step_batch(z, zfinal, sk, sk1);
    }

    result.samples = std::move(z);
    return result;
}

SingleRunResult run_baseline(const VelocityModel& model, const NoiseSchedule& schedule,
                             const Observation& obs, const GuidanceSpec& spec,
                             std::uint64_t master_seed, int chain_index) {
    RunOptions options;
    options.master_seed = master_seed;
    options.n_chains = 1;
    options.chain_offset = chain_index;
    RunResult run = run_sampler(model, schedule, obs, spec, options);
    return SingleRunResult{StateTensor(model.shape(), run.samples.col(0)), run.nfe[0],
                           std::move(run.diagnostics)};
}

SingleRunResult hcontrol_sample(const VelocityModel& model, const NoiseSchedule& schedule,
                                const Observation& obs, const GuidanceSpec& spec,
                                std::uint64_t master_seed, int chain_index) {
    if (spec.variant != Variant::kHControl)
        throw std::invalid_argument("hcontrol_sample: spec.variant must be h_control");
    return run_baseline(model, schedule, obs, spec, master_seed, chain_index);
}

}  // namespace hctl
