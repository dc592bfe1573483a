#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include "hctl/config.hpp"
#include "hctl/flow_gaussian.hpp"
#include "hctl/flow_mlp.hpp"
#include "hctl/gmrf.hpp"
#include "hctl/guidance.hpp"
#include "hctl/locality.hpp"
#include "hctl/metrics.hpp"
#include "hctl/schedule.hpp"

namespace py = pybind11;
using namespace hctl;

namespace {

Shape4 shape_from_tuple(const std::tuple<int, int, int, int>& t) {
    return Shape4{std::get<0>(t), std::get<1>(t), std::get<2>(t), std::get<3>(t)};
}

Observation make_observation(const Shape4& shape, const std::vector<int>& observed_sites,
                             const Eigen::VectorXd& values, double tau) {
    Observation obs;
    obs.mask = SiteMask(shape.l, shape.h, shape.w);
    for (int s : observed_sites) obs.mask.set(s, true);
    if (values.size() != shape.size())
        throw std::invalid_argument("values must cover the full lattice");
    obs.values = StateTensor(shape, values);
    obs.tau = tau;
    return obs;
}

// Guidance settings arrive as a JSON object with GuidanceConfig fields.
GuidanceSpec spec_from_json_string(const std::string& text, int steps) {
    const Json wrapper{{"toy", Json{{"hcontrol", Json::parse(text)}}}};
    return ExperimentConfig::from_json(wrapper).toy_hcontrol.to_spec(steps);
}

py::dict run_result_to_dict(RunResult&& run) {
    py::dict out;
    out["samples"] = Eigen::MatrixXd(run.samples);
    long long fwd = 0, bwd = 0;
    for (const auto& c : run.nfe) {
        fwd += c.forward;
        bwd += c.backward;
    }
    out["nfe_forward_total"] = fwd;
    out["nfe_backward_total"] = bwd;
    out["nfe_per_chain"] = run.nfe.empty() ? 0LL : run.nfe.front().nfe();
    py::list diag;
    for (const auto& row : run.diagnostics) {
        py::dict r;
        r["step"] = row.step;
        r["sigma"] = row.sigma;
        r["inner_iters"] = row.inner_iters;
        r["stable_fraction"] = row.stable_fraction;
        r["mean_abs_dw"] = row.mean_abs_dw;
        diag.append(r);
    }
    out["diagnostics"] = diag;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Conditional sampling laboratory for flow-matching models";

    m.def(
        "build_schedule", [](int steps) { return build_schedule(steps).sigmas; }, py::arg("steps"),
        "Sampling-order noise schedule sigma_0=1 ... sigma_K=0");

    // ----- checkerboard density -----
    m.def(
        "checkerboard_sample",
        [](int n, std::uint64_t seed) {
            Rng rng = Rng::stream(seed, StreamRole::kOracle);
            return Eigen::MatrixXd(Checkerboard::sample(n, rng));
        },
        py::arg("n"), py::arg("seed") = 0);
    m.def("checkerboard_logdensity", &Checkerboard::logdensity, py::arg("x"), py::arg("y"));
    m.def(
        "checkerboard_conditional_modes",
        [](double y_obs) {
            std::vector<std::pair<double, double>> centers;
            for (const auto& sq : Checkerboard::conditional_modes(ObsModel{y_obs, 0.2, 0}))
                centers.emplace_back(sq.cx(), sq.cy());
            return centers;
        },
        py::arg("y_obs"));
    m.def(
        "checkerboard_posterior_oracle",
        [](double y_obs, double sigma_y, int n, std::uint64_t seed) {
            Rng rng = Rng::stream(seed, StreamRole::kOracle);
            return Eigen::MatrixXd(
                checkerboard_posterior_oracle(ObsModel{y_obs, sigma_y, 0}, n, rng));
        },
        py::arg("y_obs"), py::arg("sigma_y"), py::arg("n"), py::arg("seed") = 0);

    // ----- metrics -----
    m.def(
        "manifold_hit",
        [](const Eigen::MatrixXd& pts) { return manifold_hit(Eigen::Matrix2Xd(pts)); },
        py::arg("points"));
    m.def(
        "posterior_hit",
        [](const Eigen::MatrixXd& pts, double y_obs, double sigma_y) {
            const HitReport r = posterior_hit(Eigen::Matrix2Xd(pts), ObsModel{y_obs, sigma_y, 0});
            py::dict out;
            out["n"] = r.n;
            out["manifold_rate"] = r.manifold_rate();
            out["posterior_rate"] = r.posterior_rate();
            out["mode_balance"] = r.mode_balance();
            return out;
        },
        py::arg("points"), py::arg("y_obs") = 0.5, py::arg("sigma_y") = 0.2);
    m.def("energy_distance", &energy_distance, py::arg("x"), py::arg("y"));

    // ----- GMRF -----
    py::class_<GmrfSpec>(m, "GmrfSpec")
        .def_property_readonly("Q", [](const GmrfSpec& s) { return s.Q; })
        .def_property_readonly("Sigma", [](const GmrfSpec& s) { return s.Sigma; })
        .def_readonly("band", &GmrfSpec::band)
        .def_property_readonly("dim", &GmrfSpec::dim)
        .def_property_readonly("shape", [](const GmrfSpec& s) {
            return std::make_tuple(s.shape.c, s.shape.l, s.shape.h, s.shape.w);
        });
    m.def("gmrf_build", &gmrf_build, py::arg("L"), py::arg("H"), py::arg("W"), py::arg("beta1"),
          py::arg("beta2"), py::arg("tau_diag"));
    m.def(
        "gmrf_sample",
        [](const GmrfSpec& spec, int n, std::uint64_t seed) {
            Rng rng = Rng::stream(seed, StreamRole::kOracle);
            return gmrf_sample(spec, n, rng);
        },
        py::arg("spec"), py::arg("n"), py::arg("seed") = 0);
    m.def(
        "gmrf_conditional_oracle",
        [](const GmrfSpec& spec, const std::vector<int>& observed_sites, const Eigen::VectorXd& pin,
           double sigma) {
            SiteMask mask(spec.shape.l, spec.shape.h, spec.shape.w);
            for (int s : observed_sites) mask.set(s, true);
            const auto c = gmrf_conditional_oracle(spec, mask, pin, sigma);
            return py::make_tuple(c.free_sites, c.mean, c.cov);
        },
        py::arg("spec"), py::arg("observed_sites"), py::arg("pin"), py::arg("sigma"));

    // ----- velocity models -----
    py::class_<VelocityModel, std::shared_ptr<VelocityModel>>(m, "VelocityModel")
        .def("velocity", &VelocityModel::velocity, py::arg("z"), py::arg("sigma"))
        .def(
            "clean_prediction",
            [](const VelocityModel& mdl, const Eigen::MatrixXd& z, double sigma) {
                return clean_prediction(mdl, z, sigma);
            },
            py::arg("z"), py::arg("sigma"))
        .def("input_vjp", &VelocityModel::input_vjp, py::arg("z"), py::arg("sigma"),
             py::arg("cotangent"))
        .def_property_readonly("has_input_gradient", &VelocityModel::has_input_gradient)
        .def_property_readonly("state_size",
                               [](const VelocityModel& mdl) { return mdl.shape().size(); });

    py::class_<GaussianModel, VelocityModel, std::shared_ptr<GaussianModel>>(m, "GaussianModel")
        .def(py::init<GmrfSpec>(), py::arg("spec"))
        .def("denoise_matrix", &GaussianModel::denoise_matrix, py::arg("sigma"),
             py::return_value_policy::copy)
        .def("posterior_cov", &GaussianModel::posterior_cov, py::arg("sigma"),
             py::return_value_policy::copy);

    py::class_<MlpModel, VelocityModel, std::shared_ptr<MlpModel>>(m, "MlpModel");
    m.def(
        "load_mlp",
        [](const std::string& path) { return std::make_shared<MlpModel>(load_weights(path)); },
        py::arg("path"));
    m.def(
        "train_mlp",
        [](int iterations, int batch, int hidden, int embed_dim, std::uint64_t seed,
           const std::string& precision) {
            TrainConfig cfg;
            cfg.iterations = iterations;
            cfg.batch = batch;
            cfg.hidden = hidden;
            cfg.embed_dim = embed_dim;
            cfg.precision = precision == "f64" ? TrainPrecision::kF64 : TrainPrecision::kF32;
            TrainOutcome out = train_mlp(cfg, seed);
            py::dict d;
            d["model"] = py::cast(std::make_shared<MlpModel>(out.net));
            d["final_loss"] = out.curve.back().loss;
            d["initial_loss"] = out.curve.front().loss;
            return d;
        },
        py::arg("iterations") = 20000, py::arg("batch") = 512, py::arg("hidden") = 256,
        py::arg("embed_dim") = 64, py::arg("seed") = 0, py::arg("precision") = "f32");
    m.def(
        "save_mlp",
        [](const MlpModel& model, const std::string& path) { save_weights(path, model.net()); },
        py::arg("model"), py::arg("path"));

    // ----- samplers -----
    m.def(
        "run_sampler",
        [](const VelocityModel& model, int steps, const std::vector<int>& observed_sites,
           const Eigen::VectorXd& values, double tau, const std::string& guidance_json,
           std::uint64_t seed, int n_chains, int chain_offset) {
            const Observation obs = make_observation(model.shape(), observed_sites, values, tau);
            const GuidanceSpec spec = spec_from_json_string(guidance_json, steps);
            RunOptions options;
            options.master_seed = seed;
            options.n_chains = n_chains;
            options.chain_offset = chain_offset;
            return run_result_to_dict(
                run_sampler(model, build_schedule(steps), obs, spec, options));
        },
        py::arg("model"), py::arg("steps"), py::arg("observed_sites"), py::arg("values"),
        py::arg("tau"), py::arg("guidance_json"), py::arg("seed") = 0, py::arg("n_chains") = 1,
        py::arg("chain_offset") = 0);
    m.def(
        "polyak_variance_ratio",
        [](const VelocityModel& model, const std::vector<int>& observed_sites,
           const Eigen::VectorXd& values, double tau, double sigma, int inner_iters, int repeats,
           const std::string& recon, std::uint64_t seed) {
            const Observation obs = make_observation(model.shape(), observed_sites, values, tau);
            const InnerRecon mode =
                recon == "posterior_sample" ? InnerRecon::kPosteriorSample : InnerRecon::kMean;
            return polyak_variance_ratio(model, obs, sigma, inner_iters, repeats, mode, seed);
        },
        py::arg("model"), py::arg("observed_sites"), py::arg("values"), py::arg("tau"),
        py::arg("sigma"), py::arg("inner_iters"), py::arg("repeats") = 100,
        py::arg("recon") = "posterior_sample", py::arg("seed") = 0);

    // ----- locality -----
    m.def(
        "partial_correlation_map",
        [](const Eigen::MatrixXd& samples, const std::tuple<int, int, int, int>& shape, int axis) {
            const Shape4 sh = shape_from_tuple(shape);
            if (samples.rows() != sh.size())
                throw std::invalid_argument("samples must be (size, N) for the given shape");
            std::vector<StateTensor> states;
            states.reserve(static_cast<std::size_t>(samples.cols()));
            for (Eigen::Index k = 0; k < samples.cols(); ++k)
                states.emplace_back(sh, samples.col(k));
            const LineStack stack = build_line_stack(states, static_cast<Axis>(axis));
            const PartialCorrelationMap map =
                partial_correlation_map(block_precision(stack), stack.rows());
            py::dict out;
            out["rho1"] = map.rho1;
            out["floor"] = map.floor;
            out["n_lines"] = static_cast<long long>(stack.rows());
            return out;
        },
        py::arg("samples"), py::arg("shape"), py::arg("axis"),
        "Top canonical partial correlations along one axis (0=L, 1=H, 2=W)");
    m.def(
        "eta_decay",
        [](const Eigen::MatrixXd& rho1, int r) {
            PartialCorrelationMap map;
            map.length = static_cast<int>(rho1.rows());
            map.rho1 = rho1;
            return eta_decay(map, r);
        },
        py::arg("rho1"), py::arg("r"));
    m.def("noise_floor", &noise_floor, py::arg("channels"), py::arg("n_lines"));
}
