"""Python smoke tests for the hctl extension module."""

import json
import math

import numpy as np
import pytest

hctl = pytest.importorskip("hctl")


def test_schedule():
    sig = hctl.build_schedule(50)
    assert len(sig) == 51
    assert sig[0] == 1.0 and sig[-1] == 0.0
    assert all(a > b for a, b in zip(sig, sig[1:]))


def test_checkerboard_support_and_modes():
    pts = hctl.checkerboard_sample(2000, seed=1)
    assert pts.shape == (2, 2000)
    assert hctl.manifold_hit(pts) == 1.0
    assert hctl.checkerboard_logdensity(0.5, 0.5) == pytest.approx(-math.log(8.0))
    assert hctl.checkerboard_logdensity(0.5, 1.5) == -math.inf
    modes = hctl.checkerboard_conditional_modes(0.5)
    assert sorted(c[1] for c in modes) == [-1.5, 0.5]


def test_posterior_oracle_balance():
    draws = hctl.checkerboard_posterior_oracle(0.5, 0.2, 4000, seed=2)
    report = hctl.posterior_hit(draws)
    assert report["posterior_rate"] == 1.0
    assert abs(report["mode_balance"] - 0.5) < 0.05


def test_gaussian_model_and_sampler():
    spec = hctl.gmrf_build(1, 2, 2, 0.2, 0.0, 1.8)
    assert spec.band == 1
    model = hctl.GaussianModel(spec)

    z = np.ones((spec.dim, 3))
    u = model.velocity(z, 0.5)
    assert u.shape == (spec.dim, 3)
    # Linearity of the exact backend.
    np.testing.assert_allclose(model.velocity(2.0 * z, 0.5), 2.0 * u, rtol=1e-12)

    guidance = json.dumps(
        {
            "variant": "h_control",
            "window": [0, 10],
            "j_max": 3,
            "nu": 1.0,
            "outer_mode": "soft",
            "outer_tau": 0.3,
        }
    )
    values = np.zeros(spec.dim)
    values[0] = 0.7
    run = hctl.run_sampler(model, 10, [0], values, 0.3, guidance, seed=4, n_chains=8)
    assert run["samples"].shape == (spec.dim, 8)
    # 1 outer + 3 inner forwards per windowed step.
    assert run["nfe_per_chain"] == 10 * 4
    assert len(run["diagnostics"]) == 10


def test_energy_distance_zero_on_self():
    x = np.random.default_rng(0).normal(size=(2, 300))
    assert abs(hctl.energy_distance(x, x)) < 1e-12


def test_locality_pipeline():
    spec = hctl.gmrf_build(1, 4, 4, 0.25, 0.0, 2.4)
    samples = hctl.gmrf_sample(spec, 2000, seed=5)
    out = hctl.partial_correlation_map(samples, (1, 1, 4, 4), axis=2)
    rho = out["rho1"]
    assert rho.shape == (4, 4)
    assert np.allclose(np.diag(rho), 1.0, atol=1e-8)
    assert hctl.eta_decay(rho, 0) == pytest.approx(1.0)
    assert out["floor"] == pytest.approx(hctl.noise_floor(1, out["n_lines"]))


def test_determinism():
    spec = hctl.gmrf_build(1, 1, 4, 0.3, 0.0, 2.0)
    model = hctl.GaussianModel(spec)
    guidance = json.dumps({"variant": "none"})
    a = hctl.run_sampler(model, 20, [], np.zeros(4), 0.2, guidance, seed=9, n_chains=4)
    b = hctl.run_sampler(model, 20, [], np.zeros(4), 0.2, guidance, seed=9, n_chains=4)
    np.testing.assert_array_equal(a["samples"], b["samples"])
