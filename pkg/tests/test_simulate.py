import numpy as np
import pytest

from skwave.coefficients import HolderDrift, HolderMultiplier
from skwave.modes import ModePropagator, propagate, step_kernel
from skwave.simulate import (
    HeatStepper,
    PairStepper,
    PhaseState,
    SimConfig,
    SimulationError,
    WaveStepper,
    run_blocks,
    run_lockstep,
    simulate_controlled_pair,
    simulate_heat,
    simulate_wave,
    stochastic_convolution,
)
from skwave.noise import NoiseStream
from skwave.spectral import ModeVector


def phase(cfg, u, v=None):
    op = cfg.op
    v = np.zeros(cfg.N) if v is None else v
    return PhaseState(ModeVector(np.asarray(u, float), op), ModeVector(np.asarray(v, float), op), 0.0)


@pytest.mark.parametrize("zeta", [0, 1])
def test_linear_deterministic_is_exact(zeta):
    cfg = SimConfig(N=8, dt=0.01, T=0.5, mu=0.05, lam=0.3, zeta=zeta, record_every=10)
    rng = np.random.default_rng(0)
    u0, v0 = rng.normal(size=(2, 8))
    path = simulate_wave(cfg, None, None, phase(cfg, u0, v0), NoiseStream(0))
    p = ModePropagator(cfg.mu, zeta, cfg.op.eigenvalues + cfg.lam)
    for z in path:
        fu, fv = propagate(p, u0, v0, z.t)
        np.testing.assert_allclose(z.u_modes.coeffs, fu, atol=1e-11)
        np.testing.assert_allclose(z.v_modes.coeffs, fv, atol=1e-10)


def test_record_times_include_final():
    cfg = SimConfig(N=4, dt=0.1, T=1.0, record_every=3)
    assert cfg.record_steps.tolist() == [0, 3, 6, 9, 10]
    np.testing.assert_allclose(cfg.record_times[-1], 1.0)


@pytest.mark.parametrize(
    "kwargs",
    [dict(dt=0.0), dict(T=0.15, dt=0.1), dict(mu=0.0), dict(zeta=2), dict(N=8, G=4), dict(lam=-1.0)],
)
def test_config_rejects(kwargs):
    with pytest.raises(ValueError):
        SimConfig(**kwargs)


def ensemble(cfg, steppers, M, v0=None):
    return run_lockstep(cfg, steppers, np.arange(M), np.zeros(cfg.N), np.zeros(cfg.N) if v0 is None else v0)


@pytest.mark.parametrize("zeta", [0, 1])
def test_ito_variance_of_convolution(zeta):
    cfg = SimConfig(N=4, dt=0.02, T=1.0, mu=0.1, zeta=zeta, seed=11, record_every=50)
    op = cfg.op
    st = WaveStepper(op, 4, cfg.G, cfg.dt, cfg.mu, zeta, weights=np.ones((1, 1, 4)))
    M = 4000
    u = ensemble(cfg, {"w": st}, M)["w.u"][:, -1]
    exact = step_kernel(ModePropagator(cfg.mu, zeta, op.eigenvalues), cfg.T).noise_cov[:, 0, 0]
    # sample variance of Gaussians: sd of estimate is var * sqrt(2/M)
    assert np.all(np.abs(u.var(axis=0) - exact) < 5 * exact * np.sqrt(2 / M))
    assert np.all(np.abs(u.mean(axis=0)) < 5 * np.sqrt(exact / M))


def test_heat_variance():
    cfg = SimConfig(N=3, dt=0.05, T=2.0, seed=3, record_every=40)
    g = HolderMultiplier(form_tag="constant", floor=1.0)
    st = HeatStepper(cfg.op, 3, cfg.G, cfg.dt, g=g)
    M = 4000
    u = ensemble(cfg, {"h": st}, M)["h.u"][:, -1]
    gam = cfg.op.eigenvalues
    exact = -np.expm1(-2 * gam * cfg.T) / (2 * gam)
    assert np.all(np.abs(u.var(axis=0) - exact) < 5 * exact * np.sqrt(2 / M))


def test_heat_shares_channel_zero_with_wave():
    # as mu -> 0 with damping the wave path tracks the heat path driven by the same noise
    cfg = SimConfig(N=4, dt=1e-3, T=0.2, mu=1e-5, zeta=1, seed=5, record_every=200)
    g = HolderMultiplier(form_tag="constant", floor=1.0)
    op = cfg.op
    out = ensemble(cfg, {"w": WaveStepper(op, 4, cfg.G, cfg.dt, cfg.mu, 1, g=g), "h": HeatStepper(op, 4, cfg.G, cfg.dt, g=g)}, 50)
    gap = np.abs(out["w.u"][:, -1] - out["h.u"][:, -1]).max()
    indep = ensemble(SimConfig(**{**cfg.__dict__, "seed": 6}), {"h": HeatStepper(op, 4, cfg.G, cfg.dt, g=g)}, 50)
    assert gap < 0.05 * np.abs(out["h.u"][:, -1] - indep["h.u"][:, -1]).max()


def test_substeps_aggregate_linear_noise_exactly():
    cfg = SimConfig(N=5, dt=0.01, T=0.4, mu=0.2, zeta=1, seed=2, record_every=40)
    op = cfg.op
    w = np.ones((1, 1, 5))
    fine = WaveStepper(op, 5, cfg.G, cfg.dt, cfg.mu, 1, weights=w)
    coarse = WaveStepper(op, 5, cfg.G, cfg.dt, cfg.mu, 1, weights=w, substeps=4)
    out = ensemble(cfg, {"f": fine, "c": coarse}, 6)
    np.testing.assert_allclose(out["c.u"][:, -1], out["f.u"][:, -1], atol=1e-12)
    np.testing.assert_allclose(out["c.v"][:, -1], out["f.v"][:, -1], atol=1e-10)


def test_heat_substeps_aggregate_exactly():
    cfg = SimConfig(N=5, dt=0.01, T=0.4, seed=2, record_every=40)
    op = cfg.op
    w = np.ones((1, 1, 5))
    out = ensemble(cfg, {"f": HeatStepper(op, 5, cfg.G, cfg.dt, weights=w), "c": HeatStepper(op, 5, cfg.G, cfg.dt, weights=w, substeps=8)}, 6)
    np.testing.assert_allclose(out["c.u"][:, -1], out["f.u"][:, -1], atol=1e-13)


def test_single_sample_matches_batch():
    cfg = SimConfig(N=6, dt=0.01, T=0.3, mu=0.1, seed=9, record_every=30)
    g = HolderMultiplier(beta=0.5, floor=0.5)
    b = HolderDrift(alpha=0.5)
    z0 = phase(cfg, np.eye(6)[0] * 0.5)
    path = simulate_wave(cfg, b, g, z0, NoiseStream(9, 3))
    st = WaveStepper(cfg.op, 6, cfg.G, cfg.dt, cfg.mu, 1, 0.0, b, g)
    out = run_lockstep(cfg, {"w": st}, [1, 3], z0.u_modes.coeffs, np.zeros(6))
    np.testing.assert_allclose(path[-1].u_modes.coeffs, out["w.u"][1, -1], atol=1e-13)
    again = simulate_wave(cfg, b, g, z0, NoiseStream(9, 3))
    np.testing.assert_array_equal(again[-1].u_modes.coeffs, path[-1].u_modes.coeffs)


class _Task:
    def __init__(self, cfg):
        self.cfg = cfg

    def __call__(self, ids):
        cfg = self.cfg
        st = WaveStepper(cfg.op, cfg.N, cfg.G, cfg.dt, cfg.mu, 1, 0.0, HolderDrift(alpha=0.5), HolderMultiplier(beta=0.5, floor=0.5))
        return run_lockstep(cfg, {"w": st}, ids, np.eye(cfg.N)[0] * 0.5, np.zeros(cfg.N))


def test_blocks_are_worker_invariant():
    cfg = SimConfig(N=6, dt=0.01, T=0.2, mu=0.1, seed=4, record_every=20)
    one = run_blocks(_Task(cfg), 10, block_size=3, workers=1)
    two = run_blocks(_Task(cfg), 10, block_size=3, workers=2)
    for k in one:
        np.testing.assert_array_equal(one[k], two[k])
    other = run_blocks(_Task(cfg), 10, block_size=7)
    np.testing.assert_allclose(other["w.u"], one["w.u"], atol=1e-12)


def test_chunk_boundaries_do_not_change_noise():
    # 300 steps crosses the 256-step noise chunk
    cfg = SimConfig(N=3, dt=0.001, T=0.3, mu=0.1, seed=1, record_every=300)
    w = np.ones((1, 1, 3))
    a = ensemble(cfg, {"w": WaveStepper(cfg.op, 3, cfg.G, cfg.dt, cfg.mu, 1, weights=w)}, 2)
    b = ensemble(cfg, {"w": WaveStepper(cfg.op, 3, cfg.G, cfg.dt, cfg.mu, 1, weights=w, substeps=3)}, 2)
    np.testing.assert_allclose(a["w.u"][:, -1], b["w.u"][:, -1], atol=1e-12)


def test_pair_identical_coefficients():
    cfg = SimConfig(N=8, dt=0.01, T=0.5, mu=0.1, seed=1, record_every=10)
    g = HolderMultiplier(beta=0.5, floor=0.5)
    b = HolderDrift(alpha=0.5)
    run = simulate_controlled_pair(cfg, b, g, g, 0.1, 5.0, phase(cfg, np.eye(8)[0] * 0.5), NoiseStream(1))
    assert run.tau == cfg.T
    assert run.girsanov_cost == 0.0
    np.testing.assert_array_equal(run.u, run.u_aux)


def test_pair_without_control_has_no_cost():
    cfg = SimConfig(N=8, dt=0.01, T=0.5, mu=0.1, seed=1, record_every=1)
    g = HolderMultiplier(beta=0.5, floor=0.5)
    gn = HolderMultiplier(beta=1.0, floor=0.5)
    run = simulate_controlled_pair(cfg, None, g, gn, 10.0, 0.0, phase(cfg, np.eye(8)[0]), NoiseStream(1))
    assert run.girsanov_cost == 0.0
    assert run.dist.max() > 0


def test_pair_stopping_and_cost_ceiling():
    cfg = SimConfig(N=8, dt=0.005, T=1.0, mu=0.1, seed=2, record_every=1)
    g = HolderMultiplier(beta=0.5, floor=0.5)
    gn = HolderMultiplier(beta=1.0, floor=0.5, scale=2.0)
    threshold, lam = 0.02, 4.0
    ids = np.arange(20)
    st = PairStepper(cfg.op, 8, cfg.G, cfg.dt, cfg.mu, 1, None, g, None, gn, threshold, lam)
    out = run_lockstep(cfg, {"p": st}, ids, np.eye(8)[0], np.zeros(8))
    tau, cost, dist = out["p.tau"], out["p.cost"], out["p.dist"]
    assert np.any(tau < cfg.T)
    for i in range(len(ids)):
        m = int(round(tau[i] / cfg.dt))
        assert np.all(dist[i, :m] < threshold)
        if tau[i] < cfg.T:
            assert dist[i, m] >= threshold
    # |ctrl| < lam * threshold while active, divided by g_n >= floor
    ceiling = (lam * threshold) ** 2 * cfg.T / gn.floor**2
    assert np.all(cost <= ceiling * (1 + 1e-9))
    assert np.all(cost > 0)


def test_controlled_pair_validates():
    cfg = SimConfig(N=4, dt=0.1, T=0.2)
    g = HolderMultiplier()
    with pytest.raises(ValueError):
        simulate_controlled_pair(cfg, None, g, g, 0.0, 1.0, phase(cfg, np.zeros(4)), NoiseStream(0))


def test_heat_front_end():
    cfg = SimConfig(N=4, dt=0.01, T=0.1, seed=0, record_every=5)
    path = simulate_heat(cfg, None, HolderMultiplier(), ModeVector(np.ones(4), cfg.op), NoiseStream(0))
    assert len(path) == 3 and all(np.isfinite(p.coeffs).all() for p in path)


def test_convolution_front_end_is_linear_in_weights():
    cfg = SimConfig(N=4, dt=0.01, T=0.1, seed=0, record_every=10)
    a = stochastic_convolution(cfg, 1.0, NoiseStream(0))
    b = stochastic_convolution(cfg, 3.0, NoiseStream(0))
    np.testing.assert_allclose(b[-1].coeffs, 3 * a[-1].coeffs, rtol=1e-12)
    assert np.all(a[0].coeffs == 0)


@pytest.mark.parametrize("mu", [1e-4, 1e-1])
def test_stiff_configurations_stay_finite(mu):
    cfg = SimConfig(N=64, dt=1e-2, T=0.5, mu=mu, seed=0, record_every=50)
    g = HolderMultiplier(beta=0.5, floor=0.5)
    path = simulate_wave(cfg, HolderDrift(alpha=0.5), g, phase(cfg, np.eye(64)[0] * 0.5), NoiseStream(0))
    assert all(np.isfinite(z.u_modes.coeffs).all() for z in path)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blowup_raises():
    cfg = SimConfig(N=4, dt=0.1, T=2.0, mu=0.1, seed=0)
    with pytest.raises(SimulationError):
        simulate_wave(cfg, lambda u, t=0.0: 1e200 * np.exp(np.abs(u)), None, phase(cfg, np.ones(4)), NoiseStream(0))
