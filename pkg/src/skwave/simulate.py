"""Exponential time stepping for the stochastic wave and heat equations.

All integrators advance a batch of independent samples together.  Per step,
each mode is moved by its exact linear propagator; the drift is frozen at the
left end of the step and integrated against the exact forcing kernel; noise is
drawn from the exact one-step covariance and modulated by ``g(u)`` in physical
space.

Every stepper consumes the same three standard normals ``xi[c, k]`` per mode
and step.  Channel 0 is the standardised heat-kernel integral, so a heat
equation and any number of wave equations (different masses or shifts) run in
lockstep are driven by one Brownian path.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .modes import ModePropagator, heat_kernel, step_kernel
from .noise import NoiseStream, block_normals
from .spectral import ModeVector, SpectralOperator, grid_norm, make_operator, to_physical, to_spectral

CHANNELS = 3
DEFAULT_BLOCK = 25
_CHUNK = 256


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    N: int = 32
    G: int | None = None
    dt: float = 1e-3
    T: float = 1.0
    mu: float = 0.1
    lam: float = 0.0
    zeta: int = 1
    seed: int = 0
    record_every: int = 1
    family: str = "dirichlet_laplacian"
    eta0: float | None = None
    scale: float = 1.0

    def __post_init__(self):
        if self.G is None:
            object.__setattr__(self, "G", 4 * self.N)
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.G < self.N:
            raise ValueError("G must be >= N")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.T >= self.dt:
            raise ValueError("T must be >= dt")
        n = self.T / self.dt
        if abs(n - round(n)) > 1e-9 * n:
            raise ValueError("T must be a multiple of dt")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.zeta not in (0, 1):
            raise ValueError("zeta must be 0 or 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def record_steps(self) -> np.ndarray:
        steps = list(range(0, self.n_steps, self.record_every))
        return np.array(steps + [self.n_steps])

    @property
    def record_times(self) -> np.ndarray:
        return self.record_steps * self.dt

    @property
    def op(self) -> SpectralOperator:
        return make_operator(self.family, self.N, self.eta0, self.scale)


@dataclass
class PhaseState:
    u_modes: ModeVector
    v_modes: ModeVector
    t: float

    def __post_init__(self):
        if self.u_modes.N != self.v_modes.N:
            raise ValueError("u and v must have the same number of modes")


def _is_zero(b) -> bool:
    return b is None or bool(getattr(b, "is_zero", False))


def _modulate(g, xi, u_phys, N, G):
    """``<g(u) xi_c, e_k>`` for each channel; ``xi`` has shape (B, C, N)."""
    if g is None:
        return None
    if getattr(g, "is_constant", False):
        return g(np.zeros(1))[0] * xi
    phys = to_physical(xi, G) * g(u_phys)[:, None, :]
    return to_spectral(phys, N)


class WaveStepper:
    """Damped or undamped wave equation in mode coordinates.

    ``g=None`` switches noise off; ``weights`` replaces ``g`` by a fixed
    per-mode diagonal multiplier.  With ``substeps=r`` the stepper advances
    ``r`` fine noise steps at once, with coefficients frozen over the coarse
    step and the noise aggregated exactly.
    """

    def __init__(self, op, N, G, dt, mu, zeta, lam=0.0, b=None, g=None, weights=None, substeps=1):
        self.N, self.G, self.dt = N, G, dt
        self.b, self.g, self.weights = b, g, weights
        self.substeps = substeps
        gamma = op.eigenvalues[:N] + lam
        prop = ModePropagator(mu, zeta, gamma)
        coarse = step_kernel(prop, dt * substeps)
        self.phi = coarse.phi
        self.forcing = coarse.forcing
        fine = step_kernel(prop, dt) if substeps > 1 else coarse
        self.rows = fine.noise_factor()
        self.fine_phi = fine.phi
        self.u = self.v = None

    def start(self, u0, v0):
        self.u = np.array(u0, dtype=float)
        self.v = np.array(v0, dtype=float)
        self.alive = np.ones(len(self.u), bool)

    def _noise(self, xi, u_phys):
        if self.weights is not None:
            return self.weights * xi
        return _modulate(self.g, xi, u_phys, self.N, self.G)

    def _needs_phys(self):
        nonconst = self.g is not None and not getattr(self.g, "is_constant", False)
        return nonconst or not _is_zero(self.b)

    def step(self, xis, extra=None, u_phys=None):
        """Advance one (coarse) step; ``xis`` has shape (B, substeps, C, N)."""
        u, v = self.u, self.v
        if u_phys is None and self._needs_phys():
            u_phys = to_physical(u, self.G)
        force = None if _is_zero(self.b) else to_spectral(self.b(u_phys), self.N)
        if extra is not None:
            force = extra if force is None else force + extra
        phi = self.phi
        un = phi[:, 0, 0] * u + phi[:, 0, 1] * v
        vn = phi[:, 1, 0] * u + phi[:, 1, 1] * v
        if force is not None:
            un += self.forcing[:, 0] * force
            vn += self.forcing[:, 1] * force
        if self.g is not None or self.weights is not None:
            nu = nv = 0.0
            for j in range(self.substeps):
                eta = self._noise(xis[:, j], u_phys)
                au = np.einsum("bcn,nc->bn", eta, self.rows[:, 0, :])
                av = np.einsum("bcn,nc->bn", eta, self.rows[:, 1, :])
                if j:
                    fp = self.fine_phi
                    nu, nv = fp[:, 0, 0] * nu + fp[:, 0, 1] * nv, fp[:, 1, 0] * nu + fp[:, 1, 1] * nv
                nu, nv = nu + au, nv + av
            un += nu
            vn += nv
        self.u, self.v = un, vn
        self._check()

    def _check(self):
        bad = ~(np.isfinite(self.u).all(axis=1) & np.isfinite(self.v).all(axis=1))
        if bad.any():
            self.alive &= ~bad
            self.u[bad] = 0.0
            self.v[bad] = 0.0

    def snapshot(self):
        return {"u": self.u.copy(), "v": self.v.copy()}


class HeatStepper:
    """Stochastic heat equation ``du = (A u + b(u)) dt + g(u) dW``."""

    def __init__(self, op, N, G, dt, b=None, g=None, lam=0.0, weights=None, substeps=1):
        self.N, self.G, self.dt = N, G, dt
        self.b, self.g, self.weights = b, g, weights
        self.substeps = substeps
        gamma = op.eigenvalues[:N] + lam
        self.decay, self.forcing, _ = heat_kernel(gamma, dt * substeps)
        self.fine_decay, _, var = heat_kernel(gamma, dt)
        self.sd = np.sqrt(var)

    def start(self, u0, v0=None):
        self.u = np.array(u0, dtype=float)
        self.alive = np.ones(len(self.u), bool)

    def step(self, xis, extra=None, u_phys=None):
        u = self.u
        nonconst = self.g is not None and not getattr(self.g, "is_constant", False)
        if u_phys is None and (nonconst or not _is_zero(self.b)):
            u_phys = to_physical(u, self.G)
        un = self.decay * u
        if not _is_zero(self.b):
            un += self.forcing * to_spectral(self.b(u_phys), self.N)
        if extra is not None:
            un += self.forcing * extra
        if self.g is not None or self.weights is not None:
            acc = 0.0
            for j in range(self.substeps):
                xi0 = xis[:, j, :1]
                eta = self.weights * xi0 if self.weights is not None else _modulate(self.g, xi0, u_phys, self.N, self.G)
                acc = (self.fine_decay * acc if j else 0.0) + self.sd * eta[:, 0]
            un += acc
        self.u = un
        bad = ~np.isfinite(self.u).all(axis=1)
        if bad.any():
            self.alive &= ~bad
            self.u[bad] = 0.0

    def snapshot(self):
        return {"u": self.u.copy()}


class PairStepper:
    """Wave solution ``u`` and its controlled approximation ``u_n``.

    Both use the unshifted propagators and the same noise.  While active, the
    control ``lam_c (u - u_n)`` enters ``u_n`` as forcing; the run stops being
    active at the first grid time where ``|u - u_n|_H >= threshold``.
    """

    def __init__(self, op, N, G, dt, mu, zeta, b, g, b_n, g_n, threshold, lam_c):
        self.main = WaveStepper(op, N, G, dt, mu, zeta, 0.0, b, g)
        self.aux = WaveStepper.__new__(WaveStepper)
        self.aux.__dict__.update(self.main.__dict__)
        self.aux.b, self.aux.g = b_n, g_n
        self.g_n = g_n
        self.threshold, self.lam_c, self.dt = threshold, lam_c, dt
        self.N, self.G = N, G

    def start(self, u0, v0):
        self.main.start(u0, v0)
        self.aux.start(u0, v0)
        B = len(self.main.u)
        self.active = np.ones(B, bool)
        self.tau = np.full(B, np.nan)
        self.cost = np.zeros(B)
        self.m = 0

    @property
    def alive(self):
        return self.main.alive & self.aux.alive

    def _update_stop(self):
        d = self.main.u - self.aux.u
        dist = np.sqrt(np.sum(d * d, axis=1))
        hit = self.active & (dist >= self.threshold)
        self.tau[hit] = self.m * self.dt
        self.active &= ~hit
        return d, dist

    def step(self, xis, extra=None):
        d, _ = self._update_stop()
        ctrl = None
        if self.lam_c > 0 and self.active.any():
            ctrl = self.lam_c * d * self.active[:, None]
            aux_phys = to_physical(self.aux.u, self.G)
            w = to_physical(ctrl, self.G) / self.g_n(aux_phys)
            self.cost += self.dt * grid_norm(w) ** 2 * self.active
            self.main.step(xis)
            self.aux.step(xis, extra=ctrl, u_phys=aux_phys)
        else:
            self.main.step(xis)
            self.aux.step(xis)
        self.m += 1

    def finish(self, T):
        self._update_stop()
        self.tau[np.isnan(self.tau)] = T

    def snapshot(self):
        d = self.main.u - self.aux.u
        return {"u": self.main.u.copy(), "u_aux": self.aux.u.copy(), "dist": np.sqrt(np.sum(d * d, axis=1))}


def run_lockstep(cfg: SimConfig, steppers: dict, stream_ids, u0, v0) -> dict:
    """Drive several steppers with the same noise; returns recorded arrays.

    Output maps ``"<name>.<field>"`` to arrays of shape (B, n_records, ...),
    plus ``"<name>.alive"`` masks and pair statistics.
    """
    ids = np.asarray(stream_ids, dtype=np.int64)
    B, N = len(ids), cfg.N
    u0 = np.broadcast_to(np.asarray(u0, dtype=float), (B, N))
    v0 = np.broadcast_to(np.asarray(v0, dtype=float), (B, N))
    for st in steppers.values():
        st.start(u0, v0)
    rec_steps = set(int(s) for s in cfg.record_steps)
    records = {name: [st.snapshot()] for name, st in steppers.items()}
    n = cfg.n_steps
    period = int(np.lcm.reduce([getattr(st, "substeps", 1) for st in steppers.values()]))
    chunk = max(period, _CHUNK - _CHUNK % period)
    for m0 in range(0, n, chunk):
        nc = min(chunk, n - m0)
        xi_all = block_normals(cfg.seed, ids, m0, nc, CHANNELS * N).reshape(B, nc, CHANNELS, N)
        for j in range(nc):
            m = m0 + j
            for st in steppers.values():
                r = getattr(st, "substeps", 1)
                if (m + 1) % r == 0:
                    st.step(xi_all[:, j + 1 - r : j + 1])
            if m + 1 in rec_steps:
                for name, st in steppers.items():
                    records[name].append(st.snapshot())
    out = {}
    for name, st in steppers.items():
        if isinstance(st, PairStepper):
            st.finish(cfg.T)
            out[f"{name}.tau"] = st.tau.copy()
            out[f"{name}.cost"] = st.cost.copy()
        out[f"{name}.alive"] = st.alive.copy()
        for key in records[name][0]:
            out[f"{name}.{key}"] = np.stack([r[key] for r in records[name]], axis=1)
    return out


def run_blocks(task: Callable, M: int, block_size: int = DEFAULT_BLOCK, workers: int = 1) -> dict:
    """Evaluate ``task(stream_ids)`` on fixed sample blocks and concatenate.

    Block boundaries depend only on ``M`` and ``block_size``, so the output is
    bit-identical for any worker count.
    """
    blocks = [np.arange(s, min(s + block_size, M)) for s in range(0, M, block_size)]
    if workers > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(blocks))) as ex:
            parts = list(ex.map(task, blocks))
    else:
        parts = [task(b) for b in blocks]
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


# --- single-sample front ends ----------------------------------------------


def _single(cfg, noise: NoiseStream, stepper, u0, v0):
    cfg1 = SimConfig(**{**cfg.__dict__, "seed": noise.seed})
    out = run_lockstep(cfg1, {"s": stepper}, [noise.stream_id], u0, v0)
    if not out["s.alive"][0]:
        raise SimulationError("state became non-finite; sample aborted")
    return out


def simulate_wave(cfg: SimConfig, b, g, z0: PhaseState, noise: NoiseStream) -> list[PhaseState]:
    op = cfg.op
    st = WaveStepper(op, cfg.N, cfg.G, cfg.dt, cfg.mu, cfg.zeta, cfg.lam, b, g)
    out = _single(cfg, noise, st, z0.u_modes.coeffs, z0.v_modes.coeffs)
    return [
        PhaseState(ModeVector(u, op), ModeVector(v, op), float(t))
        for u, v, t in zip(out["s.u"][0], out["s.v"][0], cfg.record_times)
    ]


def simulate_heat(cfg: SimConfig, b, g, u0: ModeVector, noise: NoiseStream) -> list[ModeVector]:
    op = cfg.op
    st = HeatStepper(op, cfg.N, cfg.G, cfg.dt, b, g, cfg.lam)
    out = _single(cfg, noise, st, u0.coeffs, np.zeros(cfg.N))
    return [ModeVector(u, op) for u in out["s.u"][0]]


@dataclass
class CoupledRun:
    """One controlled pair: paths at record times, stopping time and cost."""

    times: np.ndarray
    u: np.ndarray
    u_aux: np.ndarray
    tau: float
    girsanov_cost: float
    dist: np.ndarray = field(repr=False, default=None)


def simulate_controlled_pair(cfg, b, g, g_n, threshold, lambda_control, z0: PhaseState, noise: NoiseStream, b_n=None) -> CoupledRun:
    if lambda_control < 0 or threshold <= 0:
        raise ValueError("need lambda_control >= 0 and threshold > 0")
    st = PairStepper(cfg.op, cfg.N, cfg.G, cfg.dt, cfg.mu, cfg.zeta, b, g, b if b_n is None else b_n, g_n, threshold, lambda_control)
    out = _single(cfg, noise, st, z0.u_modes.coeffs, z0.v_modes.coeffs)
    return CoupledRun(cfg.record_times, out["s.u"][0], out["s.u_aux"][0], float(out["s.tau"][0]), float(out["s.cost"][0]), out["s.dist"][0])


def stochastic_convolution(cfg: SimConfig, phi_mode_weights, noise: NoiseStream) -> list[ModeVector]:
    """First component of the wave stochastic convolution with diagonal ``Phi``."""
    op = cfg.op
    w = np.broadcast_to(np.asarray(phi_mode_weights, dtype=float), (cfg.N,))
    st = WaveStepper(op, cfg.N, cfg.G, cfg.dt, cfg.mu, cfg.zeta, cfg.lam, weights=w[None, None, :])
    out = _single(cfg, noise, st, np.zeros(cfg.N), np.zeros(cfg.N))
    return [ModeVector(u, op) for u in out["s.u"][0]]
