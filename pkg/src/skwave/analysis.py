"""Monte Carlo estimators over path ensembles.

Ensembles are produced block by block with :func:`skwave.simulate.run_blocks`
and are always indexed by stream id, so estimates computed on different
parameter values of the same ensemble are paired (common random numbers).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .simulate import (
    DEFAULT_BLOCK,
    HeatStepper,
    PairStepper,
    SimConfig,
    SimulationError,
    WaveStepper,
    run_blocks,
    run_lockstep,
)
from .spectral import SpectralOperator

SURVIVAL = 0.9


@dataclass
class PathEnsemble:
    """``samples[i, j]`` are the mode coefficients of sample ``i`` at ``times[j]``."""

    times: np.ndarray
    samples: np.ndarray
    stream_ids: np.ndarray
    seed: int = 0
    fingerprint: str = ""
    alive: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 3 or self.samples.shape[0] < 1:
            raise ValueError("samples must have shape (M >= 1, n_times, N)")
        if self.samples.shape[1] != len(self.times):
            raise ValueError("samples and times disagree")
        if self.alive is None:
            self.alive = np.ones(self.samples.shape[0], bool)

    @property
    def M(self) -> int:
        return self.samples.shape[0]

    @property
    def N(self) -> int:
        return self.samples.shape[2]


def sup_path_distance(a, b, times_a=None, times_b=None):
    """``max_t |a(t) - b(t)|_H`` capped at 1; batches over leading axes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if times_a is not None and times_b is not None and not np.array_equal(times_a, times_b):
        raise ValueError("trajectories are recorded on different time grids")
    if a.shape != b.shape:
        raise ValueError(f"trajectory shapes differ: {a.shape} vs {b.shape}")
    d = np.sqrt(np.sum((a - b) ** 2, axis=-1))
    return np.minimum(np.max(d, axis=-1), 1.0)


def mean_se(x):
    x = np.asarray(x, dtype=float)
    n = x.size
    se = float(np.std(x, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return float(np.mean(x)), se


def wasserstein_upper_bound(a: PathEnsemble, b: PathEnsemble):
    """Mean capped sup-distance over samples paired by stream id, with SE."""
    if not np.array_equal(a.stream_ids, b.stream_ids) or a.seed != b.seed:
        raise ValueError("ensembles are not paired by stream id")
    d = sup_path_distance(a.samples, b.samples, a.times, b.times)
    keep = a.alive & b.alive
    return mean_se(d[keep])


def check_survival(alive, what="simulation"):
    frac = float(np.mean(alive))
    if frac < SURVIVAL:
        raise SimulationError(f"{what}: only {frac:.1%} of samples survived (need {SURVIVAL:.0%})")
    return frac


# --- lambda scaling of the stochastic convolution ---------------------------


@dataclass
class ScalingFit:
    lambdas: np.ndarray
    estimates: np.ndarray
    stderr: np.ndarray
    slope: float
    intercept: float
    p: float
    eta: float
    M: int

    @property
    def predicted_slope(self) -> float:
        return -self.eta * self.p / 2.0

    @property
    def strictly_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.estimates) < 0))

    def slope_ok(self, threshold: float) -> bool:
        return self.slope <= threshold


def fit_scaling(lambdas, estimates, stderr, p, eta, M) -> ScalingFit:
    lambdas = np.asarray(lambdas, dtype=float)
    estimates = np.asarray(estimates, dtype=float)
    if lambdas.size < 2:
        raise ValueError("a scaling fit needs at least two lambda values")
    slope, intercept = np.polyfit(np.log(lambdas), np.log(estimates), 1)
    return ScalingFit(lambdas, estimates, np.asarray(stderr, dtype=float), float(slope), float(intercept), p, eta, M)


@dataclass(frozen=True)
class ConvolutionTask:
    """Per-sample ``sup_t |Pi_1 Gamma(t)|_H^p`` for each lambda, same noise."""

    cfg: SimConfig
    op: SpectralOperator
    mu: float
    zeta: int
    lambdas: tuple
    p: float
    weight: float = 1.0

    def __call__(self, ids):
        N = self.cfg.N
        w = np.full((1, 1, N), self.weight)
        steppers = {
            f"l{i}": WaveStepper(self.op, N, self.cfg.G, self.cfg.dt, self.mu, self.zeta, lam, weights=w)
            for i, lam in enumerate(self.lambdas)
        }
        out = run_lockstep(self.cfg, steppers, ids, 0.0, 0.0)
        stat = np.stack([np.max(np.sum(out[f"l{i}.u"] ** 2, axis=-1), axis=1) ** (self.p / 2) for i in range(len(self.lambdas))], axis=1)
        alive = np.all(np.stack([out[f"l{i}.alive"] for i in range(len(self.lambdas))]), axis=0)
        return {"stat": stat, "alive": alive}


def convolution_scaling_study(op, mu, zeta, p, lambda_grid, M, cfg: SimConfig, eta=None, weight=1.0, workers=1, block_size=DEFAULT_BLOCK) -> ScalingFit:
    lambda_grid = tuple(float(x) for x in lambda_grid)
    if len(lambda_grid) < 2:
        raise ValueError("a scaling fit needs at least two lambda values")
    task = ConvolutionTask(cfg, op, mu, zeta, lambda_grid, p, weight)
    out = run_blocks(task, M, block_size, workers)
    check_survival(out["alive"], "convolution scaling")
    stat = out["stat"][out["alive"]]
    est = stat.mean(axis=0)
    se = stat.std(axis=0, ddof=1) / np.sqrt(len(stat))
    return fit_scaling(lambda_grid, est, se, p, op.eta0 if eta is None else eta, M)


# --- small-mass limit --------------------------------------------------------


@dataclass(frozen=True)
class SKTask:
    """Heat equation plus one damped wave per mass, all on one noise path."""

    cfg: SimConfig
    op: SpectralOperator
    b: object
    g: object
    mu_grid: tuple
    u0: np.ndarray
    v0: np.ndarray

    def __call__(self, ids):
        c = self.cfg
        steppers = {"heat": HeatStepper(self.op, c.N, c.G, c.dt, self.b, self.g)}
        for i, mu in enumerate(self.mu_grid):
            steppers[f"w{i}"] = WaveStepper(self.op, c.N, c.G, c.dt, mu, 1, 0.0, self.b, self.g)
        out = run_lockstep(c, steppers, ids, self.u0, self.v0)
        res = {"heat": out["heat.u"], "heat.alive": out["heat.alive"]}
        for i in range(len(self.mu_grid)):
            res[f"w{i}"] = out[f"w{i}.u"]
            res[f"w{i}.alive"] = out[f"w{i}.alive"]
        return res


def sk_ensembles(op, b, g, mu_grid, cfg: SimConfig, M, u0=None, v0=None, workers=1, block_size=DEFAULT_BLOCK):
    """Heat ensemble and one wave ensemble per mass, paired by stream id."""
    u0 = np.zeros(cfg.N) if u0 is None else np.asarray(u0, dtype=float)
    v0 = np.zeros(cfg.N) if v0 is None else np.asarray(v0, dtype=float)
    task = SKTask(cfg, op, b, g, tuple(mu_grid), u0, v0)
    out = run_blocks(task, M, block_size, workers)
    ids = np.arange(M)
    times = cfg.record_times
    heat = PathEnsemble(times, out["heat"], ids, cfg.seed, alive=out["heat.alive"])
    waves = [PathEnsemble(times, out[f"w{i}"], ids, cfg.seed, alive=out[f"w{i}.alive"]) for i in range(len(mu_grid))]
    return heat, waves


def sk_study(op, b, g, mu_grid, cfg: SimConfig, M, u0=None, v0=None, workers=1, block_size=DEFAULT_BLOCK):
    """Per-mass rows of wave-vs-heat statistics on shared noise.

    Each row holds the mean capped sup-distance and, for law-level comparison,
    moments of ``|u(T)|_H^2`` and of the first mode at ``T`` with their gaps
    to the heat equation.
    """
    heat, waves = sk_ensembles(op, b, g, mu_grid, cfg, M, u0, v0, workers, block_size)
    check_survival(heat.alive, "heat equation")
    h_sq = np.sum(heat.samples[:, -1] ** 2, axis=-1)
    h_first = heat.samples[:, -1, 0]
    rows = []
    for mu, w in zip(mu_grid, waves):
        check_survival(w.alive, f"wave equation mu={mu}")
        keep = w.alive & heat.alive
        dist, dist_se = wasserstein_upper_bound(w, heat)
        w_sq = np.sum(w.samples[:, -1] ** 2, axis=-1)
        gap, gap_se = mean_se((w_sq - h_sq)[keep])
        rows.append(
            {
                "mu": float(mu),
                "sup_distance": dist,
                "sup_distance_se": dist_se,
                "sq_norm_wave": mean_se(w_sq[keep])[0],
                "sq_norm_heat": mean_se(h_sq[keep])[0],
                "sq_norm_gap": abs(gap),
                "sq_norm_gap_se": gap_se,
                "first_mode_mean": float(np.mean(w.samples[keep, -1, 0])),
                "first_mode_var": float(np.var(w.samples[keep, -1, 0], ddof=1)) if keep.sum() > 1 else float("nan"),
                "heat_first_mode_mean": float(np.mean(h_first[keep])),
                "heat_first_mode_var": float(np.var(h_first[keep], ddof=1)) if keep.sum() > 1 else float("nan"),
                "n": int(keep.sum()),
            }
        )
    return rows


# --- coupling ---------------------------------------------------------------


def wilson_interval(k: int, n: int, z: float = 1.959963984540054):
    if n <= 0:
        return 0.0, 1.0
    if k == 0:
        return 0.0, float(z * z / (n + z * z))
    if k == n:
        return float(n / (n + z * z)), 1.0
    phat = k / n
    denom = 1.0 + z * z / n
    centre = (phat + z * z / (2 * n)) / denom
    half = z * np.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return float(max(0.0, centre - half)), float(min(1.0, centre + half))


@dataclass(frozen=True)
class CouplingTask:
    cfg: SimConfig
    op: SpectralOperator
    b: object
    g: object
    b_n: object
    g_n: object
    threshold: float
    lam_c: float
    u0: np.ndarray
    v0: np.ndarray

    def __call__(self, ids):
        c = self.cfg
        st = PairStepper(self.op, c.N, c.G, c.dt, c.mu, c.zeta, self.b, self.g, self.b_n, self.g_n, self.threshold, self.lam_c)
        out = run_lockstep(c, {"p": st}, ids, self.u0, self.v0)
        return {"tau": out["p.tau"], "cost": out["p.cost"], "dist": out["p.dist"], "alive": out["p.alive"]}


def coupling_ensemble(cfg, op, b, g, b_n, g_n, threshold, lam_c, M, u0=None, v0=None, workers=1, block_size=DEFAULT_BLOCK):
    u0 = np.zeros(cfg.N) if u0 is None else np.asarray(u0, dtype=float)
    v0 = np.zeros(cfg.N) if v0 is None else np.asarray(v0, dtype=float)
    task = CouplingTask(cfg, op, b, g, b_n, g_n, threshold, lam_c, u0, v0)
    out = run_blocks(task, M, block_size, workers)
    check_survival(out["alive"], "coupled pair")
    return out


def coupling_report(runs, delta, gamma_c, T, floor, times=None, s_levels=(), threshold=None):
    """Stopping, Girsanov-cost and total-variation summary of coupled runs.

    ``runs`` is a mapping with per-sample ``tau``, ``cost`` and ``dist``
    (distance path at ``times``), or a list of :class:`CoupledRun`.  The
    control is ``lambda = delta^(gamma_c - 1)``; while it acts the distance
    stays below ``threshold`` (default ``delta``), which caps the cost at
    ``(lambda * threshold)^2 T / floor^2``.
    """
    if isinstance(runs, (list, tuple)):
        times = runs[0].times if times is None else times
        runs = {
            "tau": np.array([r.tau for r in runs]),
            "cost": np.array([r.girsanov_cost for r in runs]),
            "dist": np.stack([r.dist for r in runs]),
        }
    tau, cost = np.asarray(runs["tau"]), np.asarray(runs["cost"])
    n = tau.size
    k = int(np.sum(tau < T))
    threshold = delta if threshold is None else threshold
    ceiling = (delta ** (gamma_c - 1.0) * threshold) ** 2 * T / floor**2
    tv = np.sqrt(cost / 2.0)
    report = {
        "n": n,
        "p_tau_lt_T": k / n,
        "p_tau_wilson": wilson_interval(k, n),
        "cost_max": float(np.max(cost)),
        "cost_mean": float(np.mean(cost)),
        "cost_ceiling": float(ceiling),
        "cost_within_ceiling": bool(np.all(cost <= ceiling)),
        "tv_budget_mean": float(np.mean(tv)),
        "tv_budget_max": float(np.max(tv)),
        "tv_budget_ceiling": float(np.sqrt(ceiling / 2.0)),
        "tail": {},
    }
    if s_levels:
        dist = np.asarray(runs["dist"])
        times = np.asarray(times)
        before = times[None, :] <= tau[:, None]
        sup = np.max(np.where(before, dist, 0.0), axis=1)
        for s in s_levels:
            report["tail"][float(s)] = float(np.mean(sup >= s))
    return report
