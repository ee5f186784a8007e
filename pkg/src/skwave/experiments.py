"""Config-driven experiment suites with reproducible output artifacts.

A config is a flat ``key = value`` text file; dotted keys group related
settings and ``#`` starts a comment.  Every run writes three files into the
output directory:

``results.csv``   one record per line:
                  ``experiment,params,statistic,value,stderr,n,seed``
``summary.csv``   one line per assertion with its status and margin
``manifest.json`` resolved config, seed, build fingerprint and results hash
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, modes
from .coefficients import HolderDrift, HolderMultiplier, mollify_1d
from .simulate import SimConfig, SimulationError, WaveStepper, run_blocks, run_lockstep
from .spectral import make_operator

SEED_ENV = "SKWAVE_SEED"

EXPERIMENTS = (
    "verify-semigroup",
    "verify-bounds",
    "sk-sweep",
    "coupling",
    "convolution-scaling",
    "self-convergence",
)

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_SIM = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


def _floats(text):
    return [float(x) for x in text.replace(",", " ").split()]


def _ints(text):
    return [int(x) for x in text.replace(",", " ").split()]


def _optfloat(text):
    return None if text.strip().lower() in ("", "none") else float(text)


# key: (parser, default, description)
SCHEMA = {
    "experiment": (str, None, "one of: " + ", ".join(EXPERIMENTS)),
    "seed": (int, 0, f"64-bit master seed (overridden by ${SEED_ENV})"),
    "samples": (int, 200, "Monte Carlo sample count M"),
    "workers": (int, 1, "worker processes; results do not depend on it"),
    "block_size": (int, 25, "samples per work unit"),
    "output": (str, "results", "output directory"),
    "operator.family": (str, "dirichlet_laplacian", "dirichlet_laplacian | bilaplacian_1d | power_law"),
    "operator.N": (int, 32, "number of modes"),
    "operator.eta0": (_optfloat, None, "summability exponent (power_law only)"),
    "operator.scale": (float, 1.0, "eigenvalue scale (power_law only)"),
    "sim.G": (int, 0, "physical grid size; 0 means 4N"),
    "sim.dt": (float, 1e-3, "time step"),
    "sim.T": (float, 1.0, "horizon"),
    "sim.mu": (float, 0.1, "mass"),
    "sim.lambda": (float, 0.0, "shift lambda >= 0"),
    "sim.zeta": (int, 1, "damping flag 0 or 1"),
    "sim.record_every": (int, 10, "steps between recorded states"),
    "sim.u0_mode1": (float, 0.5, "initial displacement coefficient on e_1"),
    "sim.v0_mode1": (float, 0.0, "initial velocity coefficient on e_1"),
    "coeff.g.form": (str, "power_form", "power_form | constant"),
    "coeff.g.beta": (float, 0.8, "Hoelder exponent of g"),
    "coeff.g.floor": (float, 1.0, "lower bound of g"),
    "coeff.g.scale": (float, 1.0, "prefactor of |u|^beta"),
    "coeff.b.form": (str, "power_form", "power_form | zero"),
    "coeff.b.alpha": (float, 0.8, "Hoelder exponent of b"),
    "coeff.b.kappa": (float, 0.5, "prefactor of sign(u)|u|^alpha"),
    "coeff.mollify_n": (int, 0, "grid level of the Lipschitz approximation; 0 = raw coefficients"),
    "sweep.mu_grid": (_floats, [1e-1, 1e-2, 1e-3], "masses for sk-sweep"),
    "sweep.lambda_grid": (_floats, [1.0, 4.0, 16.0, 64.0, 256.0], "shifts for convolution-scaling"),
    "sweep.p": (float, 2.0, "moment order p"),
    "sweep.eta": (_optfloat, None, "eta for the predicted slope; default eta0"),
    "sweep.n_grid": (_ints, [16, 64, 256], "approximation levels for coupling"),
    "sweep.substeps": (_ints, [2, 4, 8], "coarsening factors for self-convergence"),
    "coupling.gamma_c": (float, 0.1, "control exponent: lambda = Delta^(gamma_c - 1)"),
    "coupling.threshold_factor": (float, 1.0, "stop when |u - u_n| >= factor * Delta"),
    "coupling.enlargement": (str, "cell", "cell: Delta = max(c_n, 10/n); none: Delta = c_n"),
    "coupling.s_levels": (_floats, [0.25, 0.5], "tail levels as multiples of Delta"),
    "verify.k_max": (int, 512, "modes in the deterministic suites"),
    "verify.n_times": (int, 200, "time-grid points"),
    "verify.t_max": (float, 5.0, "time-grid end"),
    "verify.mu_grid": (_floats, [1e-4, 1e-3, 1e-2, 1e-1, 1.0], "masses"),
    "verify.lambda_grid": (_floats, [0.0, 1.0, 10.0, 100.0], "shifts"),
    "assert.slack_min": (float, -1e-12, "minimum relative slack of bound checks"),
    "assert.energy_tol": (float, 1e-11, "relative energy drift for zeta=0"),
    "assert.mode_gap_max": (float, 1e-2, "mode-limit gap at the smallest mass"),
    "assert.slope_max": (float, -0.30, "largest admissible fitted lambda slope"),
    "assert.sk_distance_max": (float, 0.05, "largest admissible sup-distance at the smallest mass"),
    "assert.order_min": (float, 0.3, "smallest admissible self-convergence order"),
}


def _format_value(v):
    if isinstance(v, list):
        return ", ".join(_format_value(x) for x in v)
    if v is None:
        return "none"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def print_schema(stream=None):
    stream = sys.stdout if stream is None else stream
    for key, (_, default, desc) in SCHEMA.items():
        d = "(required)" if default is None and key == "experiment" else _format_value(default)
        stream.write(f"{key} = {d}    # {desc}\n")


def parse_config(text: str, env=None) -> dict:
    """Parse and validate config text into a fully resolved dict."""
    env = os.environ if env is None else env
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    return resolve(raw, env)


def resolve(raw: dict, env=None) -> dict:
    env = {} if env is None else env
    cfg = {}
    for key, (parse, default, _) in SCHEMA.items():
        if key in raw:
            value = raw[key]
            try:
                cfg[key] = parse(value) if isinstance(value, str) else value
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
        else:
            cfg[key] = list(default) if isinstance(default, list) else default
    unknown = set(raw) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    if env.get(SEED_ENV):
        try:
            cfg["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    _validate(cfg)
    return cfg


def _validate(cfg):
    if cfg["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
    if not 0 <= cfg["seed"] < 2**64:
        raise ConfigError("seed must fit in 64 bits")
    for key in ("samples", "workers", "block_size", "operator.N", "sim.record_every"):
        if cfg[key] < 1:
            raise ConfigError(f"{key} must be >= 1")
    if cfg["coupling.enlargement"] not in ("cell", "none"):
        raise ConfigError("coupling.enlargement must be 'cell' or 'none'")
    if cfg["coupling.threshold_factor"] <= 0:
        raise ConfigError("coupling.threshold_factor must be positive")
    if any(n < 1 for n in cfg["sweep.n_grid"]):
        raise ConfigError("sweep.n_grid entries must be >= 1")
    if any(r < 2 for r in cfg["sweep.substeps"]):
        raise ConfigError("sweep.substeps entries must be >= 2")
    if any(m <= 0 for m in cfg["sweep.mu_grid"] + cfg["verify.mu_grid"]):
        raise ConfigError("masses must be positive")
    if any(x < 0 for x in cfg["sweep.lambda_grid"] + cfg["verify.lambda_grid"]):
        raise ConfigError("shifts must be >= 0")
    if cfg["verify.k_max"] < 1 or cfg["verify.n_times"] < 2 or cfg["verify.t_max"] <= 0:
        raise ConfigError("verify grid is empty")
    try:
        operator(cfg)
        sim_config(cfg)
        multiplier(cfg)
        drift(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def operator(cfg, N=None):
    return make_operator(cfg["operator.family"], N or cfg["operator.N"], cfg["operator.eta0"], cfg["operator.scale"])


def sim_config(cfg, **over) -> SimConfig:
    kw = dict(
        N=cfg["operator.N"],
        G=cfg["sim.G"] or None,
        dt=cfg["sim.dt"],
        T=cfg["sim.T"],
        mu=cfg["sim.mu"],
        lam=cfg["sim.lambda"],
        zeta=cfg["sim.zeta"],
        seed=cfg["seed"],
        record_every=cfg["sim.record_every"],
        family=cfg["operator.family"],
        eta0=cfg["operator.eta0"],
        scale=cfg["operator.scale"],
    )
    kw.update(over)
    return SimConfig(**kw)


def multiplier(cfg):
    return HolderMultiplier(cfg["coeff.g.beta"], cfg["coeff.g.floor"], cfg["coeff.g.scale"], cfg["coeff.g.form"])


def drift(cfg):
    return HolderDrift(cfg["coeff.b.alpha"], cfg["coeff.b.kappa"], cfg["coeff.b.form"])


def initial_state(cfg):
    N = cfg["operator.N"]
    u0, v0 = np.zeros(N), np.zeros(N)
    u0[0], v0[0] = cfg["sim.u0_mode1"], cfg["sim.v0_mode1"]
    return u0, v0


# --- records ----------------------------------------------------------------


@dataclass
class ResultRecord:
    experiment: str
    params: dict
    statistic: str
    value: float
    stderr: float = float("nan")
    n: int = 0
    seed: int = 0

    def row(self):
        params = ";".join(f"{k}={_format_value(v)}" for k, v in self.params.items())
        return [self.experiment, params, self.statistic, _num(self.value), _num(self.stderr), str(self.n), str(self.seed)]


def _num(x):
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


@dataclass
class Check:
    name: str
    passed: bool | None
    value: float = float("nan")
    bound: float = float("nan")
    detail: str = ""

    @property
    def status(self):
        return "skipped" if self.passed is None else ("pass" if self.passed else "FAIL")


@dataclass
class Outcome:
    records: list = field(default_factory=list)
    checks: list = field(default_factory=list)

    def add(self, *args, **kw):
        self.records.append(ResultRecord(*args, **kw))

    def check(self, name, passed, value=float("nan"), bound=float("nan"), detail=""):
        self.checks.append(Check(name, None if passed is None else bool(passed), float(value), float(bound), detail))


def relative_slack(bound, quantity):
    """``(bound - |q|) / max(bound, |q|)``, zero when both vanish."""
    q = np.abs(quantity)
    b = np.asarray(bound, dtype=float)
    den = np.maximum(np.maximum(b, q), 1e-300)
    return (b - q) / den


# --- experiments ------------------------------------------------------------


def _verify_semigroup(cfg, out: Outcome):
    exp = cfg["experiment"]
    alpha = operator(cfg, cfg["verify.k_max"]).eigenvalues
    t = np.linspace(0.0, cfg["verify.t_max"], cfg["verify.n_times"])[:, None]
    worst = {}

    def note(name, slack, mu, lam, zeta):
        s = float(np.min(slack)) if np.size(slack) else math.inf
        if name not in worst or s < worst[name][0]:
            worst[name] = (s, mu, lam, zeta)

    energy_drift = 0.0
    for zeta in (0, 1):
        for mu in cfg["verify.mu_grid"]:
            for lam in cfg["verify.lambda_grid"]:
                gam = alpha + lam
                p = modes.ModePropagator(mu, zeta, gam)
                f, fp = modes.solution(mu, float(zeta), gam, t, 0.0, 1.0)
                F, FP = modes.solution(mu, float(zeta), gam, t, 1.0, 1.0)
                energy = mu * FP**2 + gam * F**2
                note("energy", relative_slack(modes.bound_oracle(p, t, "energy", 1.0, 1.0), energy), mu, lam, zeta)
                if zeta == 0:
                    energy_drift = max(energy_drift, float(np.max(np.abs(energy / (mu + gam) - 1.0))))
                    note("f_undamped", relative_slack(modes.bound_oracle(p, t, "f_undamped"), f), mu, lam, zeta)
                    note("fprime_undamped", relative_slack(modes.bound_oracle(p, t, "fprime_undamped"), fp), mu, lam, zeta)
                    continue
                disc = p.discriminant
                for regime, mask in (("overdamped", disc >= 0), ("underdamped", disc <= 0)):
                    if not mask.any():
                        continue
                    sub = modes.ModePropagator(mu, 1, gam[mask])
                    for which, q in (("f", f[:, mask]), ("fprime", fp[:, mask])):
                        name = f"{which}_{regime}"
                        note(name, relative_slack(modes.bound_oracle(sub, t, name), q), mu, lam, zeta)
    tol = cfg["assert.slack_min"]
    for name, (s, mu, lam, zeta) in worst.items():
        out.add(exp, {"bound": name, "mu": mu, "lambda": lam, "zeta": zeta}, "min_relative_slack", s)
        out.check(f"mode bound {name}", s >= tol, s, tol, f"worst at mu={mu}, lambda={lam}, zeta={zeta}")
    out.add(exp, {"zeta": 0}, "max_energy_drift", energy_drift)
    out.check("undamped energy conservation", energy_drift <= cfg["assert.energy_tol"], energy_drift, cfg["assert.energy_tol"])


def _verify_bounds(cfg, out: Outcome):
    exp = cfg["experiment"]
    op = operator(cfg, cfg["verify.k_max"])
    t = np.linspace(0.0, cfg["verify.t_max"], cfg["verify.n_times"])
    tol = cfg["assert.slack_min"]
    worst = {}
    for zeta in (0, 1):
        for mu in cfg["verify.mu_grid"]:
            for lam in cfg["verify.lambda_grid"]:
                for which in modes.NORM_CHECKS:
                    if which == "low_mode_velocity" and zeta == 0:
                        continue
                    if which.startswith("phase_space") and mu > 1:
                        continue
                    sup, bound = modes.operator_norm_check(op, mu, lam, zeta, t, which)
                    s = float(relative_slack(bound, sup))
                    key = (which, zeta)
                    if key not in worst or s < worst[key][0]:
                        worst[key] = (s, sup, bound, mu, lam)
    for (which, zeta), (s, sup, bound, mu, lam) in sorted(worst.items()):
        params = {"check": which, "zeta": zeta, "mu": mu, "lambda": lam}
        out.add(exp, params, "sup_over_modes", sup)
        out.add(exp, params, "bound", bound)
        out.add(exp, params, "min_relative_slack", s)
        out.check(f"operator norm {which} zeta={zeta}", s >= tol, s, tol, f"worst at mu={mu}, lambda={lam}")

    gamma = float(np.pi**2)
    mus = [1e-2, 1e-3, 1e-4, 1e-5]
    gaps = [modes.mode_limit_gap(modes.ModePropagator(m, 1, gamma), 1.0, 0.0, 0.0, 1.0, 1000, "u") for m in mus]
    for m, gp in zip(mus, gaps):
        out.add(exp, {"check": "mode_limit_u", "mu": m, "gamma": gamma}, "sup_gap", gp)
    out.check("mode limit gap decreasing in mu", all(np.diff(gaps) < 0), gaps[-1], float("nan"), ", ".join(f"{g:.3g}" for g in gaps))
    out.check("mode limit gap at smallest mu", gaps[-1] < cfg["assert.mode_gap_max"], gaps[-1], cfg["assert.mode_gap_max"])


def _convolution_scaling(cfg, out: Outcome):
    exp = cfg["experiment"]
    sc = sim_config(cfg)
    fit = analysis.convolution_scaling_study(
        operator(cfg), sc.mu, sc.zeta, cfg["sweep.p"], cfg["sweep.lambda_grid"], cfg["samples"], sc,
        eta=cfg["sweep.eta"], workers=cfg["workers"], block_size=cfg["block_size"],
    )
    for lam, est, se in zip(fit.lambdas, fit.estimates, fit.stderr):
        out.add(exp, {"lambda": lam, "mu": sc.mu, "p": fit.p}, "mean_sup_norm_pow_p", est, se, fit.M, cfg["seed"])
    out.add(exp, {"mu": sc.mu, "p": fit.p}, "fitted_slope", fit.slope, n=fit.M, seed=cfg["seed"])
    out.add(exp, {"mu": sc.mu, "p": fit.p, "eta": fit.eta}, "predicted_slope", fit.predicted_slope)
    out.check("estimates strictly decreasing in lambda", fit.strictly_decreasing, detail=", ".join(f"{e:.4g}" for e in fit.estimates))
    out.check("fitted lambda slope", fit.slope_ok(cfg["assert.slope_max"]), fit.slope, cfg["assert.slope_max"])


def _sk_sweep(cfg, out: Outcome):
    exp = cfg["experiment"]
    sc = sim_config(cfg, zeta=1)
    op = operator(cfg)
    u0, v0 = initial_state(cfg)
    g, b = multiplier(cfg), drift(cfg)
    mu_grid = cfg["sweep.mu_grid"]
    kw = dict(u0=u0, v0=v0, workers=cfg["workers"], block_size=cfg["block_size"])
    n = cfg["coeff.mollify_n"]
    runs = []
    if n > 0:
        g_n, b_n = mollify_1d(g, n), mollify_1d(b, n)
        out.add(exp, {"n": n}, "mollification_error_g", g_n.error_bound)
        out.add(exp, {"n": n}, "mollification_error_b", b_n.error_bound)
        runs.append(("lipschitz", analysis.sk_study(op, b_n, g_n, mu_grid, sc, cfg["samples"], **kw)))
    runs.append(("holder", analysis.sk_study(op, b, g, mu_grid, sc, cfg["samples"], **kw)))
    for label, rows in runs:
        for r in rows:
            params = {"coefficients": label, "mu": r["mu"]}
            out.add(exp, params, "mean_sup_distance", r["sup_distance"], r["sup_distance_se"], r["n"], cfg["seed"])
            out.add(exp, params, "sq_norm_gap", r["sq_norm_gap"], r["sq_norm_gap_se"], r["n"], cfg["seed"])
            out.add(exp, params, "mean_sq_norm_wave", r["sq_norm_wave"], n=r["n"], seed=cfg["seed"])
            out.add(exp, params, "mean_sq_norm_heat", r["sq_norm_heat"], n=r["n"], seed=cfg["seed"])
            out.add(exp, params, "first_mode_mean", r["first_mode_mean"], n=r["n"], seed=cfg["seed"])
            out.add(exp, params, "first_mode_var", r["first_mode_var"], n=r["n"], seed=cfg["seed"])
    path_rows = runs[0][1]
    law_rows = runs[-1][1]
    order = np.argsort([-m for m in mu_grid])
    dist = [path_rows[i]["sup_distance"] for i in order]
    gaps = [law_rows[i]["sq_norm_gap"] for i in order]
    trend = len(mu_grid) >= 2
    note = "" if trend else "single mass: trend checks skipped"
    out.check(f"{runs[0][0]} sup-distance decreasing as mu decreases", all(np.diff(dist) < 0) if trend else None, dist[-1], detail=note or ", ".join(f"{d:.4g}" for d in dist))
    out.check(f"{runs[0][0]} sup-distance at smallest mu", dist[-1] < cfg["assert.sk_distance_max"], dist[-1], cfg["assert.sk_distance_max"])
    out.check("holder squared-norm gap decreasing as mu decreases", all(np.diff(gaps) < 0) if trend else None, gaps[-1], detail=note or ", ".join(f"{d:.4g}" for d in gaps))


def coupling_delta(g_n, n, enlargement):
    delta = g_n.error_bound
    if enlargement == "cell":
        delta = max(delta, 10.0 / n)
    return delta


def _coupling(cfg, out: Outcome):
    exp = cfg["experiment"]
    sc = sim_config(cfg)
    op = operator(cfg)
    u0, v0 = initial_state(cfg)
    g, b = multiplier(cfg), drift(cfg)
    gc = cfg["coupling.gamma_c"]
    reps = []
    for n in cfg["sweep.n_grid"]:
        g_n = mollify_1d(g, n)
        delta = coupling_delta(g_n, n, cfg["coupling.enlargement"])
        lam_c = delta ** (gc - 1.0)
        thr = cfg["coupling.threshold_factor"] * delta
        runs = analysis.coupling_ensemble(sc, op, b, g, b, g_n, thr, lam_c, cfg["samples"], u0, v0, cfg["workers"], cfg["block_size"])
        levels = tuple(s * delta for s in cfg["coupling.s_levels"])
        rep = analysis.coupling_report(runs, delta, gc, sc.T, g.floor, sc.record_times, levels, threshold=thr)
        reps.append(rep)
        params = {"n": n, "delta": delta, "lambda_c": lam_c}
        M = rep["n"]
        lo, hi = rep["p_tau_wilson"]
        out.add(exp, params, "c_n", g_n.error_bound)
        out.add(exp, params, "p_tau_lt_T", rep["p_tau_lt_T"], n=M, seed=cfg["seed"])
        out.add(exp, params, "p_tau_wilson_low", lo, n=M, seed=cfg["seed"])
        out.add(exp, params, "p_tau_wilson_high", hi, n=M, seed=cfg["seed"])
        out.add(exp, params, "cost_max", rep["cost_max"], n=M, seed=cfg["seed"])
        out.add(exp, params, "cost_mean", rep["cost_mean"], n=M, seed=cfg["seed"])
        out.add(exp, params, "cost_ceiling", rep["cost_ceiling"])
        out.add(exp, params, "tv_budget_mean", rep["tv_budget_mean"], n=M, seed=cfg["seed"])
        out.add(exp, params, "tv_budget_max", rep["tv_budget_max"], n=M, seed=cfg["seed"])
        for s, pr in rep["tail"].items():
            out.add(exp, {**params, "s": s}, "p_sup_dist_ge_s", pr, n=M, seed=cfg["seed"])
        out.check(f"girsanov cost within ceiling n={n}", rep["cost_within_ceiling"], rep["cost_max"], rep["cost_ceiling"])
    trend = len(reps) >= 2
    p = [r["p_tau_lt_T"] for r in reps]
    tv = [r["tv_budget_mean"] for r in reps]
    out.check("P(tau < T) non-increasing in n", all(np.diff(p) <= 0) if trend else None, p[-1], detail=", ".join(f"{x:.4g}" for x in p))
    out.check("TV budget decreasing in n", all(np.diff(tv) < 0) if trend else None, tv[-1], detail=", ".join(f"{x:.4g}" for x in tv))


@dataclass(frozen=True)
class _SelfConvTask:
    sc: SimConfig
    op: object
    b: object
    g: object
    levels: tuple
    u0: np.ndarray
    v0: np.ndarray

    def __call__(self, ids):
        c = self.sc
        steppers = {
            f"r{r}": WaveStepper(self.op, c.N, c.G, c.dt, c.mu, c.zeta, c.lam, self.b, self.g, substeps=r)
            for r in (1,) + self.levels
        }
        res = run_lockstep(c, steppers, ids, self.u0, self.v0)
        ref = res["r1.u"]
        err = np.stack([np.max(np.sqrt(np.sum((res[f"r{r}.u"] - ref) ** 2, axis=-1)), axis=1) for r in self.levels], axis=1)
        alive = np.all(np.stack([res[f"r{r}.alive"] for r in (1,) + self.levels]), axis=0)
        return {"err": err, "alive": alive}


def _self_convergence(cfg, out: Outcome):
    exp = cfg["experiment"]
    levels = tuple(sorted(cfg["sweep.substeps"]))
    period = int(np.lcm.reduce(levels))
    rec = cfg["sim.record_every"]
    rec = period * max(1, math.ceil(rec / period))
    sc = sim_config(cfg, record_every=rec)
    if sc.n_steps % period:
        raise ConfigError("sim.T / sim.dt must be a multiple of every coarsening factor")
    u0, v0 = initial_state(cfg)
    task = _SelfConvTask(sc, operator(cfg), drift(cfg), multiplier(cfg), levels, u0, v0)
    res = run_blocks(task, cfg["samples"], cfg["block_size"], cfg["workers"])
    analysis.check_survival(res["alive"], "self-convergence")
    err = res["err"][res["alive"]]
    means = err.mean(axis=0)
    ses = err.std(axis=0, ddof=1) / np.sqrt(len(err))
    for r, m, s in zip(levels, means, ses):
        out.add(exp, {"dt": sc.dt * r, "reference_dt": sc.dt}, "mean_sup_error", m, s, len(err), cfg["seed"])
    if len(levels) >= 2:
        order = float(np.polyfit(np.log(np.array(levels, float)), np.log(means), 1)[0])
        out.add(exp, {"levels": list(levels)}, "observed_order", order, n=len(err), seed=cfg["seed"])
        out.check("self-convergence order", order >= cfg["assert.order_min"], order, cfg["assert.order_min"])
    else:
        out.check("self-convergence order", None, detail="single level: order not estimated")


RUNNERS = {
    "verify-semigroup": _verify_semigroup,
    "verify-bounds": _verify_bounds,
    "sk-sweep": _sk_sweep,
    "coupling": _coupling,
    "convolution-scaling": _convolution_scaling,
    "self-convergence": _self_convergence,
}

DETERMINISTIC = ("verify-semigroup", "verify-bounds")


def execute(cfg) -> Outcome:
    out = Outcome()
    RUNNERS[cfg["experiment"]](cfg, out)
    for r in out.records:
        if not r.seed and cfg["experiment"] not in DETERMINISTIC:
            r.seed = cfg["seed"]
    bad = [r for r in out.records if not math.isfinite(r.value)]
    if bad:
        raise SimulationError(f"non-finite statistic {bad[0].statistic} in {bad[0].params}")
    return out


# --- artifacts --------------------------------------------------------------

RESULT_FIELDS = ["experiment", "params", "statistic", "value", "stderr", "n", "seed"]
SUMMARY_FIELDS = ["check", "status", "value", "bound", "detail"]


def results_text(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_FIELDS)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def summary_text(checks) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_FIELDS)
    for c in checks:
        w.writerow([c.name, c.status, _num(c.value), _num(c.bound), c.detail])
    return buf.getvalue()


def build_fingerprint() -> str:
    h = hashlib.sha256()
    for path in sorted(Path(__file__).parent.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    h.update(np.__version__.encode())
    return h.hexdigest()[:16]


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def write_outputs(cfg, outcome: Outcome, outdir: Path) -> dict:
    outdir.mkdir(parents=True, exist_ok=True)
    results = results_text(outcome.records)
    (outdir / "results.csv").write_text(results)
    (outdir / "summary.csv").write_text(summary_text(outcome.checks))
    manifest = {
        "config": {k: v for k, v in cfg.items()},
        "seed": cfg["seed"],
        "fingerprint": build_fingerprint(),
        "numpy": np.__version__,
        "results_sha256": _sha256(results),
        "passed": all(c.passed is not False for c in outcome.checks),
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _report(outcome: Outcome, stream):
    for c in outcome.checks:
        extra = f" value={c.value:.6g}" if math.isfinite(c.value) else ""
        if math.isfinite(c.bound):
            extra += f" bound={c.bound:.6g}"
        if c.detail:
            extra += f" ({c.detail})"
        stream.write(f"[{c.status}] {c.name}{extra}\n")


def run_config(cfg: dict, stream=None) -> tuple[int, Outcome | None]:
    stream = sys.stdout if stream is None else stream
    try:
        outcome = execute(cfg)
    except ConfigError as exc:
        stream.write(f"config error: {exc}\n")
        return EXIT_CONFIG, None
    except SimulationError as exc:
        stream.write(f"simulation failure: {exc}\n")
        return EXIT_SIM, None
    write_outputs(cfg, outcome, Path(cfg["output"]))
    _report(outcome, stream)
    failed = [c for c in outcome.checks if c.passed is False]
    return (EXIT_ASSERT if failed else EXIT_OK), outcome


def run(path, stream=None, env=None) -> int:
    stream = sys.stdout if stream is None else stream
    try:
        cfg = parse_config(Path(path).read_text(), env)
    except (OSError, ConfigError) as exc:
        stream.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    return run_config(cfg, stream)[0]


def rerun_manifest(path, outdir=None, workers=None, stream=None) -> int:
    """Re-run a manifest and compare the new results with the recorded hash."""
    stream = sys.stdout if stream is None else stream
    try:
        manifest = json.loads(Path(path).read_text())
        cfg = resolve(manifest["config"])
    except (OSError, KeyError, ValueError) as exc:
        stream.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    old_dir = Path(cfg["output"])
    cfg["output"] = str(outdir) if outdir else str(Path(path).parent / "rerun")
    if workers:
        cfg["workers"] = int(workers)
    code, outcome = run_config(cfg, stream)
    if outcome is None:
        return code
    new_text = results_text(outcome.records)
    same_build = manifest.get("fingerprint") == build_fingerprint()
    if same_build:
        identical = _sha256(new_text) == manifest["results_sha256"]
        stream.write(f"rerun results {'identical' if identical else 'DIFFER'} (sha256)\n")
        return code if identical else EXIT_ASSERT
    stream.write("warning: build fingerprint differs; comparing values to 1e-9\n")
    old_file = Path(path).parent / "results.csv"
    if not old_file.exists():
        old_file = old_dir / "results.csv"
    ok = compare_results(old_file.read_text(), new_text, 1e-9)
    stream.write(f"rerun results {'agree' if ok else 'DIFFER'} within tolerance\n")
    return code if ok else EXIT_ASSERT


def compare_results(a: str, b: str, tol: float) -> bool:
    ra = list(csv.DictReader(io.StringIO(a)))
    rb = list(csv.DictReader(io.StringIO(b)))
    if len(ra) != len(rb):
        return False
    for x, y in zip(ra, rb):
        if (x["experiment"], x["params"], x["statistic"]) != (y["experiment"], y["params"], y["statistic"]):
            return False
        for key in ("value", "stderr"):
            u, v = float(x[key]), float(y[key])
            if math.isnan(u) and math.isnan(v):
                continue
            if not abs(u - v) <= tol * max(1.0, abs(u), abs(v)):
                return False
    return True
