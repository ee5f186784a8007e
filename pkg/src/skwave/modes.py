"""Exact per-mode propagators for ``mu f'' + zeta f' + gamma f = 0``.

Every mode of the (shifted) damped or undamped wave semigroup reduces to this
scalar ODE with ``gamma = alpha_k + lambda``.  The solution is written as

    f(t, u, v) = u (E - a K) + v K,      f'(t, u, v) = v (E + a K) - (gamma/mu) u K

with ``a = -zeta / (2 mu)`` and ``E = e^{at} cosh(st)``, ``K = e^{at} sinh(st)/s``
(``s^2 = (zeta^2 - 4 mu gamma) / (4 mu^2)``; cosh/sinh turn into cos/sin when
``s^2 < 0``).  ``E`` and ``K`` are entire in ``s^2``, so a power series covers
the critically damped neighbourhood and the three closed forms take over away
from it.

Integrals over one time step (forcing and noise covariances) use exact
energy-type identities when the step resolves the dynamics and a Taylor
expansion in time when it does not.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from .spectral import SpectralOperator

_SERIES_TERMS = 24
_TAYLOR_TERMS = 48
_TAYLOR_RHO = 2.0


def _series(z):
    """``cosh(sqrt z)`` and ``sinh(sqrt z)/sqrt z`` for small ``|z|``."""
    c0 = np.zeros_like(z)
    c1 = np.zeros_like(z)
    for n in range(_SERIES_TERMS - 1, -1, -1):
        c0 = c0 * z + 1.0 / factorial(2 * n)
        c1 = c1 * z + 1.0 / factorial(2 * n + 1)
    return c0, c1


def _ek(mu, damping, gamma, t):
    """Return ``a`` and the basis functions ``E(t)``, ``K(t)`` (broadcast)."""
    gamma = np.asarray(gamma, dtype=float)
    t = np.asarray(t, dtype=float)
    damping = np.asarray(damping, dtype=float)
    a = -damping / (2.0 * mu)
    disc = damping * damping - 4.0 * mu * gamma
    s2 = disc / (4.0 * mu * mu)
    s2, t, disc, ab, cb = np.broadcast_arrays(s2, t, disc, a, damping)
    z = s2 * t * t
    E = np.empty(z.shape)
    K = np.empty(z.shape)

    small = np.abs(z) <= 1.0
    if small.any():
        ts = t[small]
        ea = np.exp(ab[small] * ts)
        c0, c1 = _series(z[small])
        E[small] = ea * c0
        K[small] = ea * ts * c1

    over = z > 1.0
    if over.any():
        ts = t[over]
        root = np.sqrt(disc[over])
        s = root / (2.0 * mu)
        gam = np.broadcast_to(gamma, z.shape)[over]
        cs = cb[over]
        r_plus = -2.0 * gam / (cs + root)
        r_minus = -(cs + root) / (2.0 * mu)
        ep = np.exp(r_plus * ts)
        E[over] = 0.5 * (ep + np.exp(r_minus * ts))
        K[over] = ep * (-np.expm1(-2.0 * s * ts)) / (2.0 * s)

    under = z < -1.0
    if under.any():
        ts = t[under]
        w = np.sqrt(-s2[under])
        ea = np.exp(ab[under] * ts)
        E[under] = ea * np.cos(w * ts)
        K[under] = ea * np.sin(w * ts) / w
    return a, E, K


def solution(mu, damping, gamma, t, u, v):
    """``(f, f')`` of ``mu f'' + damping f' + gamma f = 0``, ``f(0)=u, f'(0)=v``."""
    a, E, K = _ek(mu, damping, gamma, t)
    gamma = np.asarray(gamma, dtype=float)
    f = u * (E - a * K) + v * K
    fp = v * (E + a * K) - (gamma / mu) * u * K
    return f, fp


def _spectral_radius(mu, damping, gamma):
    """Largest characteristic-root modulus."""
    disc = damping * damping - 4.0 * mu * gamma
    real = disc >= 0
    return np.where(
        real,
        (damping + np.sqrt(np.where(real, disc, 0.0))) / (2.0 * mu),
        np.sqrt(gamma / mu),
    )


def _taylor_integrals(mu, damping, gamma, dt):
    """Step integrals of ``q = f(., 0, 1/mu)`` by Taylor expansion in time.

    Accurate while ``dt * max|root| <= _TAYLOR_RHO``.
    """
    gamma = np.asarray(gamma, dtype=float)
    A = damping * dt / mu
    B = gamma * dt * dt / mu
    d = np.zeros((_TAYLOR_TERMS,) + gamma.shape)
    d[1] = dt / mu
    for n in range(_TAYLOR_TERMS - 2):
        d[n + 2] = -(A * (n + 1) * d[n + 1] + B * d[n]) / ((n + 1) * (n + 2))
    n = np.arange(_TAYLOR_TERMS, dtype=float)
    idx = n[:, None] + n[None, :]
    hq = 1.0 / (idx + 1.0)
    hp = np.outer(n, n) / np.maximum(idx - 1.0, 1.0)
    nd = d * n.reshape((-1,) + (1,) * gamma.ndim)
    q_end = d.sum(axis=0)
    qp_end = nd.sum(axis=0) / dt
    int_q = dt * np.tensordot(1.0 / (n + 1.0), d, axes=1)
    int_qq = dt * np.einsum("i...,ij,j...->...", d, hq, d)
    int_pp = np.einsum("i...,ij,j...->...", d, hp, d) / dt
    return q_end, qp_end, int_q, int_qq, int_pp


def _closed_integrals(mu, damping, gamma, dt):
    gamma = np.asarray(gamma, dtype=float)
    a, E, K = _ek(mu, damping, gamma, dt)
    q_end = K / mu
    qp_end = (E + a * K) / mu
    int_q = (1.0 - mu * qp_end - damping * q_end) / gamma
    damped = damping > 0
    c = np.where(damped, damping, 1.0)
    pp_damped = (1.0 / mu - mu * qp_end**2 - gamma * q_end**2) / (2.0 * c)
    qq_damped = (mu * (pp_damped - q_end * qp_end) - 0.5 * damping * q_end**2) / gamma
    w = np.sqrt(gamma / mu)
    osc = np.sin(2.0 * w * dt) / (4.0 * w)
    int_pp = np.where(damped, pp_damped, (0.5 * dt + osc) / mu**2)
    int_qq = np.where(damped, qq_damped, (0.5 * dt - osc) / (mu * w) ** 2)
    return q_end, qp_end, int_q, int_qq, int_pp


def kernel_integrals(mu, damping, gamma, dt):
    """End values and step integrals of ``q(s) = f(s, 0, 1/mu)``.

    Returns ``q(dt), q'(dt), int q, int q^2, int q q', int q'^2`` over
    ``[0, dt]``, each with the shape of ``gamma``.  ``damping`` may be an
    array broadcasting against ``gamma``.
    """
    gamma, damping = np.broadcast_arrays(
        np.atleast_1d(np.asarray(gamma, dtype=float)), np.asarray(damping, dtype=float)
    )
    out = [np.empty(gamma.shape) for _ in range(5)]
    rho = dt * _spectral_radius(mu, damping, gamma)
    near = rho <= _TAYLOR_RHO
    for mask, fn in ((near, _taylor_integrals), (~near, _closed_integrals)):
        if mask.any():
            for o, val in zip(out, fn(mu, damping[mask], gamma[mask], dt)):
                o[mask] = val
    q_end, qp_end, int_q, int_qq, int_pp = out
    int_qp = 0.5 * q_end**2
    return q_end, qp_end, int_q, int_qq, int_qp, int_pp


@dataclass(frozen=True)
class ModePropagator:
    """Scalar mode ODE ``mu f'' + zeta f' + gamma f = 0``.

    ``gamma`` may be an array, in which case every derived quantity is
    vectorised over modes.
    """

    mu: float
    zeta: int
    gamma: float | np.ndarray

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mass mu must be positive")
        if self.zeta not in (0, 1):
            raise ValueError("zeta must be 0 or 1")
        if np.any(np.asarray(self.gamma) <= 0):
            raise ValueError("gamma must be positive")

    @property
    def discriminant(self):
        return 1.0 - 4.0 * self.mu * np.asarray(self.gamma, dtype=float)

    @property
    def tol_disc(self):
        return 1e-10 * np.maximum(1.0, 4.0 * self.mu * np.asarray(self.gamma, dtype=float))

    @property
    def regime(self):
        if self.zeta == 0:
            return np.where(np.ones_like(np.asarray(self.gamma, dtype=float), bool), "undamped", "")[()]
        disc, tol = self.discriminant, self.tol_disc
        out = np.where(disc > tol, "overdamped", np.where(disc < -tol, "underdamped", "critical"))
        return out[()]

    @property
    def roots(self):
        """Characteristic roots: a real pair ``(r1, r2)`` or ``(re, im)``.

        Uses the same regime split as :attr:`regime`; ``critical`` reports the
        repeated root twice.
        """
        if np.ndim(self.gamma):
            raise ValueError("roots are reported for scalar gamma only")
        mu, g = self.mu, float(self.gamma)
        if self.zeta == 0:
            return 0.0, float(np.sqrt(g / mu))
        reg = self.regime
        if reg == "critical":
            return -0.5 / mu, -0.5 / mu
        disc = 1.0 - 4.0 * mu * g
        if reg == "overdamped":
            root = np.sqrt(disc)
            return float(-2.0 * g / (1.0 + root)), float(-(1.0 + root) / (2.0 * mu))
        return -0.5 / mu, float(np.sqrt(-disc) / (2.0 * mu))


def propagate(p: ModePropagator, u, v, t):
    """Exact ``(f(t), f'(t))`` for initial data ``(u, v)``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    return solution(p.mu, p.zeta, p.gamma, t, u, v)


@dataclass(frozen=True)
class StepKernel:
    """One-step exponential-integrator data for a family of modes.

    Shapes carry a leading mode axis when ``gamma`` is an array.

    phi:        deterministic propagation of ``(u_k, v_k)``.
    forcing:    ``int_0^dt (f, f')(s, 0, 1/mu) ds``.
    noise_cov:  covariance of ``(int f dW, int f' dW)`` over one step.
    ref_cov:    covariances of those two integrals with the heat-kernel
                integral ``int e^{-gamma (dt - s)} dW`` of the same step.
    ref_var:    variance of the heat-kernel integral.
    """

    dt: float
    phi: np.ndarray
    forcing: np.ndarray
    noise_cov: np.ndarray
    ref_cov: np.ndarray
    ref_var: np.ndarray

    def noise_factor(self) -> np.ndarray:
        """Rows expressing ``(int f dW, int f' dW)`` in three iid normals.

        The first normal is the standardised heat-kernel integral, so a heat
        simulation driven by the same normals is coupled through the same
        Brownian path.  Shape ``(..., 2, 3)``.
        """
        return joint_factor(self.ref_var, self.ref_cov, self.noise_cov)


def joint_factor(ref_var, ref_cov, noise_cov):
    """Lower-triangular factor of ``[[h,h q,h q'],[.,q q,q q'],[.,.,q' q']]``.

    Semidefinite directions get zero columns instead of failing.
    """
    c_hh = np.asarray(ref_var, dtype=float)
    c_hq = ref_cov[..., 0]
    c_hp = ref_cov[..., 1]
    c_qq = noise_cov[..., 0, 0]
    c_qp = noise_cov[..., 0, 1]
    c_pp = noise_cov[..., 1, 1]
    L = np.zeros(c_hh.shape + (3, 3))
    l00 = np.sqrt(c_hh)
    safe = np.where(l00 > 0, l00, 1.0)
    l10 = np.where(l00 > 0, c_hq / safe, 0.0)
    l20 = np.where(l00 > 0, c_hp / safe, 0.0)
    r11 = c_qq - l10**2
    l11 = np.sqrt(np.maximum(r11, 0.0))
    tiny = l11 <= 1e-12 * np.sqrt(np.maximum(c_qq, 0.0))
    l21 = np.where(tiny, 0.0, (c_qp - l20 * l10) / np.where(tiny, 1.0, l11))
    l11 = np.where(tiny, 0.0, l11)
    l22 = np.sqrt(np.maximum(c_pp - l20**2 - l21**2, 0.0))
    L[..., 0, 0] = l00
    L[..., 1, 0] = l10
    L[..., 1, 1] = l11
    L[..., 2, 0] = l20
    L[..., 2, 1] = l21
    L[..., 2, 2] = l22
    return L[..., 1:, :]


def step_kernel(p: ModePropagator, dt: float) -> StepKernel:
    if dt <= 0:
        raise ValueError("dt must be positive")
    mu, c = p.mu, float(p.zeta)
    gamma = np.asarray(p.gamma, dtype=float)
    scalar = gamma.ndim == 0
    g = np.atleast_1d(gamma)
    a, E, K = _ek(mu, c, g, dt)
    phi = np.empty(g.shape + (2, 2))
    phi[..., 0, 0] = E - a * K
    phi[..., 0, 1] = K
    phi[..., 1, 0] = -(g / mu) * K
    phi[..., 1, 1] = E + a * K

    q_end, qp_end, int_q, int_qq, int_qp, int_pp = kernel_integrals(mu, c, g, dt)
    forcing = np.stack([int_q, q_end], axis=-1)
    cov = np.empty(g.shape + (2, 2))
    cov[..., 0, 0] = int_qq
    cov[..., 0, 1] = cov[..., 1, 0] = int_qp
    cov[..., 1, 1] = int_pp

    # q(s) e^{-gamma s} solves the same kind of ODE with shifted coefficients.
    c_e = c + 2.0 * mu * g
    g_e = mu * g * g + (c + 1.0) * g
    int_p = kernel_integrals(mu, c_e, g_e, dt)[2]
    ref_cov = np.stack([int_p, q_end * np.exp(-g * dt) + g * int_p], axis=-1)
    ref_var = -np.expm1(-2.0 * g * dt) / (2.0 * g)
    if scalar:
        phi, forcing, cov, ref_cov, ref_var = phi[0], forcing[0], cov[0], ref_cov[0], ref_var[0]
    return StepKernel(dt, phi, forcing, cov, ref_cov, ref_var)


def heat_kernel(gamma, dt):
    """``(decay, forcing, noise_var)`` of ``du = -gamma u dt + dW`` over ``dt``."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma <= 0) or dt <= 0:
        raise ValueError("gamma and dt must be positive")
    decay = np.exp(-gamma * dt)
    forcing = -np.expm1(-gamma * dt) / gamma
    noise_var = -np.expm1(-2.0 * gamma * dt) / (2.0 * gamma)
    return decay[()], forcing[()], noise_var[()]


# --- bounds ---------------------------------------------------------------

BOUND_IDS = (
    "f_bound",
    "fprime_bound",
    "energy",
    "f_overdamped",
    "fprime_overdamped",
    "f_underdamped",
    "fprime_underdamped",
    "f_undamped",
    "fprime_undamped",
)


def bound_oracle(p: ModePropagator, t, which: str, u=0.0, v=1.0):
    """Right-hand side of the per-mode semigroup bound ``which``.

    The ``f_*`` and ``fprime_*`` bounds concern the solution started from
    ``(0, v)``; ``energy`` concerns ``(u, v)``.  ``f_bound`` and
    ``fprime_bound`` pick the variant matching the propagator's regime.  The
    over/underdamped variants hold on the closed half-spaces of the
    discriminant, so both apply in the critical regime.
    """
    mu, gamma = p.mu, np.asarray(p.gamma, dtype=float)
    t = np.asarray(t, dtype=float)
    v = abs(v)
    disc = p.discriminant
    if which in ("f_bound", "fprime_bound"):
        prefix = which.split("_")[0]
        if p.zeta == 0:
            which = f"{prefix}_undamped"
        elif np.ndim(gamma):
            over = disc >= 0
            return np.where(
                over,
                bound_oracle(p, t, f"{prefix}_overdamped", u, v) if over.all() else _over(prefix, mu, gamma, t, v),
                _under(prefix, mu, gamma, t, v),
            )
        else:
            which = f"{prefix}_overdamped" if disc >= 0 else f"{prefix}_underdamped"

    if which == "energy":
        return mu * v * v + gamma * np.asarray(u, dtype=float) ** 2 + 0.0 * t
    regime = which.split("_")[1]
    if regime == "undamped":
        if p.zeta != 0:
            raise ValueError(f"{which} applies to zeta=0 only")
        return (np.sqrt(mu / gamma) * v if which.startswith("f_") else v) + 0.0 * t
    if p.zeta != 1:
        raise ValueError(f"{which} applies to zeta=1 only")
    if regime == "overdamped":
        if np.any(disc < -p.tol_disc):
            raise ValueError(f"{which} needs 1 - 4 mu gamma >= 0")
        return _over(which.split("_")[0], mu, gamma, t, v)
    if regime == "underdamped":
        if np.any(disc > p.tol_disc):
            raise ValueError(f"{which} needs 1 - 4 mu gamma <= 0")
        return _under(which.split("_")[0], mu, gamma, t, v)
    raise ValueError(f"unknown bound {which!r}")


def _over(prefix, mu, gamma, t, v):
    factor = 4.0 * mu if prefix == "f" else 2.0
    return factor * v * np.exp(-gamma * t)


def _under(prefix, mu, gamma, t, v):
    decay = np.exp(-t / (4.0 * mu))
    if prefix == "f":
        return np.sqrt(4.0 * mu / gamma) * v * decay
    return 2.0 * v * decay


# --- operator norms of the diagonal semigroup -----------------------------

NORM_CHECKS = (
    "velocity_to_displacement",
    "displacement_to_displacement",
    "low_mode_velocity",
    "velocity_from_h_minus_one",
    "phase_space",
    "velocity_from_h_minus_one_shifted",
    "phase_space_shifted",
)


def _spectral_norm_2x2(m):
    p, q, r, s = m[..., 0, 0], m[..., 0, 1], m[..., 1, 0], m[..., 1, 1]
    return 0.5 * (np.hypot(p + s, q - r) + np.hypot(p - s, q + r))


def operator_norm_check(op: SpectralOperator, mu, lam, zeta, t, which: str):
    """Mode supremum of an operator norm of the semigroup and its bound.

    ``t`` may be an array; the supremum then runs over times as well.
    Returns ``(sup, bound)``.
    """
    alpha = op.eigenvalues
    gamma = alpha + lam
    t = np.atleast_1d(np.asarray(t, dtype=float))[:, None]
    damping = float(zeta)
    if which == "velocity_to_displacement":
        f, _ = solution(mu, damping, gamma, t, 0.0, 1.0 / mu)
        bound = 4.0 if zeta == 1 else 1.0 / np.sqrt(alpha[0] * mu)
        return float(np.max(np.abs(f))), bound
    if which == "displacement_to_displacement":
        f, _ = solution(mu, damping, gamma, t, 1.0, 0.0)
        return float(np.max(np.abs(f))), 1.0
    if which == "low_mode_velocity":
        if zeta != 1:
            raise ValueError("low_mode_velocity is a damped-only check")
        n_low = op.threshold_mode(mu, lam)
        if n_low == 0:
            return 0.0, 4.0 * mu
        f, _ = solution(mu, damping, gamma[:n_low], t, 0.0, 1.0)
        return float(np.max(np.abs(f))), 4.0 * mu
    if which in ("velocity_from_h_minus_one", "velocity_from_h_minus_one_shifted"):
        weight = np.sqrt(gamma if which.endswith("shifted") else alpha)
        lo = op.threshold_mode(mu, lam) if zeta == 1 else 0
        bound = np.sqrt(4.0 * mu) if zeta == 1 else np.sqrt(mu)
        if lo >= op.N:
            return 0.0, bound
        f, _ = solution(mu, damping, gamma[lo:], t, 0.0, 1.0)
        return float(np.max(weight[lo:] * np.abs(f))), bound
    if which in ("phase_space", "phase_space_shifted"):
        if not 0 < mu <= 1:
            raise ValueError("phase-space bound needs mu in (0, 1]")
        weight = gamma if which.endswith("shifted") else alpha
        a, E, K = _ek(mu, damping, gamma, t)
        m = np.empty(E.shape + (2, 2))
        sw = np.sqrt(weight)
        # conjugate by diag(1, weight^{-1/2}) to measure in H x H^{-1}
        m[..., 0, 0] = E - a * K
        m[..., 0, 1] = K * sw
        m[..., 1, 0] = -(gamma / mu) * K / sw
        m[..., 1, 1] = E + a * K
        if which.endswith("shifted"):
            bound = mu**-0.5
        else:
            bound = mu**-0.5 * float(np.max(np.sqrt((alpha + lam) / alpha)))
        return float(np.max(_spectral_norm_2x2(m))), bound
    raise ValueError(f"unknown check {which!r}; expected one of {NORM_CHECKS}")


def mode_limit_gap(p: ModePropagator, u=1.0, v=0.0, t0=0.0, T=1.0, n=1000, case="u"):
    """Distance of a damped mode from its first-order limit on a time grid.

    case ``"u"``:        sup_t |f(t, u, 0) - u e^{-gamma t}| on [t0, T]
    case ``"v"``:        sup_t |f(t, 0, v/mu) - v e^{-gamma t}| on [t0, T], t0 > 0
    case ``"velocity"``: sup_t |f'(t, 0, v)| on [t0, T], t0 > 0
    """
    if p.zeta != 1:
        raise ValueError("the small-mass limit concerns the damped equation")
    if case != "u" and t0 <= 0:
        raise ValueError("t0 must be positive for the velocity-driven cases")
    t = np.linspace(t0, T, n)
    gamma = float(p.gamma)
    if case == "u":
        f, _ = solution(p.mu, 1.0, gamma, t, u, 0.0)
        return float(np.max(np.abs(f - u * np.exp(-gamma * t))))
    if case == "v":
        f, _ = solution(p.mu, 1.0, gamma, t, 0.0, v / p.mu)
        return float(np.max(np.abs(f - v * np.exp(-gamma * t))))
    if case == "velocity":
        _, fp = solution(p.mu, 1.0, gamma, t, 0.0, v)
        return float(np.max(np.abs(fp)))
    raise ValueError(f"unknown case {case!r}")
