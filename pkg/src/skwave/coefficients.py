"""Nemytskii drift and diffusion fields and their Lipschitz approximations.

Coefficients act pointwise on physical grid values: ``(B u)(x) = b(u(x))`` and
``(G(u) w)(x) = g(u(x)) w(x)``.  Every field is callable as ``field(u, t)``;
the shipped forms are time-homogeneous and ignore ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Callable

import numpy as np

MULTIPLIER_FORMS = ("power_form", "constant")
DRIFT_FORMS = ("power_form", "zero")

AUDIT_RANGE = 10.0


@dataclass(frozen=True)
class HolderMultiplier:
    """Diffusion multiplier ``g(u) = floor + scale |u|^beta`` (or ``floor``).

    ``|u|^beta`` is beta-Hölder with constant 1 for every beta in (0, 1], so
    ``holder_constant = scale`` and ``g(u) <= (floor + scale)(1 + |u|)``.
    """

    beta: float = 1.0
    floor: float = 1.0
    scale: float = 1.0
    form_tag: str = "power_form"

    def __post_init__(self):
        if self.form_tag not in MULTIPLIER_FORMS:
            raise ValueError(f"unknown multiplier form {self.form_tag!r}")
        if self.floor <= 0:
            raise ValueError("floor must be positive")
        if self.form_tag == "power_form":
            if not 0.0 < self.beta <= 1.0:
                raise ValueError("beta must lie in (0, 1]")
            if self.scale < 0:
                raise ValueError("scale must be non-negative")

    @property
    def holder_constant(self) -> float:
        return self.scale if self.form_tag == "power_form" else 0.0

    @property
    def growth(self) -> float:
        return self.floor + (self.scale if self.form_tag == "power_form" else 0.0)

    @property
    def is_constant(self) -> bool:
        return self.form_tag == "constant" or self.scale == 0

    def __call__(self, u, t: float = 0.0):
        u = np.asarray(u, dtype=float)
        if self.is_constant:
            return np.full(u.shape, self.floor)
        return self.floor + self.scale * np.abs(u) ** self.beta


@dataclass(frozen=True)
class HolderDrift:
    """Drift ``b(u) = kappa sign(u) |u|^alpha``.

    The signed power is alpha-Hölder with constant ``2^{1-alpha}`` (attained at
    ``w = -u``) and grows at most like ``kappa (1 + |u|)``.
    """

    alpha: float = 1.0
    kappa: float = 1.0
    form_tag: str = "power_form"

    def __post_init__(self):
        if self.form_tag not in DRIFT_FORMS:
            raise ValueError(f"unknown drift form {self.form_tag!r}")
        if self.form_tag == "power_form" and not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")

    @property
    def holder_constant(self) -> float:
        if self.form_tag == "zero":
            return 0.0
        return abs(self.kappa) * 2.0 ** (1.0 - self.alpha)

    @property
    def growth(self) -> float:
        return 0.0 if self.form_tag == "zero" else abs(self.kappa)

    @property
    def is_zero(self) -> bool:
        return self.form_tag == "zero" or self.kappa == 0

    def __call__(self, u, t: float = 0.0):
        u = np.asarray(u, dtype=float)
        if self.is_zero:
            return np.zeros(u.shape)
        return self.kappa * np.sign(u) * np.abs(u) ** self.alpha


@dataclass(frozen=True)
class LipschitzApprox:
    """Piecewise-linear interpolant of ``base`` on ``Z/n`` inside ``[-R, R]``.

    Outside the knot range the base function is used unchanged; for the
    shipped forms it is Lipschitz there, so the whole map is Lipschitz.
    """

    n: int
    base: Callable
    knots: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    error_bound: float = 0.0
    knot_range: float = AUDIT_RANGE

    @property
    def floor(self) -> float:
        return getattr(self.base, "floor", float(np.min(self.values)))

    @property
    def is_constant(self) -> bool:
        return bool(getattr(self.base, "is_constant", False))

    @property
    def is_zero(self) -> bool:
        return bool(getattr(self.base, "is_zero", False))

    @property
    def lipschitz_constant(self) -> float:
        inner = float(np.max(np.abs(np.diff(self.values)))) * self.n
        # derivative of |u|^p beyond R is p R^{p-1} <= the last-cell slope
        return inner

    def __call__(self, u, t: float = 0.0):
        u = np.asarray(u, dtype=float)
        inside = np.abs(u) <= self.knot_range
        out = np.interp(u, self.knots, self.values)
        if not inside.all():
            out = np.where(inside, out, self.base(u, t))
        return out


def _audit_grid(n: int, R: float = AUDIT_RANGE) -> np.ndarray:
    m = int(round(2 * R * 100 * n))
    return np.linspace(-R, R, m + 1)


def mollify_1d(g: Callable, n: int, knot_range: float = AUDIT_RANGE) -> LipschitzApprox:
    """Lipschitz interpolant of the scalar map ``g`` on the grid ``Z/n``.

    ``error_bound`` is the measured sup-distance on an audit grid of spacing
    ``1/(100 n)`` over ``[-10, 10]``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    m = int(np.floor(knot_range * n))
    knots = np.arange(-m, m + 1) / n
    values = np.asarray(g(knots, 0.0), dtype=float)
    approx = LipschitzApprox(n, g, knots, values, 0.0, m / n)
    x = _audit_grid(n)
    err = float(np.max(np.abs(approx(x) - g(x, 0.0))))
    return LipschitzApprox(n, g, knots, values, err, m / n)


def apply_drift(b: Callable, u_phys, t: float = 0.0) -> np.ndarray:
    return b(u_phys, t)


def apply_multiplier(g: Callable, u_phys, w_phys, t: float = 0.0) -> np.ndarray:
    u = np.asarray(u_phys, dtype=float)
    w = np.asarray(w_phys, dtype=float)
    if u.shape[-1] != w.shape[-1]:
        raise ValueError("grid sizes differ")
    return g(u, t) * w


def inverse_multiplier(g: Callable, u_phys, w_phys, t: float = 0.0) -> np.ndarray:
    u = np.asarray(u_phys, dtype=float)
    w = np.asarray(w_phys, dtype=float)
    if u.shape[-1] != w.shape[-1]:
        raise ValueError("grid sizes differ")
    gv = g(u, t)
    floor = getattr(g, "floor", None)
    if floor is not None and np.any(gv < floor):
        raise ValueError("multiplier drops below its declared floor")
    if np.any(gv <= 0):
        raise ValueError("multiplier must be positive to invert")
    return w / gv


@dataclass(frozen=True)
class RavskyApprox:
    """Multilinear grid interpolation of a map on the first ``d`` coordinates.

    Vertex values are ``f`` at points of ``(Z/n)^d`` with their norm truncated
    at ``n``; the interpolation weights are products of one-dimensional hat
    weights, so they form a partition of unity.
    """

    f: Callable
    d: int
    n: int

    def _vertex_value(self, z):
        val = np.asarray(self.f(z), dtype=float)
        if val.ndim == z.ndim - 1:
            mag = np.abs(val)
            return np.where(mag > self.n, np.sign(val) * self.n, val)
        mag = np.linalg.norm(val, axis=-1, keepdims=True)
        return np.where(mag > self.n, val * (self.n / np.where(mag > 0, mag, 1.0)), val)

    def weights(self, x):
        """Vertex offsets ``(2^d, d)`` and weights ``(..., 2^d)`` at ``x``."""
        x = np.asarray(x, dtype=float)[..., : self.d]
        frac = x * self.n - np.floor(x * self.n)
        corners = np.array(list(product((0, 1), repeat=self.d)))
        w = np.ones(x.shape[:-1] + (len(corners),))
        for i in range(self.d):
            w *= np.where(corners[:, i] == 1, frac[..., i, None], 1.0 - frac[..., i, None])
        return corners, w

    def __call__(self, x):
        x = np.asarray(x, dtype=float)[..., : self.d]
        base = np.floor(x * self.n)
        corners, w = self.weights(x)
        out = 0.0
        for j, c in enumerate(corners):
            val = self._vertex_value((base + c) / self.n)
            wj = w[..., j]
            out = out + (wj if val.ndim == wj.ndim else wj[..., None]) * val
        return out


def ravsky_approximate(f: Callable, d: int, n: int) -> RavskyApprox:
    """Lipschitz approximation of ``f`` acting on ``x[..., :d]``; ``d <= 3``."""
    if d < 1 or d > 3:
        raise ValueError("grid interpolation is limited to 1 <= d <= 3")
    if n < 1:
        raise ValueError("n must be >= 1")
    return RavskyApprox(f, d, n)

