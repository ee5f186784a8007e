"""Eigenvalue families, interpolation-space norms and the sine transform.

All spectral quantities live on the Dirichlet sine basis
``e_k(x) = sqrt(2) sin(k pi x)`` of ``L^2(0, 1)``.  Physical samples are taken
on the interior grid ``x_j = j / (G + 1)``, ``j = 1..G``, on which the first
``G`` basis vectors are exactly orthonormal under the quadrature weight
``1 / (G + 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

FAMILIES = ("dirichlet_laplacian", "bilaplacian_1d", "power_law")


@dataclass(frozen=True)
class SpectralOperator:
    """Diagonal operator ``-A`` given by its ascending eigenvalues.

    ``eta0`` is the summability exponent: ``sum_k alpha_k^{-(1-eta)}`` is
    finite for every ``eta < eta0``.
    """

    eigenvalues: np.ndarray
    eta0: float
    family_tag: str
    scale: float = 1.0

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=float)
        ev.setflags(write=False)
        object.__setattr__(self, "eigenvalues", ev)

    @property
    def N(self) -> int:
        return self.eigenvalues.size

    @property
    def growth_exponent(self) -> float:
        return 1.0 / (1.0 - self.eta0)

    @property
    def growth_constant(self) -> float:
        """Constant ``C`` in ``alpha_k = C k^p`` for the shipped families."""
        if self.family_tag == "dirichlet_laplacian":
            return np.pi**2
        if self.family_tag == "bilaplacian_1d":
            return np.pi**4
        return self.scale

    def partial_sum(self, eta: float, n: int | None = None) -> float:
        """``sum_{k <= n} alpha_k^{-(1 - eta)}``."""
        ev = self.eigenvalues if n is None else self.eigenvalues[:n]
        return float(np.sum(ev ** (-(1.0 - eta))))

    def tail_bound(self, eta: float) -> float:
        """Integral-test bound on the infinite sum, valid for ``eta < eta0``."""
        if not eta < self.eta0:
            raise ValueError(f"eta={eta} must be below eta0={self.eta0}")
        q = self.growth_exponent * (1.0 - eta)
        c = self.growth_constant ** (-(1.0 - eta))
        return c * (1.0 + 1.0 / (q - 1.0))

    def threshold_mode(self, mu: float, lam: float = 0.0) -> int:
        """Largest k (1-based) with ``1 - 4 mu (alpha_k + lam) >= 0``, or 0."""
        return int(np.count_nonzero(1.0 - 4.0 * mu * (self.eigenvalues + lam) >= 0.0))


def make_operator(family_tag: str, N: int, eta0: float | None = None, scale: float = 1.0) -> SpectralOperator:
    """Build one of the shipped eigenvalue families.

    ``dirichlet_laplacian`` and ``bilaplacian_1d`` fix ``eta0`` (1/2 and 3/4)
    regardless of the argument; ``power_law`` uses
    ``alpha_k = scale * k^{1/(1-eta0)}``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if eta0 is not None and not 0.0 < eta0 < 1.0:
        raise ValueError(f"eta0 must lie in (0, 1), got {eta0}")
    if scale <= 0:
        raise ValueError("scale must be positive")
    k = np.arange(1, N + 1, dtype=float)
    if family_tag == "dirichlet_laplacian":
        return SpectralOperator((k * np.pi) ** 2, 0.5, family_tag)
    if family_tag == "bilaplacian_1d":
        return SpectralOperator((k * np.pi) ** 4, 0.75, family_tag)
    if family_tag == "power_law":
        if eta0 is None:
            raise ValueError("power_law needs eta0")
        return SpectralOperator(scale * k ** (1.0 / (1.0 - eta0)), eta0, family_tag, scale)
    raise ValueError(f"unknown family {family_tag!r}; expected one of {FAMILIES}")


@dataclass(frozen=True)
class NormSpec:
    delta: float = 0.0
    lambda_shift: float = 0.0


def norm(v, spec: NormSpec | None = None, op: SpectralOperator | None = None) -> float:
    """``|v|_{H^delta(lambda)}`` from sine coefficients ``v``.

    With ``delta == 0`` this is the plain Euclidean norm and ``op`` may be
    omitted.
    """
    c = np.asarray(v, dtype=float)
    if c.size == 0:
        return 0.0
    spec = spec or NormSpec()
    if spec.delta == 0:
        return float(np.sqrt(np.sum(c * c)))
    if op is None:
        raise ValueError("a weighted norm needs the operator")
    if c.shape[-1] > op.N:
        raise ValueError("vector has more modes than the operator")
    w = (op.eigenvalues[: c.shape[-1]] + spec.lambda_shift) ** spec.delta
    return float(np.sqrt(np.sum(w * c * c)))


def grid(G: int) -> np.ndarray:
    if G < 1:
        raise ValueError("grid size must be >= 1")
    return np.arange(1, G + 1) / (G + 1.0)


@lru_cache(maxsize=64)
def _sine_matrix(N: int, G: int) -> np.ndarray:
    """``S[k-1, j-1] = sqrt(2) sin(k pi x_j)``; read-only and cached."""
    k = np.arange(1, N + 1)[:, None]
    j = np.arange(1, G + 1)[None, :]
    S = np.sqrt(2.0) * np.sin(np.pi * ((k * j) % (2 * (G + 1))) / (G + 1.0))
    S.setflags(write=False)
    return S


def to_physical(v, G: int) -> np.ndarray:
    """Evaluate ``sum_k c_k e_k`` on the interior grid; batches along axis 0."""
    c = np.asarray(v, dtype=float)
    if G < 1:
        raise ValueError("grid size must be >= 1")
    return c @ _sine_matrix(c.shape[-1], G)


def to_spectral(samples, N: int) -> np.ndarray:
    """Discrete sine coefficients of grid samples, truncated to ``N`` modes.

    Exact inverse of :func:`to_physical` on ``span{e_1..e_N}`` when
    ``G >= N``.
    """
    u = np.asarray(samples, dtype=float)
    G = u.shape[-1]
    if G < 1:
        raise ValueError("grid size must be >= 1")
    if N > G:
        raise ValueError(f"cannot resolve {N} modes on a grid of {G} points")
    return (u @ _sine_matrix(N, G).T) / (G + 1.0)


def grid_norm(samples) -> np.ndarray:
    """Discrete L^2 norm ``sqrt(sum_j u_j^2 / (G + 1))`` along the last axis."""
    u = np.asarray(samples, dtype=float)
    return np.sqrt(np.sum(u * u, axis=-1) / (u.shape[-1] + 1.0))


@dataclass
class ModeVector:
    """Sine coefficients with the convenience norms attached."""

    coeffs: np.ndarray
    op: SpectralOperator | None = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return len(self.coeffs)

    def norm(self, delta: float = 0.0, lambda_shift: float = 0.0) -> float:
        return norm(self.coeffs, NormSpec(delta, lambda_shift), self.op)

    def to_physical(self, G: int) -> np.ndarray:
        return to_physical(self.coeffs, G)

    @classmethod
    def from_physical(cls, samples, N: int, op: SpectralOperator | None = None) -> "ModeVector":
        return cls(to_spectral(samples, N), op)
