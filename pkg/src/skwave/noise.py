"""Counter-based Gaussian noise streams.

Stream ``(seed, stream_id)`` is a Philox generator keyed by the pair.  Each
time step owns a fixed, aligned slice of the counter space, so the normals of
step ``m`` are reproducible from ``(seed, stream_id, m)`` without generating
earlier steps.  Normals come from Box-Muller on raw 64-bit words, which keeps
the number of words consumed per step fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_TWO_PI = 2.0 * np.pi
_INV53 = 2.0**-53


def words_per_step(count: int) -> int:
    """Raw words reserved per step; a multiple of Philox's 4-word block."""
    return 4 * ((count + 3) // 4)


def _box_muller(raw: np.ndarray) -> np.ndarray:
    u1 = ((raw[..., 0::2] >> np.uint64(11)).astype(float) + 1.0) * _INV53
    u2 = (raw[..., 1::2] >> np.uint64(11)).astype(float) * _INV53
    r = np.sqrt(-2.0 * np.log(u1))
    out = np.empty(raw.shape)
    out[..., 0::2] = r * np.cos(_TWO_PI * u2)
    out[..., 1::2] = r * np.sin(_TWO_PI * u2)
    return out


def stream_normals(seed: int, stream_id: int, first_step: int, n_steps: int, count: int) -> np.ndarray:
    """Standard normals for steps ``first_step .. first_step + n_steps - 1``.

    Returns shape ``(n_steps, count)``.
    """
    w = words_per_step(count)
    bg = np.random.Philox(key=[seed, stream_id], counter=[first_step * (w // 4), 0, 0, 0])
    raw = bg.random_raw(n_steps * w).reshape(n_steps, w)
    return _box_muller(raw)[:, :count]


@dataclass(frozen=True)
class NoiseStream:
    """Noise of one Monte Carlo sample."""

    seed: int
    stream_id: int = 0

    def normals(self, step: int, count: int, n_steps: int = 1) -> np.ndarray:
        out = stream_normals(self.seed, self.stream_id, step, n_steps, count)
        return out[0] if n_steps == 1 else out

    def increments(self, step: int, N: int, dt: float) -> np.ndarray:
        """Wiener increments ``<W(t_{m+1}) - W(t_m), e_k>`` for ``k = 1..N``."""
        return np.sqrt(dt) * self.normals(step, N)


def block_normals(seed: int, stream_ids, first_step: int, n_steps: int, count: int) -> np.ndarray:
    """Normals for several streams, shape ``(len(stream_ids), n_steps, count)``."""
    return np.stack([stream_normals(seed, int(s), first_step, n_steps, count) for s in stream_ids])
