"""Counter-based random numbers keyed by (seed, agent, epoch, draw).

A variate is a pure function of its key, so agents can be updated in any order
(or in parallel) and still reproduce the same trajectory bit for bit. The mixer
is the splitmix64 finaliser applied along the key chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = (np.uint64(k) for k in (30, 27, 31, 11))
_INV_2_53 = 1.0 / 9007199254740992.0

_VM_UNIFORM_BELOW = 1e-8
_VM_GAUSSIAN_ABOVE = 1e5
_VM_MAX_ATTEMPTS = 64


def _mix(x: np.ndarray) -> np.ndarray:
    z = x + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _u64(x) -> np.ndarray:
    return np.asarray(x).astype(np.uint64, copy=False)


def hash_key(seed, agent, epoch, draw) -> np.ndarray:
    """64-bit hash of the broadcast key arrays."""
    with np.errstate(over="ignore"):
        h = _mix(np.atleast_1d(_u64(seed)))
        h = _mix(h ^ _u64(agent))
        h = _mix(h ^ _u64(epoch))
        h = _mix(h ^ _u64(draw))
    return h


def uniform_from_key(seed, agent, epoch, draw) -> np.ndarray:
    """Uniform doubles on [0, 1) with 53 random bits."""
    return (hash_key(seed, agent, epoch, draw) >> _S11).astype(np.float64) * _INV_2_53


class CounterRNG:
    """Family of independent streams sharing one seed."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF

    def uniform(self, agent, epoch, draw) -> np.ndarray:
        return uniform_from_key(self.seed, agent, epoch, draw)

    def stream(self, agent: int = 0, epoch: int = 0) -> "RngStream":
        return RngStream(self.seed, (int(agent), int(epoch)))

    def __repr__(self):
        return f"CounterRNG(seed={self.seed})"


@dataclass
class RngStream:
    """One substream, addressed by ``stream_key = (agent, epoch)``.

    Draws are numbered from zero; ``position`` is the index of the next draw.
    A stream is stateful and must not be shared between threads.
    """

    seed: int
    stream_key: tuple[int, int] = (0, 0)
    position: int = field(default=0)

    def random(self, size: int | None = None) -> np.ndarray | float:
        n = 1 if size is None else int(size)
        agent, epoch = self.stream_key
        idx = np.arange(self.position, self.position + n, dtype=np.uint64)
        self.position += n
        u = uniform_from_key(self.seed, agent, epoch, idx)
        return float(u[0]) if size is None else u

    def open_unit(self, size: int | None = None):
        """Uniform on (0, 1]; never returns 0."""
        u = self.random(size)
        return 1.0 - u

    def slot_sampler(self, n: int):
        """Return ``draw(slot)`` giving ``n`` uniforms per slot, consuming fresh draws."""
        base = self.position
        used = [0]

        def draw(slot: int) -> np.ndarray:
            used[0] = max(used[0], slot + 1)
            agent, epoch = self.stream_key
            idx = base + np.arange(n, dtype=np.uint64) * np.uint64(_SLOT_STRIDE) + np.uint64(slot)
            return uniform_from_key(self.seed, agent, epoch, idx)

        self.position += n * _SLOT_STRIDE
        return draw


# slots per sample when a stream feeds the vectorised circular samplers
_SLOT_STRIDE = 2 + 2 * _VM_MAX_ATTEMPTS + 2


def von_mises_angles(kappa: float, n: int, draw) -> np.ndarray:
    """Angles from von Mises(0, kappa), vectorised over ``n`` samples.

    ``draw(slot)`` must return ``n`` independent uniforms on [0, 1) for each
    integer slot; slot 0 fixes the sign, later slots feed the Best-Fisher
    rejection loop. kappa below 1e-8 gives the uniform law and above 1e5 a
    wrapped normal with variance 1/kappa.
    """
    if n == 0:
        return np.empty(0)
    if kappa < _VM_UNIFORM_BELOW:
        return math.pi * (2.0 * draw(0) - 1.0)
    if kappa > _VM_GAUSSIAN_ABOVE:
        u1 = 1.0 - draw(1)
        u2 = draw(2)
        g = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)
        return _wrap(g / math.sqrt(kappa))

    tau = 1.0 + math.sqrt(1.0 + 4.0 * kappa * kappa)
    rho = (tau - math.sqrt(2.0 * tau)) / (2.0 * kappa)
    r = (1.0 + rho * rho) / (2.0 * rho)

    f = np.empty(n)
    pending = np.arange(n)
    for attempt in range(_VM_MAX_ATTEMPTS):
        u1 = draw(1 + 2 * attempt)[pending]
        u2 = draw(2 + 2 * attempt)[pending]
        zz = np.cos(math.pi * u1)
        ff = (1.0 + r * zz) / (r + zz)
        cc = kappa * (r - ff)
        with np.errstate(divide="ignore"):
            ok = (cc * (2.0 - cc) - u2 > 0.0) | (np.log(cc / u2) + 1.0 - cc >= 0.0)
        f[pending[ok]] = ff[ok]
        pending = pending[~ok]
        if pending.size == 0:
            break
    else:
        raise RuntimeError(f"von Mises sampler did not accept within {_VM_MAX_ATTEMPTS} attempts")
    theta = np.arccos(np.clip(f, -1.0, 1.0))
    return np.where(draw(0) < 0.5, -theta, theta)


def _wrap(x: np.ndarray) -> np.ndarray:
    return (x + math.pi) % (2.0 * math.pi) - math.pi


def rotate(vectors: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rotate rows of an (n, 2) array by the given angles, then renormalise."""
    c, s = np.cos(angles), np.sin(angles)
    x, y = vectors[:, 0], vectors[:, 1]
    out = np.column_stack((c * x - s * y, s * x + c * y))
    return out / np.linalg.norm(out, axis=1, keepdims=True)
