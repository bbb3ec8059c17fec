"""Levy run-time law: survival, stopping rate, inverse-CDF sampling, Laplace check."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .coefficients import ParameterError
from .rng import CounterRNG, RngStream  # noqa: F401  (re-exported stream types)

LAPLACE_TAIL = 1e-12
LAPLACE_ORDER_TOL = 0.2


class LaplaceQuadratureError(RuntimeError):
    def __init__(self, lam: float, detail: str):
        super().__init__(f"Laplace quadrature did not converge at lambda = {lam!r}: {detail}")
        self.lam = lam


@dataclass(frozen=True)
class RunTimeLaw:
    """Run times with survival function (a / (a + tau))**alpha."""

    alpha: float
    a: float

    def __post_init__(self):
        if not 1.0 < self.alpha < 2.0:
            raise ParameterError(f"alpha = {self.alpha} not in (1, 2)")
        if not self.a > 0.0:
            raise ParameterError(f"time scale a = {self.a} not > 0")

    @classmethod
    def scaled(cls, alpha: float, sigma0: float, epsilon: float, mu: float) -> "RunTimeLaw":
        """Law with time scale sigma0 * epsilon**mu."""
        return cls(alpha, sigma0 * epsilon**mu)

    @property
    def mean(self) -> float:
        return self.a / (self.alpha - 1.0)

    def density(self, tau):
        """phi(tau) = -d psi / d tau."""
        tau = _nonneg(tau)
        return self.alpha * self.a**self.alpha / (self.a + tau) ** (self.alpha + 1.0)

    def from_uniform(self, u):
        """Inverse CDF: u in (0, 1] maps to a run time >= 0."""
        u = np.asarray(u, dtype=float)
        return self.a * (u ** (-1.0 / self.alpha) - 1.0)


def _nonneg(tau):
    arr = np.asarray(tau, dtype=float)
    if np.any(arr < 0.0):
        raise ValueError("run time tau must be >= 0")
    return arr if arr.ndim else float(arr)


def survival(law: RunTimeLaw, tau):
    """Probability that a run lasts longer than ``tau``."""
    tau = _nonneg(tau)
    return (law.a / (law.a + tau)) ** law.alpha


def stopping_rate(law: RunTimeLaw, tau):
    """beta(tau) = alpha / (a + tau); decreasing in tau."""
    tau = _nonneg(tau)
    return law.alpha / (law.a + tau)


def sample_run_time(law: RunTimeLaw, rng, size: int | None = None):
    """Draw run times by inverting the survival function.

    ``rng`` is an :class:`RngStream` (or anything with ``random(size)``);
    the uniform is taken on (0, 1] so run times stay finite.
    """
    u = 1.0 - np.asarray(rng.random(size), dtype=float)
    tau = law.from_uniform(u)
    return float(tau) if size is None else tau


# --------------------------------------------------------------------------
# Laplace-transform check of the small-lambda expansion
# --------------------------------------------------------------------------


def laplace_truncation(alpha: float, a: float, lam):
    """Three-term small-lambda expansion of phi_hat / psi_hat."""
    lam = np.asarray(lam, dtype=float)
    return (alpha - 1.0) / a - lam / (2.0 - alpha) - a ** (alpha - 2.0) * lam ** (alpha - 1.0) * (
        alpha - 1.0
    ) ** 2 * math.gamma(1.0 - alpha)


def _laplace_pieces(law: RunTimeLaw) -> list[float]:
    # split at tau = a, then by decades out to where psi < 1e-12 psi(0)
    tau_max = law.a * (LAPLACE_TAIL ** (-1.0 / law.alpha) - 1.0)
    edges = [0.0, law.a]
    while edges[-1] * 10.0 < tau_max:
        edges.append(edges[-1] * 10.0)
    edges.append(tau_max)
    return edges


def laplace_transform(f, law: RunTimeLaw, lam: float) -> float:
    total = 0.0
    edges = _laplace_pieces(law)
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, err = integrate.quad(lambda t: f(t) * math.exp(-lam * t), lo, hi, epsabs=1e-14, epsrel=1e-12, limit=200)
        if not math.isfinite(val) or err > 1e-9 * max(1.0, abs(val)):
            raise LaplaceQuadratureError(lam, f"piece [{lo:g}, {hi:g}] error estimate {err:.3g}")
        total += val
    return total


def laplace_ratio(law: RunTimeLaw, lam: float) -> float:
    """phi_hat(lam) / psi_hat(lam) by direct quadrature of the two transforms."""
    psi_hat = laplace_transform(lambda t: (law.a / (law.a + t)) ** law.alpha, law, lam)
    phi_hat = laplace_transform(lambda t: law.alpha * law.a**law.alpha / (law.a + t) ** (law.alpha + 1.0), law, lam)
    return phi_hat / psi_hat


@dataclass
class LaplaceReport:
    alpha: float
    a: float
    lambdas: list[float]
    numeric: list[float]
    truncation: list[float]
    residual: list[float]
    halving_ratios: list[float] = field(default_factory=list)
    observed_orders: list[float] = field(default_factory=list)
    expected_ratio: float = 0.0
    tolerance: float = LAPLACE_ORDER_TOL

    @property
    def passes(self) -> bool:
        """Every halving ratio within the relative tolerance of 2**alpha."""
        return bool(self.halving_ratios) and all(
            abs(r / self.expected_ratio - 1.0) <= self.tolerance for r in self.halving_ratios
        )

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items()}
        d["passes"] = self.passes
        return d


def verify_laplace_expansion(alpha: float, sigma0: float, lambda_grid) -> LaplaceReport:
    """Compare quadrature of phi_hat/psi_hat with its three-term expansion.

    The residual is relative to the quadrature value. ``halving_ratios`` are
    r(lam)/r(lam') for consecutive grid points sorted in decreasing order;
    for a remainder of order lam**alpha they approach 2**alpha when the grid
    halves.
    """
    law = RunTimeLaw(alpha, sigma0)
    lams = sorted((float(x) for x in lambda_grid), reverse=True)
    if not lams or lams[-1] <= 0.0:
        raise ValueError("lambda_grid must contain positive values")
    numeric = [laplace_ratio(law, lam) for lam in lams]
    trunc = [float(laplace_truncation(alpha, law.a, lam)) for lam in lams]
    resid = [abs(n - t) / abs(n) for n, t in zip(numeric, trunc)]
    ratios, orders = [], []
    for i in range(len(lams) - 1):
        ratios.append(resid[i] / resid[i + 1])
        orders.append(math.log(resid[i] / resid[i + 1]) / math.log(lams[i] / lams[i + 1]))
    return LaplaceReport(
        alpha=alpha,
        a=law.a,
        lambdas=lams,
        numeric=numeric,
        truncation=trunc,
        residual=resid,
        halving_ratios=ratios,
        observed_orders=orders,
        expected_ratio=2.0**alpha,
    )
