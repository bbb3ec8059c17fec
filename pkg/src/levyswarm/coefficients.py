"""Closure constants and scaling exponents of the macroscopic Levy-swarm models.

Everything here is a pure function of value inputs. Circle integrals are done
by adaptive Gauss-Kronrod quadrature (``scipy.integrate.quad``); the von Mises
Bessel identities are kept as independent cross-checks in the tests.
"""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np
from scipy import integrate, special

S_AREA_2D = 2.0 * math.pi

QUAD_EPSABS = 1e-12
QUAD_EPSREL = 1e-10
NORMALIZATION_TOL = 1e-8
DEGENERATE_C0 = 1e-12
_BOUNDARY_TOL = 1e-12


class ParameterError(ValueError):
    """A parameter violates one of the model's stated constraints."""


class UnsupportedDimension(ParameterError):
    pass


# --------------------------------------------------------------------------
# Circular distributions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class VonMises:
    """Von Mises density on the circle as a function of the angle ``s`` from its mean.

    ``kappa = 0`` is the uniform density ``1/(2 pi)``.
    """

    kappa: float = 0.0

    def __post_init__(self):
        if not (self.kappa >= 0.0 and math.isfinite(self.kappa)):
            raise ParameterError(f"von Mises concentration must be finite and >= 0, got {self.kappa}")

    def pdf(self, s):
        # i0e keeps large kappa finite: exp(k cos s) / I0(k) = exp(k (cos s - 1)) / i0e(k)
        k = self.kappa
        return np.exp(k * (np.cos(s) - 1.0)) / (2.0 * math.pi * special.i0e(k))

    def mean_resultant(self) -> float:
        """E[cos s] = I1(k)/I0(k)."""
        if self.kappa == 0.0:
            return 0.0
        return float(special.ive(1, self.kappa) / special.ive(0, self.kappa))


def uniform_circle() -> VonMises:
    return VonMises(0.0)


def _density(dist) -> Callable[[float], float]:
    if hasattr(dist, "pdf"):
        return dist.pdf
    if callable(dist):
        return dist
    raise TypeError(f"expected a circular density or callable, got {type(dist).__name__}")


def circle_integral(f: Callable[[float], float]) -> float:
    """Integrate ``f(s)`` over one period, centred on the mode at ``s = 0``."""
    val, _ = integrate.quad(
        f, -math.pi, math.pi, points=[0.0], epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=400
    )
    return val


def check_normalized(dist) -> Callable[[float], float]:
    phi = _density(dist)
    total = circle_integral(phi)
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise ParameterError(f"alignment density integrates to {total!r}, not 1 (tolerance {NORMALIZATION_TOL})")
    return phi


# --------------------------------------------------------------------------
# Parameter containers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelParams:
    """Microscopic and physical parameters of the swarm model (two dimensions).

    ``c0`` is derived as ``c * epsilon**gamma`` and stored; use
    :meth:`with_c0` to build a parameter set from the scaled speed instead.
    ``nu1`` defaults to the second eigenvalue of the von Mises tumble kernel,
    ``I1(kappa_tumble)/I0(kappa_tumble)`` (zero for the uniform kernel).
    """

    alpha: float = 1.5
    sigma0: float = 1.0
    c: float = 3.0
    epsilon: float = 0.005
    gamma: float = 0.5
    zeta: float = 1.0
    nu1: float | None = None
    ell: float = 0.0
    kappa_tumble: float = 0.0
    kappa_align: float = 0.0
    rho_diam: float = 7.5
    n_robots: int = 20
    arena: tuple[float, float] = (200.0, 160.0)
    dim: int = 2
    collision_prefactor: float = 8.0 / 3.0
    c0: float = field(init=False)

    def __post_init__(self):
        if self.nu1 is None:
            object.__setattr__(self, "nu1", VonMises(self.kappa_tumble).mean_resultant())
        object.__setattr__(self, "arena", tuple(float(v) for v in self.arena))
        object.__setattr__(self, "c0", self.c * self.epsilon**self.gamma)
        self.validate()

    def validate(self) -> None:
        problems = []
        if not 1.0 < self.alpha < 2.0:
            problems.append(f"alpha = {self.alpha} not in (1, 2)")
        if not 0.0 <= self.zeta <= 1.0:
            problems.append(f"zeta = {self.zeta} not in [0, 1]")
        if not self.sigma0 > 0.0:
            problems.append(f"sigma0 = {self.sigma0} not > 0")
        if not self.c > 0.0:
            problems.append(f"c = {self.c} not > 0")
        if not self.epsilon > 0.0:
            problems.append(f"epsilon = {self.epsilon} not > 0")
        if not self.rho_diam > 0.0:
            problems.append(f"rho_diam = {self.rho_diam} not > 0")
        # nu1 is a free input; beyond |S|/4 the diffusion constant changes sign
        if not -1.0 <= self.nu1 <= S_AREA_2D / 4.0:
            problems.append(f"nu1 = {self.nu1} not in [-1, |S|/4]")
        if self.ell < 0.0:
            problems.append(f"ell = {self.ell} not >= 0")
        if self.kappa_tumble < 0.0 or self.kappa_align < 0.0:
            problems.append("concentration parameters must be >= 0")
        if self.n_robots < 1:
            problems.append(f"n_robots = {self.n_robots} not >= 1")
        if len(self.arena) != 2 or min(self.arena) <= 0.0:
            problems.append(f"arena = {self.arena} must be two positive lengths")
        if self.dim != 2:
            problems.append(f"dim = {self.dim}; only dim = 2 is supported")
        if not any(math.isclose(self.collision_prefactor, v) for v in (4.0 / 3.0, 8.0 / 3.0)):
            problems.append(f"collision_prefactor = {self.collision_prefactor} not in {{4/3, 8/3}}")
        if problems:
            raise ParameterError("; ".join(problems))

    @classmethod
    def with_c0(cls, c0: float, *, epsilon: float = 0.005, gamma: float = 0.5, **kwargs) -> "ModelParams":
        return cls(c=c0 / epsilon**gamma, epsilon=epsilon, gamma=gamma, **kwargs)

    @property
    def align_dist(self) -> VonMises:
        return VonMises(self.kappa_align)

    @property
    def arena_area(self) -> float:
        return self.arena[0] * self.arena[1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arena"] = list(self.arena)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        """Inverse of :meth:`to_dict`; the derived ``c0`` is recomputed, unknown keys are rejected."""
        d = dict(d)
        d.pop("c0", None)
        names = {f.name for f in fields(cls) if f.init}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ParameterError(f"unknown model parameters: {', '.join(unknown)}")
        if "arena" in d:
            d["arena"] = tuple(d["arena"])
        return cls(**d)


@dataclass(frozen=True)
class ScalingParams:
    epsilon: float
    gamma: float
    mu: float
    eta: float
    xi_minus_theta: float

    @property
    def run_time_scale_factor(self) -> float:
        """epsilon**mu, the factor mapping sigma0 to the scaled run-time scale."""
        return self.epsilon**self.mu


@dataclass(frozen=True)
class ClosureCoeffs:
    c_alpha: float
    f_const: float
    f_slope: float
    g_slope: float
    z: float
    a0: float
    a1: float
    a3: float
    cc0: float
    cc1: float
    cc2: float
    b: float
    A: float
    B: float
    s_area: float = S_AREA_2D
    degenerate: bool = False

    def mobility(self, u):
        """F(u) = f_const + f_slope * u."""
        return self.f_const + self.f_slope * u

    def alignment_gain(self, u):
        """G(u) = g_slope * u."""
        return self.g_slope * u

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# Operations
# --------------------------------------------------------------------------


def validate_scaling(alpha: float, gamma: float, epsilon: float) -> ScalingParams:
    """Exponents tying the run-time, alignment and packing scalings to the speed scaling.

    Raises ParameterError naming every violated inequality.
    """
    if not 1.0 < alpha < 2.0:
        raise ParameterError(f"alpha = {alpha} not in (1, 2)")
    if not 0.0 < gamma < 1.0:
        raise ParameterError(f"gamma = {gamma} not in (0, 1)")
    if not epsilon > 0.0:
        raise ParameterError(f"epsilon = {epsilon} not > 0")

    # rational arithmetic on the decimal inputs, so 1.3 -> 13/10 and mu(1.3, 0.5) is exactly 7/6
    a, g = Fraction(repr(float(alpha))), Fraction(repr(float(gamma)))
    mu_q = (1 - a * (1 - g)) / (a - 1)
    xt_q = 1 - g / (a - 1)
    mu, eta, xi_minus_theta = float(mu_q), -float(gamma), float(xt_q)

    violated = []
    if not mu_q > _BOUNDARY_TOL:
        violated.append(f"mu = {_fmt(mu)} not > 0")
    if not xt_q < -_BOUNDARY_TOL:
        violated.append(f"xi-theta = {_fmt(xi_minus_theta)} not < 0")
    if violated:
        raise ParameterError("scaling constraint violated: " + "; ".join(violated))
    return ScalingParams(epsilon=epsilon, gamma=gamma, mu=mu, eta=eta, xi_minus_theta=xi_minus_theta)


def _fmt(x: float) -> str:
    return "0" if abs(x) < _BOUNDARY_TOL else f"{x:.6g}"


def diffusion_constant(params: ModelParams) -> float:
    """Fractional diffusion constant C_alpha."""
    a = params.alpha
    if not 1.0 < a < 2.0:
        raise ParameterError(f"alpha = {a} not in (1, 2); C_alpha has poles at the endpoints")
    s = S_AREA_2D
    return (
        -(params.sigma0 ** (a - 2.0)) * params.c0 ** (a - 1.0) * (a - 1.0) ** 2 * math.pi
        / (math.sin(math.pi * a) * math.gamma(a))
        * (s - 4.0 * params.zeta * params.nu1) / s**2
    )


def collision_b(dim: int = 2) -> float:
    """b = integral over the circle of |theta_1 - theta_2| d theta_2."""
    if dim != 2:
        raise UnsupportedDimension(f"collision integral only available for dim = 2, got dim = {dim}")
    # |theta_1 - theta_2| = 2|sin(s/2)| for the angle s between them; kink at s = 0
    val, _ = integrate.quad(
        lambda s: 2.0 * abs(math.sin(0.5 * s)), 0.0, 2.0 * math.pi, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL
    )
    return val


def closure_z(align_dist) -> float:
    """First moment z of the alignment density Phi(cos s)."""
    phi = check_normalized(align_dist)
    return circle_integral(lambda s: phi(s) * math.cos(s))


def mobility_terms(params: ModelParams, b: float | None = None) -> tuple[float, float, float]:
    """Coefficients of F(u) = f_const + f_slope u and G(u) = g_slope u."""
    if b is None:
        b = collision_b(params.dim)
    s = S_AREA_2D
    n = params.dim
    a = params.alpha
    f_const = (a - 1.0) * n * (1.0 - params.zeta * params.nu1) / (params.sigma0 * s)
    f_slope = params.collision_prefactor * b * params.c0 / s**2
    z = closure_z(params.align_dist)
    g_slope = (1.0 - params.zeta) * s * z * (a - 1.0) / params.sigma0
    return f_const, f_slope, g_slope


@dataclass(frozen=True)
class HyperbolicCoeffs:
    cc0: float
    cc1: float
    cc2: float
    a0: float
    a1: float
    a3: float
    degenerate: bool


def hyperbolic_coeffs(align_dist, zeta: float, c0: float) -> HyperbolicCoeffs:
    """Second-moment closure of the swarming system; ``degenerate`` flags |C0| < 1e-12."""
    if not 0.0 <= zeta <= 1.0:
        raise ParameterError(f"zeta = {zeta} not in [0, 1]")
    phi = check_normalized(align_dist)
    z = circle_integral(lambda s: phi(s) * math.cos(s))
    a0 = circle_integral(lambda s: phi(s) * math.cos(s) ** 2)
    a1 = circle_integral(lambda s: phi(s) * math.sin(s) ** 2)
    a3 = a0 - a1
    cc0 = z * (1.0 - zeta)
    cc1 = c0 * (1.0 - zeta) * a3
    cc2 = c0 * (1.0 - zeta) * a1 + c0 * math.pi * zeta
    return HyperbolicCoeffs(cc0, cc1, cc2, a0, a1, a3, degenerate=abs(cc0) < DEGENERATE_C0)


def laplace_AB(alpha: float, sigma0: float) -> tuple[float, float]:
    """Leading coefficients of the small-lambda expansion of phi_hat/psi_hat."""
    if not 1.0 < alpha < 2.0:
        raise ParameterError(f"alpha = {alpha} not in (1, 2)")
    if not sigma0 > 0.0:
        raise ParameterError(f"sigma0 = {sigma0} not > 0")
    A = (alpha - 1.0) / sigma0
    B = -(sigma0 ** (alpha - 2.0)) * (alpha - 1.0) ** 2 * math.gamma(1.0 - alpha)
    return A, B


def closure_coeffs(params: ModelParams) -> ClosureCoeffs:
    """All derived constants for one parameter set."""
    b = collision_b(params.dim)
    f_const, f_slope, g_slope = mobility_terms(params, b)
    hyp = hyperbolic_coeffs(params.align_dist, params.zeta, params.c0)
    A, B = laplace_AB(params.alpha, params.sigma0)
    return ClosureCoeffs(
        c_alpha=diffusion_constant(params),
        f_const=f_const,
        f_slope=f_slope,
        g_slope=g_slope,
        z=closure_z(params.align_dist),
        a0=hyp.a0,
        a1=hyp.a1,
        a3=hyp.a3,
        cc0=hyp.cc0,
        cc1=hyp.cc1,
        cc2=hyp.cc2,
        b=b,
        A=A,
        B=B,
        degenerate=hyp.degenerate,
    )
