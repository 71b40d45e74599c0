"""Particle motions: Brownian, symmetric alpha-stable and Ornstein-Uhlenbeck.

Each family has an exact-in-law transition sampler and an expectation
semigroup acting on Gaussian bumps.  Brownian and OU act in closed form;
the stable semigroup goes through Fourier quadrature.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .quadrature import integrate

if TYPE_CHECKING:
    from .model import GaussianBump

__all__ = [
    "MotionSpec",
    "sample_increment",
    "char_exponent",
    "semigroup_apply",
    "evolve_gaussian",
    "symmetric_stable",
]

BROWNIAN, STABLE, OU = "brownian", "stable", "ou"
KIND_CODES = {BROWNIAN: 0, STABLE: 1, OU: 2}


@dataclass(frozen=True)
class MotionSpec:
    """One of the three motion families in dimension ``d``.

    Use the named constructors rather than filling fields by hand.
    """

    kind: str
    d: int = 1
    sigma: float = 1.0
    alpha: float = 2.0
    c: float = 1.0
    theta: float = 0.0

    def __post_init__(self):
        from .model import ParameterError

        if self.kind not in KIND_CODES:
            raise ParameterError(f"unknown motion kind {self.kind!r}")
        if isinstance(self.d, bool) or int(self.d) != self.d or self.d < 1:
            raise ParameterError("motion dimension must be a positive integer")
        if self.kind == BROWNIAN and not self.sigma > 0:
            raise ParameterError("Brownian sigma must be > 0")
        if self.kind == STABLE:
            if not 0.0 < self.alpha <= 2.0:
                raise ParameterError(f"alpha must lie in (0, 2], got {self.alpha}")
            if not self.c > 0:
                raise ParameterError("stable scale c must be > 0")
        if self.kind == OU:
            # sigma = 0 is kept as the noiseless (deterministic decay) limit
            if not self.theta > 0:
                raise ParameterError("OU theta must be > 0")

    @classmethod
    def brownian(cls, sigma: float = 1.0, d: int = 1) -> "MotionSpec":
        return cls(BROWNIAN, d=d, sigma=sigma)

    @classmethod
    def alpha_stable(cls, alpha: float, c: float = 1.0, d: int = 1) -> "MotionSpec":
        return cls(STABLE, d=d, alpha=alpha, c=c)

    @classmethod
    def ornstein_uhlenbeck(cls, theta: float, sigma: float = 1.0, d: int = 1) -> "MotionSpec":
        return cls(OU, d=d, theta=theta, sigma=sigma)

    @property
    def code(self) -> int:
        return KIND_CODES[self.kind]

    @property
    def is_levy(self) -> bool:
        return self.kind in (BROWNIAN, STABLE)

    @property
    def kernel_params(self) -> tuple[float, float]:
        """(p1, p2) as consumed by the compiled kernels."""
        if self.kind == BROWNIAN:
            return self.sigma, 0.0
        if self.kind == STABLE:
            return self.alpha, self.c
        return self.theta, self.sigma

    @property
    def spread_scale(self) -> float:
        """Typical displacement per unit time, used for window sizing."""
        if self.kind == BROWNIAN:
            return self.sigma
        if self.kind == STABLE:
            return self.c ** (1.0 / self.alpha) * (math.sqrt(2.0) if self.alpha == 2.0 else 1.0)
        return abs(self.sigma)

    def ou(self, t):
        """Variance factor (1 - e^{-2 theta t}) / (2 theta)."""
        return -np.expm1(-2.0 * self.theta * np.asarray(t, dtype=float)) / (2.0 * self.theta)

    def OU(self, t):
        """(e^{2 theta t} - 1) / (2 theta)."""
        return np.expm1(2.0 * self.theta * np.asarray(t, dtype=float)) / (2.0 * self.theta)

    def mass_growth(self, t: float) -> float:
        """int T_t f dx / int f dx: 1 for Levy motions, e^{d theta t} for OU."""
        if self.kind == OU:
            return math.exp(self.d * self.theta * t)
        return 1.0

    def to_dict(self) -> dict:
        if self.kind == BROWNIAN:
            return {"kind": BROWNIAN, "sigma": self.sigma}
        if self.kind == STABLE:
            return {"kind": STABLE, "alpha": self.alpha, "c": self.c}
        return {"kind": OU, "theta": self.theta, "sigma": self.sigma}

    @classmethod
    def from_dict(cls, data: dict) -> "MotionSpec":
        from .model import ParameterError

        data = dict(data)
        kind = data.pop("kind", None)
        d = int(data.pop("d", 1))
        allowed = {BROWNIAN: {"sigma"}, STABLE: {"alpha", "c"}, OU: {"theta", "sigma"}}
        if kind not in allowed:
            raise ParameterError(f"motion kind must be one of {sorted(allowed)}, got {kind!r}")
        extra = set(data) - allowed[kind]
        if extra:
            raise ParameterError(f"unknown {kind} motion field(s): {sorted(extra)}")
        return cls(kind, d=d, **{k: float(v) for k, v in data.items()})


def symmetric_stable(alpha: float, size, rng: np.random.Generator) -> np.ndarray:
    """Standard symmetric stable draws, E e^{izS} = e^{-|z|^alpha} (Chambers-Mallows-Stuck)."""
    u = rng.uniform(-0.5 * np.pi, 0.5 * np.pi, size)
    w = rng.exponential(1.0, size)
    if alpha == 1.0:
        return np.tan(u)
    return (np.sin(alpha * u) / np.cos(u) ** (1.0 / alpha)
            * (np.cos((1.0 - alpha) * u) / w) ** ((1.0 - alpha) / alpha))


def sample_increment(spec: MotionSpec, x, h: float, rng: np.random.Generator) -> np.ndarray:
    """Draw eta_{t+h} given eta_t = x (vectorised over leading axes of x)."""
    if not h > 0:
        raise ValueError("time step h must be > 0")
    x = np.asarray(x, dtype=float)
    if spec.kind == BROWNIAN:
        return x + spec.sigma * math.sqrt(h) * rng.standard_normal(x.shape)
    if spec.kind == STABLE:
        return x + (spec.c * h) ** (1.0 / spec.alpha) * symmetric_stable(spec.alpha, x.shape, rng)
    decay = math.exp(-spec.theta * h)
    return x * decay + spec.sigma * math.sqrt(float(spec.ou(h))) * rng.standard_normal(x.shape)


def char_exponent(spec: MotionSpec, z) -> np.ndarray | float:
    """Levy exponent Psi with E e^{i<z, eta_t>} = e^{t Psi(z)}.

    Stable motion uses independent coordinates, so in d > 1 the exponent is
    -c * sum_i |z_i|^alpha (it equals -c|z|^alpha on the line).
    """
    if not spec.is_levy:
        raise ValueError("not translation-invariant: no Levy exponent for Ornstein-Uhlenbeck motion")
    z = np.asarray(z, dtype=float)
    if spec.d == 1 and (z.ndim == 0 or z.shape[-1:] != (1,)):
        z = z[..., None]
    if spec.kind == BROWNIAN:
        out = -0.5 * spec.sigma ** 2 * np.sum(z ** 2, axis=-1)
    else:
        out = -spec.c * np.sum(np.abs(z) ** spec.alpha, axis=-1)
    return float(out) if out.ndim == 0 else out


def evolve_gaussian(spec: MotionSpec, t: float, amp: float, center, var: float):
    """T_t of a * exp(-|x-m|^2/(2v)) as (a', m', v') for Brownian/OU motion."""
    center = np.asarray(center, dtype=float)
    d = spec.d
    if spec.kind == BROWNIAN:
        v_new = var + spec.sigma ** 2 * t
        return amp * (var / v_new) ** (d / 2), center, v_new
    if spec.kind == OU:
        spread = spec.sigma ** 2 * float(spec.ou(t))
        grow = math.exp(spec.theta * t)
        return (amp * (var / (var + spread)) ** (d / 2), center * grow,
                (var + spread) * grow * grow)
    raise ValueError("closed-form evolution only for Brownian and OU motion")


def _stable_factor(spec: MotionSpec, t: float, width: float, offset: float, tol: float) -> float:
    # (1/2pi) int w sqrt(2pi) e^{-w^2 z^2/2 - t c |z|^alpha} e^{-i z y} dz, folded onto z >= 0
    zmax = math.sqrt(2.0 * 32.0) / width
    tc = t * spec.c
    alpha = spec.alpha

    def f(z):
        return np.exp(-0.5 * width ** 2 * z * z - tc * z ** alpha) * np.cos(z * offset)

    res = integrate(f, 0.0, zmax, abs_tol=tol * 1e-2, rel_tol=tol * 1e-2, initial=4)
    return width * math.sqrt(2.0 * math.pi) / math.pi * res.value


def semigroup_apply(spec: MotionSpec, t: float, phi: "GaussianBump", x, tol: float = 1e-8):
    """E_x phi(eta_t), vectorised over points x."""
    from .model import _as_points, eval_phi

    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return eval_phi(phi, x)
    pts = _as_points(x, phi.d)
    if spec.kind in (BROWNIAN, OU):
        a, m, v = evolve_gaussian(spec, t, phi.amplitude, phi.mu, phi.width ** 2)
        out = a * np.exp(-np.sum((pts - m) ** 2, axis=-1) / (2.0 * v))
        return float(out) if out.ndim == 0 else out
    flat = pts.reshape(-1, phi.d)
    out = np.empty(len(flat))
    for i, p in enumerate(flat):
        val = phi.amplitude
        for k in range(phi.d):
            val *= _stable_factor(spec, t, phi.width, p[k] - phi.center[k], tol)
        out[i] = val
    out = out.reshape(pts.shape[:-1])
    return float(out) if out.ndim == 0 else out
