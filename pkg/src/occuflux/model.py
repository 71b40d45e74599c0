"""Model parameters and analytic test functions.

Everything here is immutable; the simulator, the analytics and the
integral-equation solver all consume these types.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from .motion import MotionSpec

__all__ = [
    "ParameterError",
    "SystemParams",
    "GaussianBump",
    "PiecewiseLinear",
    "SpaceTimeTest",
    "validate_params",
    "params_from_json",
    "eval_phi",
    "fourier_phi",
]


class ParameterError(ValueError):
    """Raised when a parameter record violates a model invariant."""


_PARAM_FIELDS = ("V", "q", "H", "L", "Q", "d", "motion", "T", "F_T",
                 "box_radius", "dt", "seed")


@dataclass(frozen=True)
class SystemParams:
    """Constants of the branching system with immigration.

    ``Q`` and ``F_T`` are derived; ``box_radius`` and ``dt`` may be left as
    ``None`` and are then chosen by the simulator from the test functions.
    """

    V: float
    q: float
    H: float
    L: float
    motion: MotionSpec
    T: float = 1.0
    d: int = 1
    box_radius: float | None = None
    dt: float | None = None
    seed: int = 0

    @property
    def Q(self) -> float:
        return self.V * (1.0 - 2.0 * self.q)

    @property
    def F_T(self) -> float:
        return math.sqrt(self.T)

    @property
    def stationary_density(self) -> float:
        """Mean particle density H/Q reached by translation-invariant motion."""
        return self.H / self.Q

    def with_(self, **changes: Any) -> "SystemParams":
        return validate_params(replace(self, **changes))

    def to_dict(self) -> dict:
        return {
            "V": self.V, "q": self.q, "H": self.H, "L": self.L, "Q": self.Q,
            "d": self.d, "motion": self.motion.to_dict(), "T": self.T,
            "F_T": self.F_T, "box_radius": self.box_radius, "dt": self.dt,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _finite(name: str, value: Any) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ParameterError(f"{name} must be a real number, got {value!r}") from None
    if not math.isfinite(value):
        raise ParameterError(f"{name} must be finite, got {value!r}")
    return value


def validate_params(raw: SystemParams | dict) -> SystemParams:
    """Check a parameter record and return it as :class:`SystemParams`.

    Accepts either a ``SystemParams`` or a flat mapping with the JSON field
    names.  Derived fields (``Q``, ``F_T``) may be present in a mapping but
    must agree with the primary ones.  Validation is idempotent.
    """
    if isinstance(raw, SystemParams):
        raw = raw.to_dict()
    raw = dict(raw)
    unknown = set(raw) - set(_PARAM_FIELDS)
    if unknown:
        raise ParameterError(f"unknown parameter field(s): {sorted(unknown)}")
    missing = {"V", "q", "H", "L", "motion"} - set(raw)
    if missing:
        raise ParameterError(f"missing parameter field(s): {sorted(missing)}")

    V = _finite("V", raw["V"])
    q = _finite("q", raw["q"])
    H = _finite("H", raw["H"])
    L = _finite("L", raw["L"])
    T = _finite("T", raw.get("T", 1.0))
    d = raw.get("d", None)

    if V <= 0:
        raise ParameterError("V must be > 0 (branching rate)")
    if q < 0:
        raise ParameterError("q must be >= 0 (offspring probability)")
    if q >= 0.5:
        raise ParameterError(
            "q must be < 1/2 for subcriticality (subcriticality violated: Q = V(1-2q) <= 0)")
    if H < 0:
        raise ParameterError("H must be >= 0 (immigration intensity)")
    if L < 0:
        raise ParameterError("L must be >= 0 (initial intensity)")
    if T <= 0:
        raise ParameterError("T must be > 0")

    motion = raw["motion"]
    if isinstance(motion, dict):
        motion = dict(motion)
        motion.setdefault("d", d if d is not None else 1)
        motion = MotionSpec.from_dict(motion)
    elif not isinstance(motion, MotionSpec):
        raise ParameterError(f"motion must be a MotionSpec or mapping, got {type(motion).__name__}")
    if d is None:
        d = motion.d
    if isinstance(d, bool) or int(d) != d or int(d) < 1:
        raise ParameterError(f"d must be a positive integer, got {d!r}")
    d = int(d)
    if motion.d != d:
        raise ParameterError(f"motion dimension {motion.d} does not match d={d}")

    Q = V * (1.0 - 2.0 * q)
    if "Q" in raw and raw["Q"] is not None and not math.isclose(float(raw["Q"]), Q, rel_tol=1e-12, abs_tol=1e-15):
        raise ParameterError(f"Q={raw['Q']} inconsistent with Q = V(1-2q) = {Q}")
    if "F_T" in raw and raw["F_T"] is not None and not math.isclose(float(raw["F_T"]) ** 2, T, rel_tol=1e-12):
        raise ParameterError(f"F_T={raw['F_T']} inconsistent with F_T^2 = T = {T}")

    box_radius = raw.get("box_radius")
    if box_radius is not None:
        box_radius = _finite("box_radius", box_radius)
        if box_radius <= 0:
            raise ParameterError("box_radius must be > 0")
    dt = raw.get("dt")
    if dt is not None:
        dt = _finite("dt", dt)
        if dt <= 0:
            raise ParameterError("dt must be > 0")
        if dt >= 1.0 / V:
            raise ParameterError(f"dt={dt} must be < 1/V={1.0 / V}")

    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or int(seed) != seed or not 0 <= int(seed) < 2**64:
        raise ParameterError(f"seed must be an integer in [0, 2^64), got {seed!r}")

    return SystemParams(V=V, q=q, H=H, L=L, motion=motion, T=T, d=d,
                        box_radius=box_radius, dt=dt, seed=int(seed))


def params_from_json(text: str) -> SystemParams:
    return validate_params(json.loads(text))


@dataclass(frozen=True)
class GaussianBump:
    """phi(x) = a * exp(-|x - mu|^2 / (2 w^2))."""

    amplitude: float = 1.0
    center: tuple[float, ...] = (0.0,)
    width: float = 1.0

    def __post_init__(self):
        center = tuple(float(c) for c in np.atleast_1d(self.center))
        object.__setattr__(self, "center", center)
        if not self.amplitude >= 0:
            raise ParameterError("bump amplitude must be >= 0")
        if not self.width > 0:
            raise ParameterError("bump width must be > 0")

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def mu(self) -> np.ndarray:
        return np.asarray(self.center)

    def integral(self) -> float:
        return self.amplitude * (2.0 * math.pi) ** (self.d / 2) * self.width ** self.d

    def __call__(self, x) -> np.ndarray:
        return eval_phi(self, x)

    def scaled(self, factor: float) -> "GaussianBump":
        return replace(self, amplitude=self.amplitude * factor)

    def to_dict(self) -> dict:
        return {"amplitude": self.amplitude, "center": list(self.center), "width": self.width}

    @classmethod
    def from_dict(cls, data: dict) -> "GaussianBump":
        return cls(amplitude=float(data.get("amplitude", 1.0)),
                   center=tuple(data.get("center", (0.0,))),
                   width=float(data.get("width", 1.0)))


def _as_points(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if d == 1 and (x.ndim == 0 or x.shape[-1:] != (1,)):
        return x[..., None]
    if x.shape[-1] != d:
        raise ValueError(f"points must have trailing dimension {d}, got shape {x.shape}")
    return x


def eval_phi(phi: GaussianBump, x) -> np.ndarray | float:
    """Evaluate the bump at a point or an array of points.

    For ``d == 1`` any array shape is accepted; otherwise the trailing axis
    indexes coordinates.
    """
    pts = _as_points(x, phi.d)
    r2 = np.sum((pts - phi.mu) ** 2, axis=-1)
    out = phi.amplitude * np.exp(-r2 / (2.0 * phi.width ** 2))
    return float(out) if out.ndim == 0 else out


def fourier_phi(phi: GaussianBump, z) -> np.ndarray | complex:
    """Closed-form transform  int phi(x) e^{i<z,x>} dx."""
    zz = _as_points(z, phi.d)
    z2 = np.sum(zz ** 2, axis=-1)
    phase = zz @ phi.mu
    out = phi.integral() * np.exp(-0.5 * phi.width ** 2 * z2) * np.exp(-1j * phase)
    return complex(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PiecewiseLinear:
    """Nonincreasing piecewise-linear profile on [0, 1] ending at zero.

    Extended by ``values[0]`` to the left of 0 and by 0 to the right of 1.
    """

    knots: tuple[float, ...] = (0.0, 1.0)
    values: tuple[float, ...] = (1.0, 0.0)

    def __post_init__(self):
        knots = tuple(float(k) for k in self.knots)
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        if len(knots) != len(values) or len(knots) < 2:
            raise ParameterError("chi needs matching knots/values with at least two points")
        if knots[0] != 0.0 or knots[-1] != 1.0:
            raise ParameterError("chi knots must start at 0 and end at 1")
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise ParameterError("chi knots must be strictly increasing")
        if values[-1] != 0.0:
            raise ParameterError("chi must vanish at 1")
        if any(v < 0 for v in values):
            raise ParameterError("chi must be nonnegative")
        if any(b > a for a, b in zip(values, values[1:])):
            raise ParameterError("chi must be nonincreasing")

    @classmethod
    def ramp(cls) -> "PiecewiseLinear":
        """chi(s) = 1 - s, i.e. psi = 1 on [0, 1]."""
        return cls()

    @classmethod
    def plateau(cls, start: float, stop: float, height: float = 1.0) -> "PiecewiseLinear":
        """Constant ``height`` up to ``start``, linear down to 0 at ``stop``."""
        if not 0.0 < start < stop <= 1.0:
            raise ParameterError("need 0 < start < stop <= 1")
        if stop < 1.0:
            return cls((0.0, start, stop, 1.0), (height, height, 0.0, 0.0))
        return cls((0.0, start, 1.0), (height, height, 0.0))

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        out = np.interp(s, self.knots, self.values, left=self.values[0], right=0.0)
        return float(out) if out.ndim == 0 else out

    def to_dict(self) -> dict:
        return {"knots": list(self.knots), "values": list(self.values)}


@dataclass(frozen=True)
class SpaceTimeTest:
    """Psi(x, s) = factor * phi(x) * chi(s / time_scale).

    With ``time_scale = T`` and ``factor = 1/sqrt(T)`` this is the rescaled
    Psi_T used by the Laplace functional; see :meth:`scaled`.
    """

    spatial: GaussianBump
    chi: PiecewiseLinear = field(default_factory=PiecewiseLinear)
    time_scale: float = 1.0
    factor: float = 1.0

    def __post_init__(self):
        if not self.time_scale > 0:
            raise ParameterError("time_scale must be > 0")

    def __call__(self, x, s):
        return self.factor * eval_phi(self.spatial, x) * self.chi(np.asarray(s) / self.time_scale)

    def time_weight(self, s):
        """factor * chi(s / time_scale), the purely temporal part."""
        return self.factor * self.chi(np.asarray(s, dtype=float) / self.time_scale)

    def time_knots(self) -> np.ndarray:
        """Absolute times where the temporal weight has kinks."""
        return np.asarray(self.chi.knots) * self.time_scale

    def scaled(self, T: float) -> "SpaceTimeTest":
        """Psi_T(x, s) = Psi(x, s/T) / sqrt(T)."""
        return replace(self, time_scale=self.time_scale * T, factor=self.factor / math.sqrt(T))

    def times(self, c: float) -> "SpaceTimeTest":
        return replace(self, factor=self.factor * c)

    @property
    def is_zero(self) -> bool:
        return self.factor == 0.0 or self.spatial.amplitude == 0.0 or max(self.chi.values) == 0.0


def bumps_total(bumps: Sequence[GaussianBump]) -> float:
    return float(sum(b.integral() for b in bumps))
