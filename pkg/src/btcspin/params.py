"""Model parameters, Bloch vectors and angle conversions."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from .errors import DomainError, MissingKey

COLLECTIVE = "collective"
POLE_TOL = 1e-12


class Axis(enum.Enum):
    """Which Cartesian axis plays the role of the polar axis."""

    Z_POLE = "z"
    X_POLE = "x"

    @classmethod
    def parse(cls, value: "Axis | str") -> "Axis":
        if isinstance(value, Axis):
            return value
        key = str(value).strip().lower()
        for member in cls:
            if key in (member.value, member.name.lower()):
                return member
        raise DomainError(f"unknown axis {value!r}")


@dataclass(frozen=True)
class ModelParams:
    """Constants of the p,q spin model with gain/loss rates.

    ``n_spins`` is only needed by the finite-N code. ``n_string`` is either an
    integer string length for local dissipation or ``"collective"``.
    """

    p: int
    q: int
    omega_z: float
    omega_x: float
    gamma_up: float
    gamma_down: float
    n_spins: int | None = None
    n_string: int | str = COLLECTIVE

    def __post_init__(self) -> None:
        if int(self.p) != self.p or self.p < 1:
            raise DomainError(f"p must be an integer >= 1, got {self.p}")
        if int(self.q) != self.q or self.q < 1:
            raise DomainError(f"q must be an integer >= 1, got {self.q}")
        for name in ("omega_z", "omega_x", "gamma_up", "gamma_down"):
            val = getattr(self, name)
            if not math.isfinite(val) or val < 0:
                raise DomainError(f"{name} must be finite and >= 0, got {val}")
        if self.n_spins is not None and (int(self.n_spins) != self.n_spins or self.n_spins < 1):
            raise DomainError(f"n_spins must be a positive integer, got {self.n_spins}")
        if self.n_string != COLLECTIVE:
            ns = self.n_string
            if isinstance(ns, bool) or not isinstance(ns, (int, np.integer)) or ns < 1:
                raise DomainError(f"n_string must be a positive integer or 'collective', got {ns!r}")
            if self.n_spins is not None and ns > self.n_spins:
                raise DomainError(f"n_string={ns} exceeds n_spins={self.n_spins}")

    @property
    def delta_gamma(self) -> float:
        return self.gamma_up - self.gamma_down

    @property
    def bar_gamma(self) -> float:
        return self.gamma_up + self.gamma_down

    @property
    def is_collective(self) -> bool:
        return self.n_string == COLLECTIVE

    def replace(self, **changes: Any) -> "ModelParams":
        fields = self.as_dict()
        fields.update(changes)
        return ModelParams(**fields)

    def as_dict(self) -> dict:
        return {
            "p": self.p,
            "q": self.q,
            "omega_z": self.omega_z,
            "omega_x": self.omega_x,
            "gamma_up": self.gamma_up,
            "gamma_down": self.gamma_down,
            "n_spins": self.n_spins,
            "n_string": self.n_string,
        }


_REQUIRED = ("p", "q", "omega_z", "omega_x", "gamma_up", "gamma_down")
_ALIASES = {
    "wz": "omega_z",
    "wx": "omega_x",
    "g_up": "gamma_up",
    "g_down": "gamma_down",
    "n": "n_spins",
    "N": "n_spins",
    "n_s": "n_string",
    "N_s": "n_string",
}


def _as_int(name: str, value: Any) -> int:
    try:
        f = float(value)
    except (TypeError, ValueError) as exc:
        raise DomainError(f"{name} must be an integer, got {value!r}") from exc
    if not f.is_integer():
        raise DomainError(f"{name} must be an integer, got {value!r}")
    return int(f)


def _as_float(name: str, value: Any) -> float:
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise DomainError(f"{name} must be a number, got {value!r}") from exc


def validate_params(raw: Mapping[str, Any] | ModelParams) -> ModelParams:
    """Build a :class:`ModelParams` from a loose key/value mapping.

    Values may be strings (as read from a config file). Passing an existing
    ``ModelParams`` returns an equal object, so the function is idempotent.
    """
    if isinstance(raw, ModelParams):
        raw = raw.as_dict()
    data = {_ALIASES.get(k, k): v for k, v in raw.items()}
    missing = [k for k in _REQUIRED if k not in data or data[k] is None or data[k] == ""]
    if missing:
        raise MissingKey(f"missing required parameter(s): {', '.join(missing)}")
    n_spins = data.get("n_spins")
    n_spins = None if n_spins in (None, "") else _as_int("n_spins", n_spins)
    n_string = data.get("n_string", COLLECTIVE)
    if n_string in (None, "") or (isinstance(n_string, str) and n_string.strip().lower() == COLLECTIVE):
        n_string = COLLECTIVE
    else:
        n_string = _as_int("n_string", n_string)
    return ModelParams(
        p=_as_int("p", data["p"]),
        q=_as_int("q", data["q"]),
        omega_z=_as_float("omega_z", data["omega_z"]),
        omega_x=_as_float("omega_x", data["omega_x"]),
        gamma_up=_as_float("gamma_up", data["gamma_up"]),
        gamma_down=_as_float("gamma_down", data["gamma_down"]),
        n_spins=n_spins,
        n_string=n_string,
    )


@dataclass(frozen=True)
class BlochState:
    """Magnetization vector (<J_x>, <J_y>, <J_z>)."""

    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def from_array(cls, v) -> "BlochState":
        return cls(float(v[0]), float(v[1]), float(v[2]))

    @property
    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)


@dataclass(frozen=True)
class PolarState:
    """Point on the sphere as (phi, cos theta) about the chosen polar axis."""

    phi: float
    cos_theta: float
    axis: Axis = Axis.Z_POLE
    at_pole: bool = False

    @property
    def theta(self) -> float:
        return math.acos(min(1.0, max(-1.0, self.cos_theta)))


def bloch_from_angles(theta: float, phi: float, axis: Axis | str = Axis.Z_POLE) -> BlochState:
    axis = Axis.parse(axis)
    st, ct = math.sin(theta), math.cos(theta)
    a, b = st * math.cos(phi), st * math.sin(phi)
    if axis is Axis.Z_POLE:
        return BlochState(a, b, ct)
    return BlochState(ct, a, b)


def angles_from_bloch(state: BlochState, axis: Axis | str = Axis.Z_POLE) -> PolarState:
    """Invert :func:`bloch_from_angles`; the state need not have unit norm.

    At a pole the azimuth is undefined and set to 0, with ``at_pole`` raised.
    """
    axis = Axis.parse(axis)
    r = state.norm
    if r <= 0:
        raise DomainError("cannot take angles of the zero vector")
    if axis is Axis.Z_POLE:
        u, v, w = state.x, state.y, state.z
    else:
        u, v, w = state.y, state.z, state.x
    c = max(-1.0, min(1.0, w / r))
    if math.hypot(u, v) <= POLE_TOL * r:
        return PolarState(0.0, c, axis, True)
    phi = math.atan2(v, u) % (2 * math.pi)
    if phi >= 2 * math.pi:  # -tiny % 2pi rounds to 2pi
        phi = 0.0
    return PolarState(phi, c, axis, False)


def angles_array(xyz: np.ndarray, axis: Axis | str = Axis.Z_POLE) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized (phi, cos theta) for an (n, 3) array of Bloch vectors."""
    axis = Axis.parse(axis)
    xyz = np.atleast_2d(np.asarray(xyz, dtype=float))
    if axis is Axis.Z_POLE:
        u, v, w = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    else:
        u, v, w = xyz[:, 1], xyz[:, 2], xyz[:, 0]
    r = np.sqrt(u * u + v * v + w * w)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.clip(np.where(r > 0, w / r, 1.0), -1.0, 1.0)
    phi = np.mod(np.arctan2(v, u), 2 * np.pi)
    phi = np.where((np.hypot(u, v) <= POLE_TOL * r) | (phi >= 2 * np.pi), 0.0, phi)
    return phi, c
