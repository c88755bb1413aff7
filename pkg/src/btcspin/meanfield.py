"""Mean-field Bloch dynamics: vector fields, integration, fixed points, orbits."""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.integrate import RK45, OdeSolution
from scipy.signal import find_peaks

from .errors import BTCError, DomainError, NotAFixedPoint, StepSizeUnderflow, TooShort
from .params import (
    COLLECTIVE,
    Axis,
    BlochState,
    ModelParams,
    PolarState,
    angles_array,
    bloch_from_angles,
)

# Weight of the 1/N_s terms in the local equations. "collective" keeps the
# coefficients of J± = J_x ± iJ_y; "sigma" normalizes the string operators as
# sum(sigma±)/N_s, which is J±/2 and scales every 1/N_s term by 1/4.
JUMP_NORMS = {"collective": 1.0, "sigma": 0.25}


@dataclass(frozen=True)
class BlochDerivative:
    dx: float
    dy: float
    dz: float

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dz], dtype=float)


def _local_weight(n_string, jump_norm: str) -> float:
    if n_string is None or n_string == COLLECTIVE:
        return 0.0
    if jump_norm not in JUMP_NORMS:
        raise DomainError(f"unknown jump normalization {jump_norm!r}")
    if n_string < 1:
        raise DomainError(f"string length must be >= 1, got {n_string}")
    return JUMP_NORMS[jump_norm] / float(n_string)


def vector_field(
    params: ModelParams, n_string=None, jump_norm: str = "collective"
) -> Callable[[np.ndarray], np.ndarray]:
    """Return ``f(v)`` evaluating the mean-field velocity on arrays of shape (..., 3).

    Negative powers of the rational form are multiplied out, so the
    field is a polynomial and finite everywhere.
    """
    p, q = int(params.p), int(params.q)
    a = 2.0 * p * params.omega_z
    b = 2.0 * q * params.omega_x
    dg = params.delta_gamma
    k = _local_weight(n_string, jump_norm)
    gk = k * params.bar_gamma
    dk = k * dg

    def f(v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        x, y, z = v[..., 0], v[..., 1], v[..., 2]
        zp = z ** (p - 1)
        xq = x ** (q - 1)
        damp = dg * z + gk
        out = np.empty(v.shape, dtype=float)
        out[..., 0] = a * zp * y - 2.0 * damp * x
        out[..., 1] = b * z * xq - a * x * zp - 2.0 * damp * y
        out[..., 2] = -b * y * xq + 2.0 * dg * (1.0 - z * z) + 2.0 * dk - 2.0 * gk * z
        return out

    return f


def field_jacobian(
    params: ModelParams, v: np.ndarray, n_string=None, jump_norm: str = "collective"
) -> np.ndarray:
    """Analytic Cartesian Jacobian of :func:`vector_field`, shape (..., 3, 3)."""
    p, q = int(params.p), int(params.q)
    a = 2.0 * p * params.omega_z
    b = 2.0 * q * params.omega_x
    dg = params.delta_gamma
    gk = _local_weight(n_string, jump_norm) * params.bar_gamma
    v = np.asarray(v, dtype=float)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    zp = z ** (p - 1)
    xq = x ** (q - 1)
    dzp = (p - 1) * z ** (p - 2) if p >= 2 else np.zeros_like(z)
    dxq = (q - 1) * x ** (q - 2) if q >= 2 else np.zeros_like(x)
    J = np.empty(v.shape + (3,), dtype=float)
    J[..., 0, 0] = -2.0 * (dg * z + gk)
    J[..., 0, 1] = a * zp
    J[..., 0, 2] = a * dzp * y - 2.0 * dg * x
    J[..., 1, 0] = b * z * dxq - a * zp
    J[..., 1, 1] = -2.0 * (dg * z + gk)
    J[..., 1, 2] = b * xq - a * x * dzp - 2.0 * dg * y
    J[..., 2, 0] = -b * y * dxq
    J[..., 2, 1] = -b * xq
    J[..., 2, 2] = -4.0 * dg * z - 2.0 * gk
    return J


def rhs_collective(params: ModelParams, s: BlochState) -> BlochDerivative:
    d = vector_field(params)(s.as_array())
    return BlochDerivative(*map(float, d))


def rhs_local(
    params: ModelParams, s: BlochState, n_string: int, jump_norm: str = "collective"
) -> BlochDerivative:
    """Velocity under string-local dissipation with the string length ``n_string``.

    Single-string expectations are identified with the homogeneous ones. The
    limit ``n_string -> inf`` is :func:`rhs_collective`.
    """
    if n_string is None or n_string == COLLECTIVE:
        return rhs_collective(params, s)
    d = vector_field(params, n_string, jump_norm)(s.as_array())
    return BlochDerivative(*map(float, d))


def polar_velocity(params: ModelParams, phi, cos_theta):
    """Closed-form (phi_dot, d cos(theta)/dt) on the unit sphere, z-pole chart.

    Valid away from the poles for every p, q.
    """
    phi = np.asarray(phi, dtype=float)
    c = np.asarray(cos_theta, dtype=float)
    s = np.sqrt(np.clip(1.0 - c * c, 0.0, None))
    p, q = params.p, params.q
    phidot = 2 * q * params.omega_x * c * s ** (q - 2) * np.cos(phi) ** q - 2 * p * params.omega_z * c ** (p - 1)
    cdot = -2 * q * params.omega_x * s**q * np.cos(phi) ** (q - 1) * np.sin(phi) + 2 * params.delta_gamma * (1 - c * c)
    return phidot, cdot


# --------------------------------------------------------------------------
# integration


def _resolve_mode(params: ModelParams, mode) -> int | None:
    """Map a mode spec to ``None`` (collective) or a string length."""
    if mode is None or mode == COLLECTIVE:
        return None
    if mode == "local":
        if params.is_collective:
            raise DomainError("local mode needs params.n_string to be an integer")
        return int(params.n_string)
    if isinstance(mode, tuple) and len(mode) == 2 and mode[0] == "local":
        mode = mode[1]
    if isinstance(mode, (int, np.integer)) and not isinstance(mode, bool) and mode >= 1:
        return int(mode)
    raise DomainError(f"unknown mode {mode!r}")


@dataclass
class Trajectory:
    """Sampled solution of the mean-field equations."""

    times: np.ndarray
    states: np.ndarray  # shape (n, 3)
    params: ModelParams
    n_string: int | None = None
    nfev: int = 0

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.shape != (len(self.times), 3):
            raise DomainError("states must have shape (len(times), 3)")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise DomainError("times must be strictly increasing")

    @property
    def x(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.states[:, 1]

    @property
    def z(self) -> np.ndarray:
        return self.states[:, 2]

    def norm_drift(self) -> float:
        return float(np.max(np.abs(np.linalg.norm(self.states, axis=1) - 1.0)))

    def angles(self, axis: Axis | str = Axis.Z_POLE):
        return angles_array(self.states, axis)

    def write_csv(self, fh, axis: Axis | str = Axis.Z_POLE, header: Sequence[str] = ()) -> None:
        phi, c = self.angles(axis)
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "X", "Y", "Z", "phi", "cos_theta"])
        for row in zip(self.times, self.x, self.y, self.z, phi, c):
            w.writerow([repr(float(v)) for v in row])

    def to_csv(self, axis: Axis | str = Axis.Z_POLE, header: Sequence[str] = ()) -> str:
        buf = io.StringIO()
        self.write_csv(buf, axis, header)
        return buf.getvalue()


def integrate(
    params: ModelParams,
    initial: BlochState | Sequence[float],
    t_end: float,
    rel_tol: float = 1e-9,
    abs_tol: float = 1e-12,
    mode=COLLECTIVE,
    sample_times: Sequence[float] | None = None,
    n_samples: int = 2001,
    jump_norm: str = "collective",
) -> Trajectory:
    """Integrate the mean-field equations with Dormand-Prince RK5(4).

    Parameters
    ----------
    params : ModelParams
    initial : BlochState or 3-sequence
        Starting vector. It is not projected onto the sphere.
    t_end : float
        Final time (> 0); integration starts at t = 0.
    rel_tol, abs_tol : float
        Step-size control tolerances.
    mode : "collective", "local", int or ("local", n)
        Collective dissipation, or string-local dissipation with the given
        string length ("local" takes it from ``params.n_string``).
    sample_times : sequence, optional
        Increasing output times in [0, t_end]; defaults to ``n_samples``
        uniform points.
    jump_norm : str
        Normalization of the string operators, see :data:`JUMP_NORMS`.

    Raises
    ------
    StepSizeUnderflow
        If the adaptive step falls below ``1e-12 * t_end``.
    """
    if not t_end > 0:
        raise DomainError("t_end must be positive")
    for name, tol in (("rel_tol", rel_tol), ("abs_tol", abs_tol)):
        if not 0 < tol <= 1e-2:
            raise DomainError(f"{name} must lie in (0, 1e-2]")
    n_string = _resolve_mode(params, mode)
    y0 = initial.as_array() if isinstance(initial, BlochState) else np.asarray(initial, dtype=float)
    if sample_times is None:
        ts = np.linspace(0.0, t_end, n_samples)
    else:
        ts = np.asarray(sample_times, dtype=float)
        if ts.ndim != 1 or len(ts) == 0 or np.any(np.diff(ts) <= 0):
            raise DomainError("sample_times must be strictly increasing")
        if ts[0] < 0 or ts[-1] > t_end * (1 + 1e-12):
            raise DomainError("sample_times must lie inside [0, t_end]")

    f = _scalar_field(params, n_string, jump_norm)
    # step by hand so a collapsing step size stops the run straight away
    solver = RK45(f, 0.0, y0, float(t_end), rtol=rel_tol, atol=abs_tol)
    t_nodes, pieces = [0.0], []
    h_min = 1e-12 * t_end
    while solver.status == "running":
        msg = solver.step()
        if solver.status == "failed":
            raise StepSizeUnderflow(f"integration failed at t={solver.t:.6g}: {msg}")
        if solver.step_size < h_min and solver.t < t_end:
            raise StepSizeUnderflow(f"step size {solver.step_size:.3g} below {h_min:.3g} at t={solver.t:.6g}")
        t_nodes.append(solver.t)
        pieces.append(solver.dense_output())
    sol = OdeSolution(t_nodes, pieces)
    states = np.atleast_2d(sol(np.clip(ts, 0.0, t_end))).T.reshape(len(ts), -1)
    return Trajectory(ts, states, params, n_string, int(solver.nfev))


def _scalar_field(params: ModelParams, n_string, jump_norm: str):
    # plain-float version for the ODE solver, roughly 5x faster than the array field
    p1, q1 = int(params.p) - 1, int(params.q) - 1
    a = 2.0 * params.p * params.omega_z
    b = 2.0 * params.q * params.omega_x
    dg = params.delta_gamma
    k = _local_weight(n_string, jump_norm)
    gk, dk = k * params.bar_gamma, k * dg

    def f(t, v):
        x, y, z = v
        zp = z**p1
        xq = x**q1
        damp = 2.0 * (dg * z + gk)
        return np.array(
            (
                a * zp * y - damp * x,
                b * z * xq - a * x * zp - damp * y,
                -b * y * xq + 2.0 * dg * (1.0 - z * z) + 2.0 * dk - 2.0 * gk * z,
            )
        )

    return f


# --------------------------------------------------------------------------
# fixed points


class Stability(enum.Enum):
    ATTRACTOR = "ATTRACTOR"
    REPELLER = "REPELLER"
    MARGINAL = "MARGINAL"
    SADDLE = "SADDLE"


@dataclass(frozen=True)
class FixedPoint:
    """Stationary Bloch vector with its linear stability.

    For collective dynamics the first two exponents are tangent to the sphere
    and decide the class; the third is the radial one, ``-4 dGamma Z``.
    """

    location: BlochState
    jacobian_eigenvalues: tuple
    stability: Stability
    residual: float

    def to_record(self) -> dict:
        loc = self.location
        return {
            "location": [loc.x, loc.y, loc.z],
            "eigenvalues": [[float(np.real(e)), float(np.imag(e))] for e in self.jacobian_eigenvalues],
            "class": self.stability.value,
            "residual": self.residual,
        }


def _closed_form_points(params: ModelParams) -> list[np.ndarray]:
    wz, wx, dg = params.omega_z, params.omega_x, params.delta_gamma
    pts: list[np.ndarray] = []
    pq = (params.p, params.q)
    if pq == (2, 1):
        den = 4 * wz * wz + dg * dg
        if den > 0 and wx * wx <= den:
            zf = math.sqrt(max(0.0, 1 - wx * wx / den))
            for sgn in (1, -1):
                pts.append(np.array([2 * wx * wz / den, dg * wx / den, sgn * zf]))
        if wx > 0 and abs(dg) <= wx:
            xp = math.sqrt(max(0.0, 1 - (dg / wx) ** 2))
            for sgn in (1, -1):
                pts.append(np.array([sgn * xp, dg / wx, 0.0]))
    elif pq == (1, 1):
        if wx == 0:
            pts += [np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0])]
        else:
            # Z^2 = u solves dg^2 u^2 + (wx^2 + wz^2 - dg^2) u - wz^2 = 0
            bq = wx * wx + wz * wz - dg * dg
            if dg == 0:
                roots = [wz * wz / bq] if bq > 0 else []
            else:
                disc = math.sqrt(bq * bq + 4 * dg * dg * wz * wz)
                roots = [(-bq + disc) / (2 * dg * dg), (-bq - disc) / (2 * dg * dg)]
            for u in roots:
                if 0 < u <= 1:
                    for sgn in (1, -1):
                        zz = sgn * math.sqrt(u)
                        pts.append(np.array([wz * (1 - u) / (wx * zz), dg * (1 - u) / wx, zz]))
            if wz == 0 and abs(dg) <= wx:
                xp = math.sqrt(max(0.0, 1 - (dg / wx) ** 2))
                pts += [np.array([xp, dg / wx, 0.0]), np.array([-xp, dg / wx, 0.0])]
    elif pq == (1, 2):
        pts += [np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0])]
    return pts


def _newton_sphere(params: ModelParams, seeds: np.ndarray, n_string, jump_norm: str,
                   max_iter: int = 60, tol: float = 1e-13) -> np.ndarray:
    """Damped Gauss-Newton on all seeds at once; returns converged roots.

    Collective mode solves [f(v); |v|^2 - 1] = 0, local mode solves f(v) = 0.
    """
    f = vector_field(params, n_string, jump_norm)
    on_sphere = n_string is None

    def resid(v):
        r = f(v)
        if on_sphere:
            r = np.concatenate([r, (np.sum(v * v, axis=-1) - 1.0)[..., None]], axis=-1)
        return r

    def jac(v):
        J = field_jacobian(params, v, n_string, jump_norm)
        if on_sphere:
            J = np.concatenate([J, 2.0 * v[..., None, :]], axis=-2)
        return J

    v = np.array(seeds, dtype=float)
    active = np.ones(len(v), dtype=bool)
    done = np.zeros(len(v), dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        va = v[idx]
        r = resid(va)
        n0 = np.linalg.norm(r, axis=-1)
        conv = n0 < tol
        done[idx[conv]] = True
        active[idx[conv]] = False
        keep = ~conv
        idx, va, r, n0 = idx[keep], va[keep], r[keep], n0[keep]
        if len(idx) == 0:
            break
        J = jac(va)
        Jt = np.swapaxes(J, -1, -2)
        A = Jt @ J
        mu = 1e-14 * np.trace(A, axis1=-2, axis2=-1)[:, None, None] + 1e-300
        A = A + mu * np.eye(3)
        g = (Jt @ r[..., None])[..., 0]
        try:
            step = -np.linalg.solve(A, g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = -np.stack([np.linalg.lstsq(Ai, gi, rcond=None)[0] for Ai, gi in zip(A, g)])
        alpha = np.ones(len(idx))
        new = va + step
        nn = np.linalg.norm(resid(new), axis=-1)
        bad = ~(nn < n0)
        for _ in range(12):
            if not bad.any():
                break
            alpha[bad] *= 0.5
            new[bad] = va[bad] + alpha[bad, None] * step[bad]
            nn[bad] = np.linalg.norm(resid(new[bad]), axis=-1)
            bad = ~(nn < n0)
        # seeds that cannot make progress are abandoned
        stuck = bad | ~np.all(np.isfinite(new), axis=-1) | (np.linalg.norm(new, axis=-1) > 10)
        v[idx[~stuck]] = new[~stuck]
        active[idx[stuck]] = False
    r = resid(v)
    done |= np.linalg.norm(r, axis=-1) < tol
    return v[done]


def sphere_grid(n_phi: int = 24, n_cos: int = 12) -> np.ndarray:
    """Cell-centred (phi, cos theta) grid mapped to unit vectors."""
    phi = (np.arange(n_phi) + 0.5) * 2 * np.pi / n_phi
    c = -1 + (np.arange(n_cos) + 0.5) * 2 / n_cos
    P, C = np.meshgrid(phi, c, indexing="ij")
    S = np.sqrt(1 - C * C)
    return np.stack([S * np.cos(P), S * np.sin(P), C], axis=-1).reshape(-1, 3)


def _dedupe(points: Iterable[np.ndarray], radius: float = 1e-6) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    for p in points:
        if all(np.linalg.norm(p - o) > radius for o in out):
            out.append(p)
    return out


def _polish(params, v, n_string, jump_norm, tol=1e-14):
    """Few plain Newton steps to push a closed-form root to machine precision."""
    roots = _newton_sphere(params, v[None, :], n_string, jump_norm, max_iter=8, tol=tol)
    return roots[0] if len(roots) else v


def find_fixed_points(
    params: ModelParams,
    mode=COLLECTIVE,
    jump_norm: str = "collective",
    grid: tuple[int, int] = (24, 12),
    classify_points: bool = True,
) -> list[FixedPoint]:
    """All stationary points of the mean-field flow reachable from a seed grid.

    Known closed forms are added for (p, q) in {(1,1), (2,1), (1,2)} in
    collective mode. Points closer than 1e-6 are merged and only those with
    residual below 1e-10 are kept.
    """
    n_string = _resolve_mode(params, mode)
    f = vector_field(params, n_string, jump_norm)
    cands: list[np.ndarray] = []
    if n_string is None:
        cands += [_polish(params, c, None, jump_norm) for c in _closed_form_points(params)]
    cands += list(_newton_sphere(params, sphere_grid(*grid), n_string, jump_norm))
    pts = [c for c in cands if np.linalg.norm(f(c)) < 1e-10]
    if n_string is None:
        pts = [c for c in pts if abs(np.linalg.norm(c) - 1) < 1e-9]
    pts = _dedupe(pts)
    # deterministic order: by z then x then y, descending
    pts.sort(key=lambda v: (-round(v[2], 9), -round(v[0], 9), -round(v[1], 9)))
    if not classify_points:
        return [FixedPoint(BlochState.from_array(v), (), Stability.SADDLE, float(np.linalg.norm(f(v)))) for v in pts]
    return [classify(params, BlochState.from_array(v), mode=mode, jump_norm=jump_norm) for v in pts]


def _chart_field(params: ModelParams, use_x_chart: bool):
    f = vector_field(params)

    def g(phi: float, c: float) -> np.ndarray:
        s = math.sqrt(max(0.0, 1 - c * c))
        if use_x_chart:
            v = np.array([c, s * math.cos(phi), s * math.sin(phi)])
            d = f(v)
            return np.array([(v[1] * d[2] - v[2] * d[1]) / (s * s), d[0]])
        v = np.array([s * math.cos(phi), s * math.sin(phi), c])
        d = f(v)
        return np.array([(v[0] * d[1] - v[1] * d[0]) / (s * s), d[2]])

    return g


def default_epsilon(params: ModelParams) -> float:
    scale = max(params.omega_z, params.omega_x, abs(params.delta_gamma))
    return 1e-6 * scale if scale > 0 else 1e-12


def _class_from(eigs: np.ndarray, eps: float) -> Stability:
    re = np.real(eigs)
    if np.all(re < -eps):
        return Stability.ATTRACTOR
    if np.all(re > eps):
        return Stability.REPELLER
    if np.all(np.abs(re) <= eps) and np.all(np.abs(np.imag(eigs)) > eps):
        return Stability.MARGINAL
    return Stability.SADDLE


def classify(
    params: ModelParams,
    point: BlochState,
    epsilon: float | None = None,
    mode=COLLECTIVE,
    jump_norm: str = "collective",
    step: float = 1e-6,
) -> FixedPoint:
    """Linear stability of a stationary point.

    In collective mode the 2x2 Jacobian of the flow in (phi, cos theta)
    coordinates is formed by central differences; the z-pole chart is used
    unless |Z| > 0.9, where the x-pole chart takes over. In local mode the
    full 3x3 Cartesian Jacobian is used.

    Raises
    ------
    NotAFixedPoint
        If the velocity at ``point`` exceeds 1e-8.
    """
    n_string = _resolve_mode(params, mode)
    f = vector_field(params, n_string, jump_norm)
    v = point.as_array()
    res = float(np.linalg.norm(f(v)))
    if not res < 1e-8:
        raise NotAFixedPoint(f"|velocity| = {res:.3g} at {tuple(v)}")
    eps = default_epsilon(params) if epsilon is None else float(epsilon)
    if n_string is None:
        use_x = abs(v[2]) > 0.9
        g = _chart_field(params, use_x)
        r = np.linalg.norm(v)
        if use_x:
            c0 = v[0] / r
            phi0 = math.atan2(v[2], v[1])
        else:
            c0 = v[2] / r
            phi0 = math.atan2(v[1], v[0])
        J = np.empty((2, 2))
        J[:, 0] = (g(phi0 + step, c0) - g(phi0 - step, c0)) / (2 * step)
        J[:, 1] = (g(phi0, c0 + step) - g(phi0, c0 - step)) / (2 * step)
        tang = np.linalg.eigvals(J)
        tang = tang[np.lexsort((np.imag(tang), np.real(tang)))]
        radial = -4.0 * params.delta_gamma * v[2]
        eigs = (complex(tang[0]), complex(tang[1]), complex(radial))
        cls = _class_from(tang, eps)
    else:
        J = np.empty((3, 3))
        for i in range(3):
            e = np.zeros(3)
            e[i] = step
            J[:, i] = (f(v + e) - f(v - e)) / (2 * step)
        ev = np.linalg.eigvals(J)
        ev = ev[np.lexsort((np.imag(ev), np.real(ev)))]
        eigs = tuple(complex(e) for e in ev)
        cls = _class_from(ev, eps)
    return FixedPoint(point, eigs, cls, res)


# --------------------------------------------------------------------------
# envelopes and orbit detection


def _fft_period(t: np.ndarray, v: np.ndarray) -> float:
    d = v - v.mean()
    spec = np.abs(np.fft.rfft(d * np.hanning(len(d))))
    freqs = np.fft.rfftfreq(len(d), t[1] - t[0])
    k = int(np.argmax(spec[1:])) + 1
    return 1.0 / freqs[k]


def _local_amplitude(tau, y, omega, growth, half):
    # Hann-weighted fit of an exponentially modulated harmonic series plus a
    # quadratic drift; the fundamental's amplitude is returned
    w = np.sqrt(0.5 * (1 + np.cos(np.pi * tau / half)))
    e = np.exp(growth * tau)
    cols = [np.ones_like(tau), tau, tau**2]
    for h in (1, 2, 3):
        eh = e**h
        cols += [eh * np.cos(h * omega * tau), eh * np.sin(h * omega * tau)]
    M = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(M * w[:, None], y * w, rcond=None)
    return math.hypot(coef[3], coef[4])


def envelope(times, values, passes: int = 3) -> list[tuple[float, float]]:
    """Oscillation envelope as a list of (t_peak, amplitude).

    Peaks of ``value - running mean`` are located by 3-point quadratic
    interpolation. Each amplitude comes from a Hann-weighted local regression
    over two periods on an exponentially modulated harmonic series, with the
    modulation rate refined from neighbouring amplitudes. Peaks too close to
    the ends of the series to fit are dropped. Samples are assumed (close to)
    uniform.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(v) < 3 or np.ptp(v) <= 1e-14 * max(1.0, float(np.abs(v).max())):
        return []
    dt = float(np.median(np.diff(t)))
    period = _fft_period(t, v)
    w = max(int(round(period / dt)), 1)
    if 1 < w < len(v):
        mean = np.convolve(np.pad(v, (w // 2, w - 1 - w // 2), mode="edge"), np.ones(w) / w, mode="valid")
    else:
        mean = np.full_like(v, v.mean())
    d = v - mean
    peaks, _ = find_peaks(d, distance=max(1, int(0.6 * w)))
    peaks = [i for i in peaks if 0 < i < len(v) - 1 and d[i] > 0]
    tps = []
    for i in peaks:
        y0, y1, y2 = d[i - 1], d[i], d[i + 1]
        den = y0 - 2 * y1 + y2
        off = 0.5 * (y0 - y2) / den if den != 0 else 0.0
        tps.append(t[i] + off * dt)
    if len(tps) >= 3:
        period = float(np.median(np.diff(tps)))
    omega = 2 * np.pi / period
    keep, windows = [], []
    for tp in tps:
        sel = np.abs(t - tp) < period
        tau = t[sel] - tp
        if len(tau) < 16 or tau.min() > -period / 4 or tau.max() < period / 4:
            continue
        keep.append(tp)
        windows.append((tau, v[sel]))
    if not keep:
        return []
    tps_a = np.array(keep)
    growth = np.zeros(len(keep))
    amp = np.zeros(len(keep))
    for _ in range(passes):
        amp = np.array([_local_amplitude(tau, y, omega, g, period) for (tau, y), g in zip(windows, growth)])
        if len(amp) < 2 or np.any(amp <= 0):
            break
        growth = np.gradient(np.log(amp), tps_a)
    return [(float(a), float(b)) for a, b in zip(tps_a, amp) if b > 0]


class OrbitVerdict(enum.Enum):
    CLOSED = "CLOSED"
    SPIRAL_IN = "SPIRAL_IN"
    SPIRAL_OUT = "SPIRAL_OUT"
    RELAXED = "RELAXED"


@dataclass(frozen=True)
class OrbitReport:
    verdict: OrbitVerdict
    drift_per_period: float
    period: float
    n_peaks: int


DRIFT_TOL = 1e-3
RELAX_AMPLITUDE = 1e-6


def orbit_report(traj: Trajectory, window_periods: int = 20, axis: Axis | str = Axis.Z_POLE) -> OrbitReport:
    """Like :func:`detect_orbit` but also returns the measured drift and period."""
    axis = Axis.parse(axis)
    series = traj.z if axis is Axis.Z_POLE else traj.x
    t = traj.times
    tail = series[int(0.9 * len(series)):]
    if len(tail) and np.ptp(tail) < 2 * RELAX_AMPLITUDE:
        return OrbitReport(OrbitVerdict.RELAXED, float("nan"), float("nan"), 0)
    env = envelope(t, series)
    if len(env) < 3:
        raise TooShort(f"only {len(env)} envelope peaks found")
    tp = np.array([e[0] for e in env])
    amp = np.array([e[1] for e in env])
    period = float(tp[1] - tp[0])
    if period <= 0:
        raise TooShort("could not estimate the oscillation period")
    t_stop = t[0] + window_periods * period
    if t[-1] < t_stop - 0.5 * period:
        raise TooShort(f"trajectory spans {(t[-1] - t[0]) / period:.1f} periods, need {window_periods}")
    sel = tp <= t_stop + 0.5 * period
    tp, amp = tp[sel], amp[sel]
    if len(tp) < 3:
        raise TooShort(f"only {len(tp)} envelope peaks inside the window")
    if amp[-1] < RELAX_AMPLITUDE:
        return OrbitReport(OrbitVerdict.RELAXED, float("nan"), period, len(tp))
    slope = float(np.polyfit(tp / period, np.log(amp), 1)[0])
    if abs(slope) < DRIFT_TOL:
        verdict = OrbitVerdict.CLOSED
    elif slope < 0:
        verdict = OrbitVerdict.SPIRAL_IN
    else:
        verdict = OrbitVerdict.SPIRAL_OUT
    return OrbitReport(verdict, slope, period, len(tp))


def detect_orbit(traj: Trajectory, window_periods: int = 20, axis: Axis | str = Axis.Z_POLE) -> OrbitVerdict:
    """Decide whether an oscillating trajectory is a closed orbit.

    The relative envelope drift per period ``d`` is the slope of log-amplitude
    against time in units of the period, over the first ``window_periods``
    periods. Closed if ``|d| < 1e-3``; relaxed if the amplitude has fallen
    below 1e-6.

    Raises
    ------
    TooShort
        Fewer than three envelope peaks, or a trajectory shorter than the window.
    """
    return orbit_report(traj, window_periods, axis).verdict


def probe_orbit(
    params: ModelParams,
    point: FixedPoint,
    window_periods: int = 10,
    offset: float = 0.02,
    rel_tol: float = 1e-8,
) -> OrbitReport:
    """Integrate a trajectory started next to a marginal point and judge it."""
    v = point.location.as_array()
    im = max(abs(np.imag(e)) for e in point.jacobian_eigenvalues[:2])
    if im <= 0:
        raise TooShort("point has no rotation to probe")
    period = 2 * np.pi / im
    # step off along a tangent direction, then back onto the sphere
    tangent = np.cross(v, [0.0, 0.0, 1.0] if abs(v[2]) < 0.9 else [1.0, 0.0, 0.0])
    tangent /= np.linalg.norm(tangent)
    start = v + offset * tangent
    start /= np.linalg.norm(start)
    t_end = (window_periods + 3) * period
    n = int(max(400, 40 * (window_periods + 3)))
    traj = integrate(params, start, t_end, rel_tol=rel_tol, abs_tol=rel_tol * 1e-3, n_samples=n)
    axis = Axis.X_POLE if abs(v[0]) < 0.5 and abs(v[2]) > 0.5 else Axis.Z_POLE
    return orbit_report(traj, window_periods, axis)


def btc_verdict(params: ModelParams, points: list[FixedPoint] | None = None, window_periods: int = 10) -> bool:
    """True when a marginal point exists and a probe next to it stays on a closed orbit.

    The probe starts a distance ``min(0.1, 0.3 * d)`` away, ``d`` being the
    distance to the nearest other fixed point, so that slow nonlinear spirals
    are visible without leaving the neighbourhood of the point.
    """
    if points is None:
        points = find_fixed_points(params)
    locs = [fp.location.as_array() for fp in points]
    for i, fp in enumerate(points):
        if fp.stability is not Stability.MARGINAL:
            continue
        others = [np.linalg.norm(locs[i] - l) for j, l in enumerate(locs) if j != i]
        offset = min(0.1, 0.3 * min(others)) if others else 0.1
        try:
            if probe_orbit(params, fp, window_periods, offset).verdict is OrbitVerdict.CLOSED:
                return True
        except BTCError:
            continue
    return False


# --------------------------------------------------------------------------
# phase portraits


@dataclass
class PortraitTrack:
    seed: PolarState
    phi: np.ndarray | None = None
    cos_theta: np.ndarray | None = None
    trajectory: Trajectory | None = None
    error: BTCError | None = None


@dataclass
class PortraitData:
    axis: Axis
    tracks: list[PortraitTrack] = field(default_factory=list)
    fixed_points: list[FixedPoint] = field(default_factory=list)

    def fixed_point_angles(self) -> list[tuple[float, float, str]]:
        out = []
        for fp in self.fixed_points:
            phi, c = angles_array(fp.location.as_array(), self.axis)
            out.append((float(phi[0]), float(c[0]), fp.stability.value))
        return out

    def write_csv(self, fh, header: Sequence[str] = ()) -> None:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "t", "X", "Y", "Z", "phi", "cos_theta"])
        for i, tr in enumerate(self.tracks):
            if tr.trajectory is None:
                continue
            T = tr.trajectory
            for row in zip(T.times, T.x, T.y, T.z, tr.phi, tr.cos_theta):
                w.writerow([i] + [repr(float(v)) for v in row])


def seed_grid(n_phi: int, n_cos: int, axis: Axis | str = Axis.Z_POLE) -> list[PolarState]:
    axis = Axis.parse(axis)
    phis = (np.arange(n_phi) + 0.5) * 2 * np.pi / n_phi
    cs = -1 + (np.arange(n_cos) + 0.5) * 2 / n_cos
    return [PolarState(float(p), float(c), axis) for p in phis for c in cs]


def _run_seed(args):
    params, seed, t_end, axis, n_samples, mode, jump_norm = args
    start = bloch_from_angles(seed.theta, seed.phi, seed.axis)
    try:
        traj = integrate(params, start, t_end, mode=mode, n_samples=n_samples, jump_norm=jump_norm)
    except BTCError as exc:
        return PortraitTrack(seed, error=exc)
    phi, c = traj.angles(axis)
    return PortraitTrack(seed, phi, c, traj)


def phase_portrait(
    params: ModelParams,
    seeds: Sequence[PolarState],
    t_end: float,
    axis: Axis | str = Axis.Z_POLE,
    n_samples: int = 401,
    mode=COLLECTIVE,
    jump_norm: str = "collective",
    executor=None,
) -> PortraitData:
    """Integrate every seed and collect the classified fixed points.

    A failing seed is recorded with its error instead of aborting the batch.
    ``executor`` may be any object with a ``map`` method (e.g. a process pool).
    """
    if not seeds:
        raise DomainError("at least one seed is required")
    axis = Axis.parse(axis)
    jobs = [(params, s, t_end, axis, n_samples, mode, jump_norm) for s in seeds]
    mapper = executor.map if executor is not None else map
    tracks = list(mapper(_run_seed, jobs))
    return PortraitData(axis, tracks, find_fixed_points(params, mode=mode, jump_norm=jump_norm))
