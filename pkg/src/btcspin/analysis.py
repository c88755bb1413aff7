"""Fits, data collapse, frequency extraction and steady-state diagnostics."""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, InsufficientData, InsufficientRange, NoPeak, SizeLimit


class FitModel(enum.Enum):
    POWER_LAW = "POWER_LAW"
    EXPONENTIAL = "EXPONENTIAL"
    LINEAR_LOGLOG = "LINEAR_LOGLOG"


@dataclass(frozen=True)
class FitResult:
    model: FitModel
    params: dict
    residual_rms: float
    n: int

    def to_record(self, digest: str | None = None) -> dict:
        rec = {"model": self.model.value, "params": dict(self.params), "residual_rms": self.residual_rms, "n": self.n}
        if digest is not None:
            rec["input_digest"] = digest
        return rec


def _line(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    slope, icpt = np.polyfit(x, y, 1)
    rms = float(np.sqrt(np.mean((y - (slope * x + icpt)) ** 2)))
    return float(slope), float(icpt), rms


def _points(env) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(env, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DomainError("envelope must be a sequence of (t, amplitude) pairs")
    return arr[:, 0], arr[:, 1]


def fit_power_amplitude(
    env, skip_before: float | None = None, floor: float = 1e-4, t_min: float | None = None
) -> FitResult:
    """Fit A(t) = B t^k by least squares on log A versus log t.

    The first oscillation period is treated as transient and dropped (the
    first envelope point, or every point before ``skip_before``); amplitudes
    under ``floor`` are dropped too. ``t_min`` restricts the fit to late
    times.
    """
    t, a = _points(env)
    keep = (a >= floor) & (t > 0)
    if skip_before is None and len(t) > 1:
        keep[0] = False
    elif skip_before is not None:
        keep &= t >= skip_before
    if t_min is not None:
        keep &= t >= t_min
    t, a = t[keep], a[keep]
    if len(t) < 5 or t.max() < 10 * t.min():
        raise InsufficientRange(f"need >= 5 points over a decade, got {len(t)} over {t.min() if len(t) else 0:.3g}..")
    k, logb, rms = _line(np.log(t), np.log(a))
    return FitResult(FitModel.POWER_LAW, {"B": math.exp(logb), "exponent": k}, rms, len(t))


def fit_exp_amplitude(env, n_string: float, floor: float = 0.0) -> FitResult:
    """Fit A(t) = A0 exp(-beta t / n_string); returns beta."""
    t, a = _points(env)
    keep = a > floor
    t, a = t[keep], a[keep]
    if len(t) < 5 or np.ptp(t) <= 0:
        raise InsufficientRange(f"need >= 5 envelope points, got {len(t)}")
    slope, icpt, rms = _line(t, np.log(a))
    return FitResult(
        FitModel.EXPONENTIAL,
        {"beta": -slope * n_string, "rate": -slope, "A0": math.exp(icpt), "n_string": n_string},
        rms,
        len(t),
    )


# --------------------------------------------------------------------------
# data collapse


def _as_curves(curves: Mapping) -> list[tuple[float, np.ndarray, np.ndarray]]:
    out = []
    for n, env in sorted(curves.items()):
        t, a = _points(env)
        order = np.argsort(t)
        out.append((float(n), t[order], a[order]))
    return out


def damping_collapse(curves: Mapping, nu: float, n_grid: int = 200, relative: bool = False) -> float:
    """Mean pairwise RMS distance between envelopes replotted against t N^-nu.

    ``curves`` maps N to envelope points (t, A). The envelopes are linearly
    interpolated onto a common grid spanning the overlap of their rescaled
    time ranges. With ``relative`` the score is divided by the RMS amplitude.
    """
    data = _as_curves(curves)
    if len(data) < 3:
        raise InsufficientData(f"need >= 3 system sizes, got {len(data)}")
    scaled = [(t * n ** (-nu), a) for n, t, a in data]
    lo = max(s[0][0] for s in scaled)
    hi = min(s[0][-1] for s in scaled)
    if not hi > lo:
        raise InsufficientRange(f"rescaled envelopes do not overlap at nu={nu}")
    grid = np.linspace(lo, hi, n_grid)
    vals = [np.interp(grid, s, a) for s, a in scaled]
    dists = [math.sqrt(float(np.mean((u - v) ** 2))) for u, v in itertools.combinations(vals, 2)]
    score = float(np.mean(dists))
    if relative:
        score /= math.sqrt(float(np.mean(np.square(vals))))
    return score


def best_collapse(curves: Mapping, nu_grid: Sequence[float] | None = None, relative: bool = False) -> float:
    """Exponent on ``nu_grid`` with the lowest :func:`damping_collapse` score."""
    if nu_grid is None:
        nu_grid = np.linspace(0.0, 1.0, 101)
    best, best_nu = math.inf, float("nan")
    for nu in nu_grid:
        try:
            s = damping_collapse(curves, float(nu), relative=relative)
        except InsufficientRange:
            continue
        if s < best:
            best, best_nu = s, float(nu)
    if not math.isfinite(best):
        raise InsufficientRange("no exponent on the grid gives overlapping envelopes")
    return best_nu


# --------------------------------------------------------------------------
# spectra and frequencies


def gap_scaling(values: Mapping[int, float]) -> FitResult:
    """Log-log slope of a positive quantity (e.g. the gap) against N."""
    items = sorted(values.items())
    if len(items) < 3:
        raise InsufficientData(f"need >= 3 system sizes, got {len(items)}")
    n = np.array([k for k, _ in items], dtype=float)
    g = np.array([abs(v) for _, v in items], dtype=float)
    if np.any(g <= 0):
        raise DomainError("values must be nonzero for a log-log fit")
    slope, icpt, rms = _line(np.log(n), np.log(g))
    return FitResult(FitModel.LINEAR_LOGLOG, {"slope": slope, "prefactor": math.exp(icpt)}, rms, len(n))


@dataclass(frozen=True)
class Frequency:
    cycles: float  # cycles per unit time

    @property
    def angular(self) -> float:
        return 2 * math.pi * self.cycles


def dominant_frequency(times, values, pad: int = 8) -> Frequency:
    """Peak of the Hann-windowed DFT magnitude, refined by a parabola in log magnitude.

    Requires at least 64 uniformly spaced samples. Returns cycles per unit
    time; ``.angular`` gives 2 pi f.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(v) < 64:
        raise InsufficientData(f"need >= 64 samples, got {len(v)}")
    dt = np.diff(t)
    if np.ptp(dt) > 1e-6 * np.mean(dt):
        raise DomainError("samples must be uniformly spaced")
    d = (v - v.mean()) * np.hanning(len(v))
    nfft = pad * len(v)
    mag = np.abs(np.fft.rfft(d, nfft))
    if mag.max() <= 0 or mag[1:].max() < 5 * np.median(mag[1:]):
        raise NoPeak("spectrum is flat")
    k = int(np.argmax(mag[1:])) + 1
    shift = 0.0
    if 0 < k < len(mag) - 1 and min(mag[k - 1], mag[k + 1]) > 0:
        y0, y1, y2 = np.log(mag[k - 1 : k + 2])
        den = y0 - 2 * y1 + y2
        if den != 0:
            shift = 0.5 * (y0 - y2) / den
    return Frequency((k + shift) / (nfft * float(np.mean(dt))))


# --------------------------------------------------------------------------
# steady-state structure


@dataclass(frozen=True)
class SteadyStateMetrics:
    purity: float
    diag_uniformity: float
    offdiag_mass: float
    n_spins: int

    def to_record(self) -> dict:
        return {
            "purity": self.purity,
            "diag_uniformity": self.diag_uniformity,
            "offdiag_mass": self.offdiag_mass,
            "N": self.n_spins,
        }


def steadystate_metrics(rho) -> SteadyStateMetrics:
    rho = np.asarray(rho)
    dim = rho.shape[0]
    pur = float(np.real(np.einsum("ij,ji->", rho, rho)))
    diag = np.real(np.diag(rho))
    off = np.abs(rho) ** 2
    return SteadyStateMetrics(
        pur,
        float(np.max(np.abs(diag - 1.0 / dim))),
        float(off.sum() - np.trace(off)),
        dim - 1,
    )


# --------------------------------------------------------------------------
# product-state total spin


@dataclass(frozen=True)
class ProductAnsatz:
    """N copies of the single-spin state [[a, b e^{-i phase}], [b e^{i phase}, 1 - a]]."""

    a: float
    b: float
    phase: float
    n_spins: int

    def __post_init__(self) -> None:
        if not 0 <= self.a <= 1:
            raise DomainError(f"a must lie in [0, 1], got {self.a}")
        if self.b * self.b > self.a * (1 - self.a) + 1e-15:
            raise DomainError("need a(1 - a) >= b^2 for a positive single-spin state")
        if int(self.n_spins) != self.n_spins or self.n_spins < 1:
            raise DomainError(f"n_spins must be a positive integer, got {self.n_spins}")

    def single_spin(self) -> np.ndarray:
        off = self.b * np.exp(-1j * self.phase)
        return np.array([[self.a, off], [np.conj(off), 1 - self.a]], dtype=complex)

    @property
    def spin_purity(self) -> float:
        return 0.5 * ((2 * self.a - 1) ** 2 + 1 + 4 * self.b**2)


def ansatz_total_spin(ansatz: ProductAnsatz) -> float:
    """<S^2> of the product state from the single-spin purity P.

    Equals 3N/4 + N(N-1)(2P-1)/4.
    """
    n = ansatz.n_spins
    return 3 * n / 4 + n * (n - 1) * (2 * ansatz.spin_purity - 1) / 4


BRUTE_FORCE_LIMIT = 12


def brute_force_total_spin(ansatz: ProductAnsatz) -> float:
    """Tr(rho^{(x)N} S^2) built explicitly in the 2^N-dimensional space."""
    n = ansatz.n_spins
    if n > BRUTE_FORCE_LIMIT:
        raise SizeLimit(f"N={n} exceeds the brute-force limit {BRUTE_FORCE_LIMIT}")
    paulis = [
        sp.csr_matrix(np.array([[0, 1], [1, 0]], dtype=complex)),
        sp.csr_matrix(np.array([[0, -1j], [1j, 0]], dtype=complex)),
        sp.csr_matrix(np.array([[1, 0], [0, -1]], dtype=complex)),
    ]
    eye = sp.identity(2, dtype=complex, format="csr")
    s2 = sp.csr_matrix((2**n, 2**n), dtype=complex)
    for pauli in paulis:
        total = sp.csr_matrix((2**n, 2**n), dtype=complex)
        for site in range(n):
            term = sp.identity(1, dtype=complex, format="csr")
            for j in range(n):
                term = sp.kron(term, pauli if j == site else eye, format="csr")
            total = total + term
        total = total * 0.5
        s2 = s2 + total @ total
    rho1 = ansatz.single_spin()
    rho = np.ones((1, 1), dtype=complex)
    for _ in range(n):
        rho = np.kron(rho, rho1)
    s2 = s2.tocoo()
    # Tr(rho S^2) = sum_ij rho[j, i] S2[i, j]
    return float(np.real(np.sum(rho[s2.col, s2.row] * s2.data)))
