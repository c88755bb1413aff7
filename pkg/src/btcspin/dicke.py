"""Exact dynamics of N collective spins in the maximal total-spin sector.

Basis states are |S=N/2, m> ordered by decreasing m, so index 0 is the
all-up state. Collective operators are normalized as J_a = (2/N) S_a.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.special import gammaln, xlogy

from .errors import DegenerateZero, DimensionMismatch, DomainError, PositivityBreach, SizeLimit
from .params import ModelParams

BASIS_ORDER = "m_descending"
DENSE_LIMIT = 40
EVOLVE_LIMIT = 300


@dataclass(frozen=True, eq=False)
class DickeOperators:
    n_spins: int
    jx: np.ndarray
    jy: np.ndarray
    jz: np.ndarray
    j_plus: np.ndarray
    j_minus: np.ndarray

    @property
    def dim(self) -> int:
        return self.n_spins + 1

    @property
    def m_values(self) -> np.ndarray:
        return np.arange(self.n_spins, -self.n_spins - 1, -2) / 2.0


@lru_cache(maxsize=64)
def _operators(n: int) -> DickeOperators:
    s = n / 2.0
    m = np.arange(n, -n - 1, -2) / 2.0
    jp = np.zeros((n + 1, n + 1), dtype=complex)
    # J+ raises m: column k (m_k) feeds row k-1 (m_k + 1)
    mk = m[1:]
    jp[np.arange(n), np.arange(1, n + 1)] = np.sqrt(s * (s + 1) - mk * (mk + 1)) * (2.0 / n)
    jm = jp.conj().T.copy()
    jx = (jp + jm) / 2
    jy = (jp - jm) / 2j
    jz = np.diag(2.0 * m / n).astype(complex)
    for a in (jp, jm, jx, jy, jz):
        a.setflags(write=False)
    return DickeOperators(n, jx, jy, jz, jp, jm)


def build_operators(n_spins: int) -> DickeOperators:
    """Collective spin matrices for ``n_spins`` spins (cached, read-only)."""
    if int(n_spins) != n_spins or n_spins < 1:
        raise DomainError(f"N must be a positive integer, got {n_spins}")
    return _operators(int(n_spins))


def _n_from(params: ModelParams, n_spins: int | None) -> int:
    n = n_spins if n_spins is not None else params.n_spins
    if n is None:
        raise DomainError("number of spins not given (params.n_spins or argument)")
    return int(n)


def build_hamiltonian(params: ModelParams, ops: DickeOperators) -> np.ndarray:
    """H = -N (omega_z J_z^p + omega_x J_x^q)."""
    n = ops.n_spins
    h = -n * (params.omega_z * np.linalg.matrix_power(ops.jz, params.p)
              + params.omega_x * np.linalg.matrix_power(ops.jx, params.q))
    return (h + h.conj().T) / 2


def _jump_terms(params: ModelParams, ops: DickeOperators):
    n = ops.n_spins
    terms = []
    for rate, a in ((params.gamma_up, ops.j_plus), (params.gamma_down, ops.j_minus)):
        if rate > 0:
            terms.append((n * rate, a))
    return terms


def lindblad_rhs(params: ModelParams, rho: np.ndarray, ops: DickeOperators | None = None) -> np.ndarray:
    """-i[H, rho] + N G_up D[J+](rho) + N G_down D[J-](rho)."""
    rho = np.asarray(rho)
    if ops is None:
        ops = build_operators(rho.shape[0] - 1)
    if rho.shape != (ops.dim, ops.dim):
        raise DimensionMismatch(f"rho has shape {rho.shape}, expected {(ops.dim, ops.dim)}")
    h = build_hamiltonian(params, ops)
    out = -1j * (h @ rho - rho @ h)
    for g, a in _jump_terms(params, ops):
        ad = a.conj().T
        ada = ad @ a
        out += g * (a @ rho @ ad - 0.5 * (ada @ rho + rho @ ada))
    return out


def build_liouvillian(params: ModelParams, n_spins: int | None = None, limit: int = DENSE_LIMIT) -> np.ndarray:
    """Dense superoperator acting on column-stacked density matrices.

    Uses vec(A rho B) = (B^T kron A) vec(rho).
    """
    n = _n_from(params, n_spins)
    if n > limit:
        raise SizeLimit(f"N={n} exceeds the dense Liouvillian limit {limit}")
    ops = build_operators(n)
    h = build_hamiltonian(params, ops)
    eye = np.eye(ops.dim)
    L = -1j * (np.kron(eye, h) - np.kron(h.T, eye))
    for g, a in _jump_terms(params, ops):
        ada = a.conj().T @ a
        L += g * (np.kron(a.conj(), a) - 0.5 * np.kron(eye, ada) - 0.5 * np.kron(ada.T, eye))
    return L


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v: np.ndarray, dim: int) -> np.ndarray:
    return np.asarray(v).reshape((dim, dim), order="F")


def coherent_amplitudes(n_spins: int, theta: float, phi: float) -> np.ndarray:
    """State vector of all spins pointing along (theta, phi)."""
    n = int(n_spins)
    k = np.arange(n, -1, -1)  # number of up spins, N/2 + m
    logc = 0.5 * (gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))
    ch, sh = math.cos(theta / 2), math.sin(theta / 2)
    # xlogy keeps 0 * log 0 = 0 at the poles
    logmag = logc + xlogy(k, abs(ch)) + xlogy(n - k, abs(sh))
    sign = np.sign(ch) ** k * np.sign(sh) ** (n - k)
    mag = np.where(np.isfinite(logmag), np.exp(logmag), 0.0) * sign
    c = mag * np.exp(-1j * k * phi)
    return c / np.linalg.norm(c)


def coherent_state(n_spins: int, theta: float, phi: float) -> np.ndarray:
    c = coherent_amplitudes(n_spins, theta, phi)
    return np.outer(c, c.conj())


def _check_dims(rho: np.ndarray, op: np.ndarray) -> None:
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1] or op.shape != rho.shape:
        raise DimensionMismatch(f"shapes {rho.shape} and {op.shape} do not match")


def expect(rho: np.ndarray, op: np.ndarray) -> complex | float:
    """Tr(rho op); real when the imaginary part is at round-off level."""
    rho, op = np.asarray(rho), np.asarray(op)
    _check_dims(rho, op)
    val = complex(np.einsum("ij,ji->", rho, op))
    return val.real if abs(val.imag) <= 1e-12 * max(1.0, abs(val)) else val


def purity(rho: np.ndarray) -> float:
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DimensionMismatch(f"rho must be square, got {rho.shape}")
    return float(np.real(np.einsum("ij,ji->", rho, rho)))


# --------------------------------------------------------------------------
# time evolution


@dataclass
class Evolution:
    """Expectation values sampled along an exact evolution."""

    times: np.ndarray
    jx: np.ndarray
    jy: np.ndarray
    jz: np.ndarray
    purity: np.ndarray
    trace_error: np.ndarray
    hermiticity_error: np.ndarray
    min_eigenvalue: np.ndarray
    states: np.ndarray | None = None
    nfev: int = 0
    n_spins: int = 0

    def rows(self):
        return zip(self.times, self.jx, self.jy, self.jz, self.purity)


def _sparse_generator(params: ModelParams, ops: DickeOperators):
    """Right-hand side of the master equation using banded sparse products."""
    h = sp.csr_matrix(build_hamiltonian(params, ops))
    hh = h.conj().T.tocsr()
    terms = []
    for g, a in _jump_terms(params, ops):
        asp = sp.csr_matrix(a)
        adiag = np.real(np.diag(a.conj().T @ a))  # J-dagger J is diagonal
        terms.append((g, asp, asp.conj().tocsr(), adiag))

    def f(rho: np.ndarray) -> np.ndarray:
        # rho @ h computed as (h^H @ rho^H)^H keeps the sparse matrix on the left
        out = -1j * (h @ rho - (hh @ rho.conj().T).conj().T)
        for g, a, ac, d in terms:
            ar = a @ rho
            out += g * ((ac @ ar.T).T - 0.5 * (d[:, None] * rho + rho * d[None, :]))
        return out

    return f


def evolve(
    params: ModelParams,
    rho0: np.ndarray,
    sample_times,
    rel_tol: float = 1e-8,
    abs_tol: float = 1e-10,
    keep_states: bool = False,
    limit: int = EVOLVE_LIMIT,
) -> Evolution:
    """Integrate the master equation from ``rho0`` with adaptive RK5(4).

    At every sample the trace, Hermiticity and smallest eigenvalue are
    recorded; an eigenvalue below -1e-6 raises a :class:`PositivityBreach`
    warning but does not stop the run.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    n = rho0.shape[0] - 1
    if rho0.shape != (n + 1, n + 1) or n < 1:
        raise DimensionMismatch(f"rho0 must be square with N >= 1, got {rho0.shape}")
    if n > limit:
        raise SizeLimit(f"N={n} exceeds the evolution limit {limit}")
    ts = np.asarray(sample_times, dtype=float)
    if ts.ndim != 1 or len(ts) == 0 or np.any(np.diff(ts) <= 0):
        raise DomainError("sample_times must be strictly increasing")
    ops = build_operators(n)
    gen = _sparse_generator(params, ops)
    dim = n + 1

    def f(t, y):
        return gen(y.reshape(dim, dim)).ravel()

    if len(ts) == 1:
        ys = rho0.ravel()[None, :]
        nfev = 0
    else:
        sol = solve_ivp(f, (ts[0], ts[-1]), rho0.ravel(), method="RK45", t_eval=ts, rtol=rel_tol, atol=abs_tol)
        if sol.status < 0:
            raise DomainError(f"master-equation integration failed: {sol.message}")
        ys = sol.y.T
        nfev = int(sol.nfev)
    R = ys.reshape(-1, dim, dim)
    jx = np.einsum("tij,ji->t", R, ops.jx).real
    jy = np.einsum("tij,ji->t", R, ops.jy).real
    jz = np.einsum("tij,ji->t", R, ops.jz).real
    pur = np.einsum("tij,tji->t", R, R).real
    tr_err = np.abs(np.einsum("tii->t", R) - 1.0)
    herm = np.abs(R - np.conj(np.swapaxes(R, 1, 2))).max(axis=(1, 2))
    mins = np.array([np.linalg.eigvalsh((r + r.conj().T) / 2)[0] for r in R])
    if np.any(mins < -1e-6):
        warnings.warn(
            f"density matrix eigenvalue {mins.min():.3g} below -1e-6 (N={n})", PositivityBreach, stacklevel=2
        )
    return Evolution(ts, jx, jy, jz, pur, tr_err, herm, mins, R.copy() if keep_states else None, nfev, n)


# --------------------------------------------------------------------------
# spectrum and steady state


@dataclass
class SpectrumResult:
    eigenvalues: np.ndarray
    liouvillian_gap: float
    steady_state: np.ndarray
    degenerate_zero: bool = False
    zero_modes: list = field(default_factory=list)
    norm: float = 0.0

    def complex_pairs(self, tol: float = 1e-8) -> np.ndarray:
        """Eigenvalues with Im > 0 (one member of each conjugate pair), slowest first."""
        ev = self.eigenvalues
        return ev[np.imag(ev) > tol * max(1.0, self.norm)]


def _hermitize_normalize(rho: np.ndarray) -> np.ndarray:
    rho = (rho + rho.conj().T) / 2
    tr = np.trace(rho).real
    if abs(tr) < 1e-300:
        raise DomainError("zero mode has vanishing trace")
    return rho / tr


def _null_vector_lu(L: np.ndarray, lam: complex) -> np.ndarray:
    # inverse iteration on the nearly singular shifted matrix
    n = L.shape[0]
    shift = lam + 1e-10 * max(1.0, np.linalg.norm(L, 1))
    lu = sla.lu_factor(L - shift * np.eye(n))
    v = np.ones(n, dtype=complex) / math.sqrt(n)
    for _ in range(3):
        v = sla.lu_solve(lu, v)
        v /= np.linalg.norm(v)
    return v


def spectrum(L: np.ndarray, k: int | None = None) -> SpectrumResult:
    """Dense eigenvalues of a Liouvillian, slowest first.

    The steady state is the Hermitized, trace-one reshaping of the right
    eigenvector of the eigenvalue closest to zero. If several eigenvalues sit
    below ``1e-8 * ||L||`` a :class:`DegenerateZero` warning is issued and every
    such zero mode is returned in ``zero_modes``.
    """
    L = np.asarray(L)
    size = L.shape[0]
    dim = int(round(math.sqrt(size)))
    if dim * dim != size or L.shape != (size, size):
        raise DimensionMismatch(f"L must be square with a square dimension, got {L.shape}")
    if k is None:
        k = size
    if not 1 <= k <= size:
        raise DomainError(f"k must lie in [1, {size}]")
    norm = float(np.linalg.norm(L, 2)) if size <= 64 else float(np.linalg.norm(L, 1))
    ev = np.linalg.eigvals(L)
    order = np.lexsort((-np.imag(ev), -np.real(ev)))
    ev = ev[order]
    tol = 1e-8 * max(norm, 1e-300)
    zeros = np.flatnonzero(np.abs(ev) < tol)
    i0 = int(np.argmin(np.abs(ev)))
    degenerate = len(zeros) > 1
    modes = []
    if degenerate:
        warnings.warn(f"{len(zeros)} eigenvalues below {tol:.3g}", DegenerateZero, stacklevel=2)
        _, _, vh = np.linalg.svd(L)
        for row in vh[-len(zeros):]:
            try:
                modes.append(_hermitize_normalize(unvec(row.conj(), dim)))
            except DomainError:
                continue
    rho = _hermitize_normalize(unvec(_null_vector_lu(L, ev[i0]), dim))
    if not modes:
        modes = [rho]
    # the zero mode goes first even if round-off nudged its real part
    ev = np.concatenate([[ev[i0]], np.delete(ev, i0)])
    gap = float(abs(np.real(ev[1]))) if size > 1 else 0.0
    return SpectrumResult(ev[:k], gap, rho, degenerate, modes, norm)


def steady_state(params: ModelParams, n_spins: int | None = None, L: np.ndarray | None = None) -> np.ndarray:
    """Stationary density matrix from the smallest right singular vector of L."""
    n = _n_from(params, n_spins)
    if L is None:
        L = build_liouvillian(params, n)
    dim = n + 1
    _, s, vh = np.linalg.svd(L)
    scale = max(float(s[0]), 1e-300)
    small = np.flatnonzero(s < 1e-8 * scale)
    if len(small) > 1:
        warnings.warn(f"{len(small)} singular values below {1e-8 * scale:.3g}", DegenerateZero, stacklevel=2)
    rho = _hermitize_normalize(unvec(vh[-1].conj(), dim))
    res = float(np.linalg.norm(L @ vec(rho)))
    if res >= 1e-8 * max(1.0, scale):
        raise DomainError(f"steady-state residual {res:.3g} too large")
    if np.linalg.eigvalsh(rho)[0] < -1e-8:
        warnings.warn("steady state has a negative eigenvalue", PositivityBreach, stacklevel=2)
    return rho


def x_rotation(n_spins: int) -> np.ndarray:
    """Collective pi rotation about x, exp(-i pi S_x)."""
    ops = build_operators(n_spins)
    return sla.expm(-1j * math.pi * (n_spins / 2.0) * ops.jx)
