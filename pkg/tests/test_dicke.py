import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from btcspin import dicke
from btcspin.errors import DimensionMismatch, DomainError, SizeLimit
from btcspin.params import ModelParams

BTC = ModelParams(2, 1, 1.0, 3.0, 0.2, 0.0)


def comm(a, b):
    return a @ b - b @ a


# ------------------------------------------------------------------ operators


def test_single_spin_operators_are_paulis():
    ops = dicke.build_operators(1)
    assert np.allclose(ops.jx, [[0, 1], [1, 0]])
    assert np.allclose(ops.jy, [[0, -1j], [1j, 0]])
    assert np.allclose(ops.jz, [[1, 0], [0, -1]])
    assert np.allclose(ops.j_plus, [[0, 2], [0, 0]])


def test_basis_order_descending():
    ops = dicke.build_operators(4)
    assert dicke.BASIS_ORDER == "m_descending"
    assert np.array_equal(ops.m_values, [2, 1, 0, -1, -2])
    assert np.allclose(np.diag(ops.jz).real, [1, 0.5, 0, -0.5, -1])


@pytest.mark.parametrize("n", [1, 2, 5, 12])
def test_commutators_and_casimir(n):
    ops = dicke.build_operators(n)
    c = 2.0 / n
    assert np.allclose(comm(ops.jx, ops.jy), 1j * c * ops.jz, atol=1e-13)
    assert np.allclose(comm(ops.jy, ops.jz), 1j * c * ops.jx, atol=1e-13)
    assert np.allclose(comm(ops.jz, ops.jx), 1j * c * ops.jy, atol=1e-13)
    cas = ops.jx @ ops.jx + ops.jy @ ops.jy + ops.jz @ ops.jz
    assert np.allclose(cas, (n + 2) / n * np.eye(n + 1), atol=1e-13)


def test_operators_read_only_and_cached():
    a = dicke.build_operators(6)
    assert a is dicke.build_operators(6)
    with pytest.raises(ValueError):
        a.jz[0, 0] = 3


@pytest.mark.parametrize("n", [0, -1, 2.5])
def test_operators_reject_bad_size(n):
    with pytest.raises(DomainError):
        dicke.build_operators(n)


# ------------------------------------------------------------------ Hamiltonian and generator


def test_single_spin_hamiltonian():
    ops = dicke.build_operators(1)
    h = dicke.build_hamiltonian(ModelParams(2, 1, 1.0, 3.0, 0.0, 0.0), ops)
    # sigma_z^2 is the identity
    assert np.allclose(h, -(np.eye(2) + 3 * np.array([[0, 1], [1, 0]])))


def test_hamiltonian_hermitian_and_scaled():
    ops = dicke.build_operators(10)
    h = dicke.build_hamiltonian(ModelParams(3, 2, 0.7, 1.3, 0.0, 0.0), ops)
    assert np.allclose(h, h.conj().T)
    # top state energy is -N omega_z (plus the transverse term's diagonal)
    jx2 = (ops.jx @ ops.jx)[0, 0].real
    assert h[0, 0].real == pytest.approx(-10 * (0.7 + 1.3 * jx2))


def test_even_power_hamiltonian_commutes_with_x_rotation():
    ops = dicke.build_operators(4)
    r = dicke.x_rotation(4)
    h = dicke.build_hamiltonian(ModelParams(2, 1, 1.0, 1.3, 0.0, 0.0), ops)
    assert np.abs(comm(h, r)).max() < 1e-12
    h3 = dicke.build_hamiltonian(ModelParams(3, 1, 1.0, 1.3, 0.0, 0.0), ops)
    assert np.abs(comm(h3, r)).max() > 1e-3


def test_rhs_preserves_trace_and_hermiticity():
    rng = np.random.default_rng(0)
    prm = ModelParams(2, 1, 1.0, 1.1, 0.3, 0.1)
    a = rng.normal(size=(7, 7)) + 1j * rng.normal(size=(7, 7))
    rho = a @ a.conj().T
    rho /= np.trace(rho)
    d = dicke.lindblad_rhs(prm, rho)
    assert abs(np.trace(d)) < 1e-12
    assert np.allclose(d, d.conj().T, atol=1e-12)


def test_top_state_dark_under_pumping():
    prm = ModelParams(2, 1, 1.0, 0.0, 0.4, 0.0)
    rho = dicke.coherent_state(6, 0.0, 0.0)
    assert np.abs(dicke.lindblad_rhs(prm, rho)).max() < 1e-14


def test_single_spin_decay_rate():
    g = 0.3
    prm = ModelParams(1, 1, 0.0, 0.0, 0.0, g)
    ops = dicke.build_operators(1)
    up = dicke.coherent_state(1, 0.0, 0.0)
    rate = dicke.expect(dicke.lindblad_rhs(prm, up), ops.jz)
    assert rate == pytest.approx(-8 * g, abs=1e-14)


def test_rhs_dimension_check():
    with pytest.raises(DimensionMismatch):
        dicke.lindblad_rhs(BTC, np.eye(3), dicke.build_operators(4))


# ------------------------------------------------------------------ Liouvillian


def test_liouvillian_zero_without_dynamics():
    L = dicke.build_liouvillian(ModelParams(1, 1, 0.0, 0.0, 0.0, 0.0), 1)
    assert np.abs(L).max() == 0


def test_liouvillian_matches_rhs():
    rng = np.random.default_rng(1)
    prm = ModelParams(3, 2, 0.7, 1.3, 0.3, 0.2)
    L = dicke.build_liouvillian(prm, 6)
    rho = rng.normal(size=(7, 7)) + 1j * rng.normal(size=(7, 7))
    assert np.allclose(L @ dicke.vec(rho), dicke.vec(dicke.lindblad_rhs(prm, rho)), atol=1e-12)


def test_liouvillian_trace_row_vanishes():
    L = dicke.build_liouvillian(ModelParams(2, 1, 1.0, 1.1, 0.3, 0.1), 8)
    trace_functional = dicke.vec(np.eye(9))
    assert np.abs(trace_functional @ L).max() < 1e-12


def test_vec_round_trip():
    a = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(dicke.vec(a), [0, 3, 6, 1, 4, 7, 2, 5, 8])
    assert np.array_equal(dicke.unvec(dicke.vec(a), 3), a)


def test_liouvillian_size_limit():
    with pytest.raises(SizeLimit):
        dicke.build_liouvillian(BTC, 41)
    with pytest.raises(DomainError):
        dicke.build_liouvillian(BTC)


# ------------------------------------------------------------------ states and observables


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 60), theta=st.floats(0, math.pi), phi=st.floats(0, 2 * math.pi))
def test_coherent_state_expectations(n, theta, phi):
    rho = dicke.coherent_state(n, theta, phi)
    ops = dicke.build_operators(n)
    assert dicke.purity(rho) == pytest.approx(1, abs=1e-12)
    assert np.trace(rho).real == pytest.approx(1, abs=1e-12)
    s = math.sin(theta)
    expected = (s * math.cos(phi), s * math.sin(phi), math.cos(theta))
    got = [dicke.expect(rho, o) for o in (ops.jx, ops.jy, ops.jz)]
    assert np.allclose(got, expected, atol=1e-10)


def test_coherent_state_poles():
    up = dicke.coherent_amplitudes(5, 0.0, 1.0)
    down = dicke.coherent_amplitudes(5, math.pi, 0.0)
    assert abs(up[0]) == pytest.approx(1) and np.abs(up[1:]).max() < 1e-15
    assert abs(down[-1]) == pytest.approx(1) and np.abs(down[:-1]).max() < 1e-12


def test_coherent_state_large_n_finite():
    c = dicke.coherent_amplitudes(2000, 1.0, 0.3)
    assert np.all(np.isfinite(c))
    assert np.linalg.norm(c) == pytest.approx(1)


def test_expect_and_purity_examples():
    ops = dicke.build_operators(2)
    mixed = np.eye(3) / 3
    assert dicke.expect(mixed, ops.jz) == pytest.approx(0)
    assert isinstance(dicke.expect(mixed, ops.jz), float)
    assert dicke.purity(mixed) == pytest.approx(1 / 3)
    with pytest.raises(DimensionMismatch):
        dicke.expect(mixed, ops.jz[:2, :2])
    with pytest.raises(DimensionMismatch):
        dicke.purity(np.ones((2, 3)))


# ------------------------------------------------------------------ evolution


def test_unitary_evolution_keeps_purity():
    prm = ModelParams(2, 1, 1.0, 3.0, 0.0, 0.0)
    ev = dicke.evolve(prm, dicke.coherent_state(20, 1.0, 0.5), np.linspace(0, 3, 31))
    assert np.abs(ev.purity - 1).max() < 1e-6
    assert ev.trace_error.max() < 1e-8


def test_evolution_diagnostics_and_rows():
    prm = ModelParams(2, 1, 1.0, 1.1, 0.3, 0.1)
    ts = np.linspace(0, 2, 11)
    ev = dicke.evolve(prm, dicke.coherent_state(8, 1.0, 0.5), ts, keep_states=True)
    assert ev.states.shape == (11, 9, 9)
    assert ev.hermiticity_error.max() < 1e-8
    assert ev.min_eigenvalue.min() > -1e-6
    rows = list(ev.rows())
    assert len(rows) == 11 and rows[0][0] == 0.0
    assert rows[0][3] == pytest.approx(math.cos(1.0))


def test_evolution_matches_dense_liouvillian():
    from scipy.linalg import expm

    prm = ModelParams(3, 2, 0.7, 1.3, 0.3, 0.2)
    rho0 = dicke.coherent_state(5, 0.8, 1.1)
    ev = dicke.evolve(prm, rho0, [0.0, 0.7], rel_tol=1e-10, abs_tol=1e-12, keep_states=True)
    exact = dicke.unvec(expm(0.7 * dicke.build_liouvillian(prm, 5)) @ dicke.vec(rho0), 6)
    assert np.abs(ev.states[-1] - exact).max() < 1e-8


def test_evolve_rejects_bad_inputs():
    rho = dicke.coherent_state(4, 1.0, 0.0)
    with pytest.raises(DomainError):
        dicke.evolve(BTC, rho, [0.0, 1.0, 0.5])
    with pytest.raises(SizeLimit):
        dicke.evolve(BTC, rho, [0.0, 1.0], limit=3)


def _late_swing(n):
    ts = np.linspace(0, 30, 601)
    ev = dicke.evolve(BTC, dicke.coherent_state(n, 1.07, math.pi), ts)
    return np.ptp(ev.jz[ts >= 25])


def test_damping_weakens_with_size():
    assert _late_swing(50) > _late_swing(20)


@pytest.mark.slow
def test_coexistence_depends_on_initial_state():
    prm = ModelParams(2, 1, 1.0, 1.0, 0.1, 0.0)
    ts = np.linspace(0, 10, 201)
    late = ts >= 7.5
    osc = dicke.evolve(prm, dicke.coherent_state(100, -math.pi / 6, 0.0), ts)
    fer = dicke.evolve(prm, dicke.coherent_state(100, math.pi / 2, 0.0), ts)
    assert np.ptp(osc.jz[late]) > 5 * np.ptp(fer.jz[late])
    assert np.mean(fer.jz[late]) > 0.5


# ------------------------------------------------------------------ spectrum and steady state


def test_spectrum_zero_mode_and_pairs():
    L = dicke.build_liouvillian(BTC, 10)
    res = dicke.spectrum(L)
    assert abs(res.eigenvalues[0]) < 1e-8 * res.norm
    assert res.liouvillian_gap > 0
    assert np.all(np.real(res.eigenvalues[1:]) < 1e-10)
    ev = res.eigenvalues
    for lam in ev[np.abs(ev.imag) > 1e-6]:
        assert np.min(np.abs(ev - np.conj(lam))) < 1e-8 * res.norm
    pairs = res.complex_pairs()
    assert np.all(pairs.imag > 0)
    assert np.all(np.diff(pairs.real) <= 1e-12)


def test_spectrum_steady_state_matches_svd():
    prm = ModelParams(2, 1, 1.0, 1.1, 0.3, 0.1)
    L = dicke.build_liouvillian(prm, 12)
    a = dicke.spectrum(L).steady_state
    b = dicke.steady_state(prm, 12, L=L)
    fidelity = np.trace(a @ b).real / math.sqrt(dicke.purity(a) * dicke.purity(b))
    assert fidelity > 1 - 1e-8
    assert np.abs(a - b).max() < 1e-8


def test_spectrum_truncation_and_shape_checks():
    L = dicke.build_liouvillian(BTC, 3)
    assert len(dicke.spectrum(L, k=4).eigenvalues) == 4
    with pytest.raises(DomainError):
        dicke.spectrum(L, k=0)
    with pytest.raises(DimensionMismatch):
        dicke.spectrum(np.zeros((5, 5)))


def test_degenerate_zero_reported():
    L = dicke.build_liouvillian(ModelParams(2, 1, 1.0, 0.0, 0.0, 0.0), 3)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = dicke.spectrum(L)
    assert res.degenerate_zero
    assert len(res.zero_modes) >= 2
    assert any("eigenvalues below" in str(w.message) for w in caught)


def test_x_rotation_swaps_pump_and_decay():
    n = 6
    fwd = ModelParams(2, 1, 1.0, 1.1, 0.3, 0.1)
    rev = ModelParams(2, 1, 1.0, 1.1, 0.1, 0.3)
    r = dicke.x_rotation(n)
    a = dicke.steady_state(fwd, n)
    b = dicke.steady_state(rev, n)
    assert np.abs(r @ a @ r.conj().T - b).max() < 1e-9


def test_steady_state_decays_to_bottom():
    rho = dicke.steady_state(ModelParams(2, 1, 1.0, 0.0, 0.0, 0.5), 5)
    target = np.zeros((6, 6))
    target[-1, -1] = 1
    assert np.abs(rho - target).max() < 1e-10


def test_steady_state_trace_and_positivity():
    rho = dicke.steady_state(BTC, 15)
    assert np.trace(rho).real == pytest.approx(1, abs=1e-12)
    assert np.linalg.eigvalsh(rho)[0] > -1e-8
