import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from btcspin import analysis as an
from btcspin import dicke
from btcspin.errors import DomainError, InsufficientData, InsufficientRange, NoPeak, SizeLimit
from btcspin.params import ModelParams


# ------------------------------------------------------------------ amplitude fits


def test_power_fit_recovers_exponent():
    t = np.geomspace(1, 1000, 40)
    env = list(zip(t, 0.7 * t**-0.5))
    fit = an.fit_power_amplitude(env)
    assert fit.model is an.FitModel.POWER_LAW
    assert fit.params["exponent"] == pytest.approx(-0.5, rel=1e-3)
    assert fit.params["B"] == pytest.approx(0.7, rel=1e-3)
    assert fit.n == 39


def test_power_fit_floor_and_late_window():
    t = np.geomspace(1, 1e4, 60)
    env = list(zip(t, t**-0.25))
    fit = an.fit_power_amplitude(env, floor=0.2, t_min=10)
    assert fit.params["exponent"] == pytest.approx(-0.25, rel=1e-3)
    assert max(t[(t >= 10) & (t**-0.25 >= 0.2)]) < 700


def test_power_fit_needs_a_decade():
    t = np.linspace(10, 50, 30)
    with pytest.raises(InsufficientRange):
        an.fit_power_amplitude(list(zip(t, 1 / t)))
    with pytest.raises(InsufficientRange):
        an.fit_power_amplitude([(1, 1), (10, 0.1), (100, 0.01)])


def test_exp_fit_recovers_beta():
    ns = 40
    t = np.linspace(0, 200, 50)
    env = list(zip(t, 0.9 * np.exp(-0.11 * t / ns)))
    fit = an.fit_exp_amplitude(env, ns)
    assert fit.params["beta"] == pytest.approx(0.11, rel=1e-3)
    assert fit.params["A0"] == pytest.approx(0.9, rel=1e-3)
    assert fit.residual_rms < 1e-12


def test_fit_record_and_bad_shape():
    fit = an.fit_exp_amplitude([(i, math.exp(-i)) for i in range(6)], 1)
    rec = fit.to_record("abc")
    assert rec["model"] == "EXPONENTIAL" and rec["input_digest"] == "abc"
    with pytest.raises(DomainError):
        an.fit_exp_amplitude([1, 2, 3], 1)
    with pytest.raises(InsufficientRange):
        an.fit_exp_amplitude([(0, 1), (1, 0.5)], 1)


# ------------------------------------------------------------------ collapse


def synthetic_curves(nu, sizes=(20, 40, 80, 160), n_points=400):
    out = {}
    for n in sizes:
        t = np.linspace(0, 60 * n**nu, n_points)
        out[n] = list(zip(t, np.exp(-t / n**nu)))
    return out


def test_collapse_recovers_exponent():
    assert an.best_collapse(synthetic_curves(0.4)) == pytest.approx(0.4, abs=0.02)


def test_collapse_of_size_independent_curves():
    curves = {n: [(t, math.exp(-0.1 * t)) for t in np.linspace(0, 50, 200)] for n in (10, 20, 40)}
    assert an.best_collapse(curves) == pytest.approx(0.0, abs=1e-12)
    assert an.damping_collapse(curves, 0.0) < 1e-12


def test_collapse_stable_when_points_halved():
    full = an.best_collapse(synthetic_curves(0.4, n_points=400))
    half = an.best_collapse(synthetic_curves(0.4, n_points=200))
    assert abs(full - half) <= 0.02


def test_collapse_relative_score_scale_free():
    a = synthetic_curves(0.3)
    b = {n: [(t, 5 * v) for t, v in env] for n, env in a.items()}
    assert an.damping_collapse(a, 0.2, relative=True) == pytest.approx(an.damping_collapse(b, 0.2, relative=True))


def test_collapse_needs_three_sizes():
    with pytest.raises(InsufficientData):
        an.damping_collapse(synthetic_curves(0.4, sizes=(10, 20)), 0.4)


def test_collapse_needs_overlap():
    curves = {10: [(0, 1), (1, 1)], 20: [(5, 1), (6, 1)], 40: [(50, 1), (60, 1)]}
    with pytest.raises(InsufficientRange):
        an.damping_collapse(curves, 0.0)
    with pytest.raises(InsufficientRange):
        an.best_collapse(curves, nu_grid=[0.0])


# ------------------------------------------------------------------ gap and frequency


def test_gap_scaling_inverse_size():
    fit = an.gap_scaling({n: 3.0 / n for n in (10, 20, 40, 80)})
    assert fit.params["slope"] == pytest.approx(-1, abs=1e-12)
    assert fit.params["prefactor"] == pytest.approx(3, rel=1e-12)


def test_gap_scaling_errors():
    with pytest.raises(InsufficientData):
        an.gap_scaling({10: 1, 20: 0.5})
    with pytest.raises(DomainError):
        an.gap_scaling({10: 1, 20: 0, 30: 0.3})


def test_dominant_frequency_sinusoid():
    t = np.linspace(0, 100, 2001)
    f = an.dominant_frequency(t, np.cos(2 * np.pi * 0.3 * t + 0.4))
    assert f.cycles == pytest.approx(0.3, rel=1e-3)
    assert f.angular == pytest.approx(2 * np.pi * f.cycles)


def test_dominant_frequency_errors():
    t = np.linspace(0, 10, 200)
    with pytest.raises(NoPeak):
        an.dominant_frequency(t, np.full(200, 0.7))
    with pytest.raises(InsufficientData):
        an.dominant_frequency(t[:20], np.sin(t[:20]))
    with pytest.raises(DomainError):
        an.dominant_frequency(t**2, np.sin(t))


@pytest.mark.slow
def test_frequency_converges_with_size():
    prm = ModelParams(2, 1, 1.0, 3.0, 0.2, 0.0)
    ts = np.linspace(0, 10, 501)
    freqs = []
    for n in (50, 100):
        ev = dicke.evolve(prm, dicke.coherent_state(n, math.pi / 3, math.pi), ts)
        freqs.append(an.dominant_frequency(ts, ev.jz).cycles)
    assert abs(freqs[0] - freqs[1]) / freqs[1] < 0.02


# ------------------------------------------------------------------ steady-state metrics


def test_metrics_maximally_mixed():
    m = an.steadystate_metrics(np.eye(5) / 5)
    assert m.purity == pytest.approx(0.2)
    assert m.diag_uniformity == pytest.approx(0, abs=1e-15)
    assert m.offdiag_mass == pytest.approx(0, abs=1e-15)
    assert m.n_spins == 4
    assert set(m.to_record()) == {"purity", "diag_uniformity", "offdiag_mass", "N"}


def test_metrics_pure_coherent_state():
    rho = dicke.coherent_state(6, math.pi / 2, 0.0)
    m = an.steadystate_metrics(rho)
    assert m.purity == pytest.approx(1)
    assert m.offdiag_mass == pytest.approx(1 - np.sum(np.abs(np.diag(rho)) ** 2))


# ------------------------------------------------------------------ product ansatz


def test_ansatz_pure_state_gives_maximal_spin():
    n = 7
    ans = an.ProductAnsatz(1.0, 0.0, 0.0, n)
    assert ans.spin_purity == pytest.approx(1)
    assert an.ansatz_total_spin(ans) == pytest.approx(n / 2 * (n / 2 + 1))


def test_ansatz_mixed_state():
    n = 4
    ans = an.ProductAnsatz(0.5, 0.0, 0.0, n)
    assert an.ansatz_total_spin(ans) == pytest.approx(3 * n / 4)


@settings(max_examples=30, deadline=None)
@given(
    a=st.floats(0, 1),
    frac=st.floats(0, 1),
    phase=st.floats(0, 2 * math.pi),
    n=st.integers(1, 6),
)
def test_ansatz_matches_brute_force(a, frac, phase, n):
    b = frac * math.sqrt(a * (1 - a))
    ans = an.ProductAnsatz(a, b, phase, n)
    assert an.ansatz_total_spin(ans) == pytest.approx(an.brute_force_total_spin(ans), abs=1e-10)


def test_ansatz_validation():
    with pytest.raises(DomainError):
        an.ProductAnsatz(1.2, 0, 0, 3)
    with pytest.raises(DomainError):
        an.ProductAnsatz(0.5, 0.6, 0, 3)
    with pytest.raises(DomainError):
        an.ProductAnsatz(0.5, 0, 0, 0)
    with pytest.raises(SizeLimit):
        an.brute_force_total_spin(an.ProductAnsatz(0.5, 0, 0, 13))
