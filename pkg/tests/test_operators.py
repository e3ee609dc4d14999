import numpy as np
import pytest
import scipy.linalg as la

from stabreg import operators as ops
from stabreg.errors import (
    DimensionError,
    IllConditionedBasisError,
    SingularityError,
    TranslationRequiredError,
    UsageError,
)
from stabreg.heat import HeatConfig, build_heat_operator, heat_split
from stabreg.operators import GreenMap, Operator


def stable_random(n, seed, shift=2.0):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((n, n))
    return m - (np.max(la.eigvals(m).real) + shift) * np.eye(n)


# ---------------------------------------------------------------- types

def test_operator_must_be_square():
    with pytest.raises(DimensionError):
        Operator(np.zeros((2, 3)))


def test_operator_rejects_nonfinite():
    with pytest.raises(UsageError):
        Operator(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_operator_entries_immutable():
    op = Operator(np.eye(2))
    with pytest.raises(ValueError):
        op.entries[0, 0] = 5.0


def test_green_map_gamma_range():
    with pytest.raises(UsageError):
        GreenMap(np.ones((3, 1)), gamma=1.0)
    with pytest.raises(UsageError):
        GreenMap(np.ones((3, 1)), gamma=0.0)


# ---------------------------------------------------------------- spectrum

def test_spectrum_fd_laplacian_closed_form():
    cfg = HeatConfig(n=24, c2=9.1)
    sp = ops.spectrum(build_heat_operator(cfg))
    k = np.arange(1, 25)
    exact = np.sort(cfg.c2 - (4 / cfg.h**2) * np.sin(k * np.pi * cfg.h / 2) ** 2)[::-1]
    assert np.abs(sp.eigenvalues.real - exact).max() <= 1e-8
    assert np.abs(sp.eigenvalues.imag).max() <= 1e-10


def test_spectrum_diag_indefinite():
    sp = ops.spectrum(np.diag([1.0, -1.0]))
    assert sp.unstable_count == 1
    assert np.allclose(sp.eigenvalues, [1.0, -1.0])
    assert np.allclose(np.abs(sp.right_vectors), np.eye(2))
    assert np.abs(sp.left_vectors.conj().T @ sp.right_vectors - np.eye(2)).max() <= 1e-12


def test_spectrum_heat_unstable_eigenvalue():
    cfg = HeatConfig(n=64, c2=16.0)
    sp = ops.spectrum(build_heat_operator(cfg))
    assert sp.unstable_count == 1
    exact = cfg.c2 - (4 / cfg.h**2) * np.sin(np.pi * cfg.h / 2) ** 2
    assert abs(sp.eigenvalues[0].real - exact) <= 1e-8


def test_spectrum_biorthogonality_nonsymmetric():
    m = stable_random(12, 7)
    sp = ops.spectrum(m)
    gram = sp.left_vectors.conj().T @ sp.right_vectors
    assert np.abs(gram - np.eye(12)).max() <= 1e-8


def test_spectrum_defective_warns():
    with pytest.warns(UserWarning):
        sp = ops.spectrum(np.array([[0.0, 1.0], [0.0, 0.0]]))
    assert sp.ill_conditioned or sp.defective


# ---------------------------------------------------------------- resolvent

def test_resolvent_scalar_zero():
    r = ops.resolvent(np.zeros((1, 1)), 2.0)
    assert np.allclose(r.entries, [[0.5]])


def test_resolvent_diagonal_formula():
    r = ops.resolvent(np.diag([-1.0, -2.0]), 1j)
    assert np.allclose(np.diag(r.entries), [1 / (1j + 1), 1 / (1j + 2)])


def test_resolvent_residual_random():
    m = stable_random(5, 11)
    lam = 3 + 4j
    r = ops.resolvent(m, lam).entries
    resid = np.linalg.norm((lam * np.eye(5) - m) @ r - np.eye(5), 2)
    assert resid <= 1e-10


def test_resolvent_singularity_names_eigenvalue():
    with pytest.raises(SingularityError) as err:
        ops.resolvent(np.diag([-1.0, -2.0]), -1.0)
    assert "eigenvalue" in str(err.value)


def test_resolvent_residual_property_many_lambdas():
    m = stable_random(8, 13)
    evs = la.eigvals(m)
    rng = np.random.default_rng(5)
    for _ in range(20):
        lam = complex(rng.uniform(-5, 5), rng.uniform(-5, 5))
        if np.min(np.abs(evs - lam)) < 0.3:
            continue
        r = ops.resolvent(m, lam, eigenvalues=evs).entries
        assert np.linalg.norm((lam * np.eye(8) - m) @ r - np.eye(8), 2) <= 1e-8


# ---------------------------------------------------------------- semigroup

def test_semigroup_t0_identity():
    e = ops.semigroup_apply(stable_random(4, 2), 0.0)
    assert np.array_equal(e.entries, np.eye(4))


def test_semigroup_scalar():
    e = ops.semigroup_apply(np.diag([-1.0]), 1.0)
    assert abs(e.entries[0, 0] - np.exp(-1.0)) <= 1e-14


def test_semigroup_nilpotent():
    e = ops.semigroup_apply(np.array([[0.0, 1.0], [0.0, 0.0]]), 1.0)
    assert np.abs(e.entries - [[1.0, 1.0], [0.0, 1.0]]).max() <= 1e-14


def test_semigroup_negative_time_rejected():
    with pytest.raises(UsageError):
        ops.semigroup_apply(np.eye(2), -0.5)


def test_semigroup_overflow_saturates():
    from stabreg.errors import SaturationError
    with pytest.raises(SaturationError) as err:
        ops.semigroup_apply(np.diag([50.0]), 200.0)
    assert "abscissa" in str(err.value)


def test_semigroup_property_random_times():
    m = stable_random(6, 3)
    rng = np.random.default_rng(9)
    for _ in range(5):
        t, s = rng.uniform(0.01, 2.0, 2)
        ets = ops.semigroup_apply(m, t + s).entries
        split = ops.semigroup_apply(m, t).entries @ ops.semigroup_apply(m, s).entries
        assert np.linalg.norm(ets - split, 2) <= 1e-8 * np.linalg.norm(ets, 2)


def test_generator_consistency_first_order():
    m = stable_random(5, 21)
    m = m / np.linalg.norm(m, 2)
    errs = []
    for h in (1e-3, 1e-4):
        diff = (ops.semigroup_apply(m, h).entries - np.eye(5)) / h - m
        errs.append(np.linalg.norm(diff, 2))
    ratio = errs[0] / errs[1]
    assert 7.0 <= ratio <= 13.0


# ---------------------------------------------------------------- fractional powers

def test_fractional_power_diag():
    out = ops.fractional_power(np.diag([4.0]), 0.5)
    assert np.allclose(out.entries, [[2.0]])
    out = ops.fractional_power(np.diag([1.0, 16.0]), 0.25)
    assert np.allclose(np.diag(out.entries), [1.0, 2.0])


def test_fractional_power_sqrt_squares_back():
    cfg = HeatConfig(n=16, c2=9.1)
    a = -heat_split(cfg)[0].entries          # sign-flipped Laplacian, SPD
    half = ops.fractional_power(a, 0.5).entries
    assert np.linalg.norm(half @ half - a, 2) <= 1e-8 * np.linalg.norm(a, 2)


@pytest.mark.parametrize("theta", [0.25, 0.5, 0.75])
def test_fractional_power_semigroup_law(theta):
    rng = np.random.default_rng(17)
    q, _ = np.linalg.qr(rng.standard_normal((7, 7)))
    a = q @ np.diag(rng.uniform(0.5, 30.0, 7)) @ q.T
    p1 = ops.fractional_power(a, theta).entries
    p2 = ops.fractional_power(a, 1.0 - theta).entries
    assert np.linalg.norm(p1 @ p2 - a, 2) <= 1e-6 * np.linalg.norm(a, 2)


def test_fractional_power_requires_translation():
    with pytest.raises(TranslationRequiredError):
        ops.fractional_power(np.diag([1.0, -0.5]), 0.5)
    k, hat = ops.translate_to_positive(np.diag([1.0, -0.5]))
    assert k == 2.0
    ops.fractional_power(hat, 0.5)   # no raise after translation


def test_fractional_power_refuses_ill_conditioned():
    with pytest.warns(UserWarning):
        sp = ops.spectrum(np.array([[1.0, 1.0], [0.0, 1.0 + 1e-13]]))
    with pytest.raises(IllConditionedBasisError):
        ops.fractional_power(np.array([[1.0, 1.0], [0.0, 1.0 + 1e-13]]), 0.5, spectral=sp)


# ---------------------------------------------------------------- closed loop

def _toy_loop(feedback_scale=0.5):
    a_pos = np.diag([2.0, 3.0])
    gen = Operator(-a_pos)
    green = GreenMap(np.array([[1.0], [0.5]]), gamma=0.25)
    f = feedback_scale * np.array([[1.0, -0.5]])
    return ops.compose_closed_loop(gen, green, f, generator_A=gen)


def test_compose_zero_feedback_is_open_loop():
    gen = Operator(np.diag([-2.0, -3.0]))
    green = GreenMap(np.array([[1.0], [0.5]]), gamma=0.25)
    cl = ops.compose_closed_loop(gen, green, None)
    assert np.array_equal(cl.composed.entries, gen.entries)


def test_compose_zero_green_is_open_loop():
    gen = Operator(np.diag([-2.0, -3.0]))
    green = GreenMap(np.zeros((2, 1)), gamma=0.25)
    cl = ops.compose_closed_loop(gen, green, np.array([[1.0, 1.0]]))
    assert np.array_equal(cl.composed.entries, gen.entries)


def test_compose_dimension_error_names_feedback():
    gen = Operator(np.diag([-2.0, -3.0]))
    green = GreenMap(np.array([[1.0], [0.5]]), gamma=0.25)
    with pytest.raises(DimensionError) as err:
        ops.compose_closed_loop(gen, green, np.ones((2, 2)))
    assert "feedback" in str(err.value)


def test_compose_records_factors():
    cl = _toy_loop()
    n = cl.dim
    manual = cl.drift_A.entries @ (np.eye(n) - cl.green.entries @ cl.feedback_matrix())
    assert np.abs(manual - cl.composed.entries).max() <= 1e-12 * np.abs(cl.composed.entries).max()


def test_adjoint_no_feedback_no_perturbation():
    gen = Operator(np.diag([-2.0, -3.0]))
    green = GreenMap(np.array([[1.0], [0.5]]), gamma=0.25)
    cl = ops.compose_closed_loop(gen, green, None)
    adj = ops.adjoint_closed_loop(cl)
    assert np.array_equal(adj.entries, gen.entries.conj().T)


def test_adjoint_rank_one_feedback():
    cl = _toy_loop()
    adj = ops.adjoint_closed_loop(cl)
    assert np.abs(adj.entries - cl.composed.entries.conj().T).max() <= 1e-14
    assert ops.adjoint_decomposition_residual(cl) <= 1e-8


def test_adjoint_heat_with_advection():
    from stabreg.heat import closed_loop_heat, synthesize_heat_feedback
    cfg = HeatConfig(n=32, c2=16.0, advection_b=4.0)
    law, _ = synthesize_heat_feedback(cfg, targets=[-2.0])
    cl = closed_loop_heat(cfg, law)
    assert np.abs(law.as_matrix).max() > 0.0
    assert ops.adjoint_decomposition_residual(cl) <= 1e-8


# ---------------------------------------------------------------- resolvent identity

def test_perturbation_identity_zero_feedback():
    gen = Operator(np.diag([-2.0, -3.0]))
    green = GreenMap(np.array([[1.0], [0.5]]), gamma=0.25)
    cl = ops.compose_closed_loop(gen, green, None)
    assert ops.resolvent_perturbation_residual(cl, 1.0 + 1.0j) <= 1e-14


def test_perturbation_identity_scalar_closed_form():
    gen = Operator(np.array([[-1.0]]))
    green = GreenMap(np.array([[1.0]]), gamma=0.5)
    cl = ops.compose_closed_loop(gen, green, np.array([[0.5]]))
    # A_F = -1 * (1 - 0.5) = -0.5; both sides equal 1/(lam + 0.5)
    assert ops.resolvent_perturbation_residual(cl, 2.0 + 1.0j) <= 1e-14


def test_perturbation_identity_heat():
    from stabreg.heat import closed_loop_heat, synthesize_heat_feedback
    cfg = HeatConfig(n=48, c2=16.0)
    law, _ = synthesize_heat_feedback(cfg, targets=[-2.0])
    cl = closed_loop_heat(cfg, law)
    assert ops.resolvent_perturbation_residual(cl, 50 + 10j) <= 1e-8


def test_perturbation_identity_random_lambdas():
    cl = _toy_loop()
    rng = np.random.default_rng(23)
    for _ in range(20):
        lam = complex(rng.uniform(1.0, 50.0), rng.uniform(-20.0, 20.0))
        assert ops.resolvent_perturbation_residual(cl, lam) <= 1e-8


# ---------------------------------------------------------------- ray decay / decay fit

def test_ray_decay_scalar():
    rows = ops.ray_decay_check(np.array([[1.0]]), 0.5, np.linspace(10, 1000, 12))
    assert ops.fit_loglog_slope(rows) <= -0.4
    vals = [v for _, v in rows]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_ray_decay_diag():
    rows = ops.ray_decay_check(np.diag([1.0, 4.0, 9.0]), 0.25,
                               np.logspace(2, 4, 9))
    assert ops.fit_loglog_slope(rows) <= -0.15


def test_ray_decay_heat_beyond_spectral_radius():
    cfg = HeatConfig(n=32, c2=16.0)
    _, hat = ops.translate_to_positive(build_heat_operator(cfg))
    radius = np.max(np.abs(la.eigvals(hat.entries)))
    grid = [3 * radius, 10 * radius, 30 * radius]
    rows = ops.ray_decay_check(hat, 0.25, grid)
    vals = [v for _, v in rows]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert ops.fit_loglog_slope(rows) <= -0.15


def test_ray_decay_requires_translation():
    with pytest.raises(TranslationRequiredError):
        ops.ray_decay_check(np.diag([-1.0, 2.0]), 0.5, [10.0, 100.0])


def test_decay_estimate_scalar():
    m, delta = ops.decay_estimate(np.diag([-2.0]), np.linspace(0.5, 8, 12))
    assert abs(delta - 2.0) <= 1e-6
    assert abs(m - 1.0) <= 1e-6


def test_decay_estimate_transient_growth():
    # closed form e^{At} = e^{-t} [[1, 10 t], [0, 1]]
    a = np.array([[-1.0, 10.0], [0.0, -1.0]])
    grid = np.linspace(1.0, 40.0, 20)
    m_fit, delta = ops.decay_estimate(a, grid)
    norms = np.array([np.exp(-t) * np.linalg.norm([[1, 10 * t], [0, 1]], 2) for t in grid])
    tail = len(grid) // 2
    slope, _ = np.polyfit(grid[tail:], np.log(norms[tail:]), 1)
    assert abs(delta - (-slope)) <= 1e-6
    assert abs(delta - 1.0) <= 0.1
    assert m_fit > 1.0


def test_decay_estimate_needs_four_points():
    with pytest.raises(UsageError):
        ops.decay_estimate(np.diag([-1.0]), [1.0, 2.0, 3.0])


# ---------------------------------------------------------------- norms / matching

def test_spectral_norm_matches_svd():
    rng = np.random.default_rng(31)
    for n in (3, 8, 20):
        m = rng.standard_normal((n, n))
        assert abs(ops.spectral_norm(m) - np.linalg.norm(m, 2)) <= 1e-8 * np.linalg.norm(m, 2)


def test_spectral_norm_diagonal_exact():
    assert ops.spectral_norm(np.diag([0.25, -3.0, 1.0])) == pytest.approx(3.0, abs=1e-12)


def test_match_spectra():
    a = np.array([1.0, 2.0, 3.0])
    b = np.array([3.0 + 1e-9, 1.0, 2.0])
    assert ops.match_spectra(a, b) <= 1e-8
    with pytest.raises(UsageError):
        ops.match_spectra([1.0], [1.0, 2.0])
