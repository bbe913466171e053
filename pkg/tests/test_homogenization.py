import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikehom.homogenization import (CertificationError, CheckerboardSpec, CorrectorBounds,
                                     HomogenizedTensor, cell_averaged, cell_elliptic,
                                     cell_elliptic_numeric, cell_parabolic, checkerboard_region,
                                     checkerboard_weak_limits, corrector_distance, corrector_l2,
                                     homogenized_q, homogenized_scalar, homogenized_tensor,
                                     laminate_closed_form, certify_corrector_bound, cell_functional,
                                     oscillating_coefficient, weak_pairing_test)

DELTAS = (0.2, 0.1, 0.05, 0.025)


def spec(a=(1, 1, 1, 1), b=(0, 0, 1, 1), c=None, delta=0.5, lam=0.5, Lam=2.0):
    return CheckerboardSpec(a, b, b if c is None else c, delta, lam, Lam)


def random_specs(count, seed=7):
    r = np.random.default_rng(seed)
    return [CheckerboardSpec.random(r, DELTAS[i % 4]) for i in range(count)]


def test_weak_limits_values():
    assert np.allclose(checkerboard_weak_limits(0.3), (0.49, 0.21, 0.21, 0.09), atol=1e-15)
    assert np.allclose(checkerboard_weak_limits(0.5), (0.25,) * 4)
    with pytest.raises(ValueError):
        checkerboard_weak_limits(0.0)


def test_region_convention():
    # fractional part 0 belongs to the lower interval
    assert checkerboard_region(0.0, 0.0, 0.5) == 3
    assert checkerboard_region(0.7, 0.7, 0.5) == 0
    assert checkerboard_region(0.2, 0.7, 0.5) == 1
    assert checkerboard_region(0.7, 0.2, 0.5) == 2


def test_oscillating_coefficient_example():
    A = ["m1", "m2", "m3", "m4"]
    assert oscillating_coefficient(A, 0.5, 0.5, 1.0, 0.6, 0.3) == "m2"
    assert oscillating_coefficient(A, 0.5, 0.5, 1.0, 1.0, 1.0) == "m4"
    assert oscillating_coefficient([lambda t, x: t + x] * 4, 0.5, 0.1, 2.0, 0.25, 0.5) == 0.75
    with pytest.raises(ValueError):
        oscillating_coefficient(A, 0.5, 0.0, 1.0, 0.1, 0.1)


def test_oscillating_coefficient_near_full_delta():
    r = np.random.default_rng(3)
    picks = [oscillating_coefficient(range(4), 0.999, 0.01, 1.0, *r.uniform(0, 1, 2)) for _ in range(200)]
    assert sum(p == 3 for p in picks) >= 190


def test_spec_validation():
    with pytest.raises(ValueError):
        CheckerboardSpec((1, 1, 1), (0,) * 4, (0,) * 4, 0.5, 0.5, 2)
    with pytest.raises(ValueError):
        CheckerboardSpec((3, 1, 1, 1), (0,) * 4, (0,) * 4, 0.5, 0.5, 2)
    with pytest.raises(ValueError):
        CheckerboardSpec((1,) * 4, (0,) * 4, (0, 0, 0, 5), 0.5, 0.5, 2)


def test_elliptic_hand_example():
    sol = cell_elliptic(spec())
    g = sol.sample(8, 8)
    y = (np.arange(8) + 0.5) / 8
    assert np.allclose(g[:, y >= 0.5], 0.5) and np.allclose(g[:, y < 0.5], -0.5)


def test_averaged_hand_example():
    sol = cell_averaged(spec(b=(0, 0, 1, 0)))
    g = sol.sample(8, 8)
    y = (np.arange(8) + 0.5) / 8
    assert np.allclose(g[:, y >= 0.5], 0.25) and np.allclose(g[:, y < 0.5], -0.25)


@pytest.mark.parametrize("solver", [cell_elliptic, cell_averaged,
                                    lambda s: cell_parabolic(s, (32, 32))])
def test_constant_b_gives_zero_corrector(solver):
    s = CheckerboardSpec((0.7, 1.2, 1.9, 0.9), (0.4,) * 4, (1, -1, 0.5, 0), 0.3, 0.5, 2.0)
    assert corrector_l2(s, solver(s)) <= 1e-12


def test_averaged_vanishes_when_b_is_s_independent():
    s = CheckerboardSpec((0.7, 1.2, 1.9, 0.9), (0.3, -1, 0.3, -1), (1, 0, 0, 0), 0.3, 0.5, 2.0)
    assert corrector_l2(s, cell_averaged(s)) <= 1e-15


def test_functional_hand_examples():
    s = spec()
    assert cell_functional(s, cell_elliptic(s)) == pytest.approx(-0.5, abs=1e-14)
    v3 = cell_functional(s, cell_averaged(s))
    assert abs(v3 + 1) <= CorrectorBounds(0.5, 2.0).averaged(0.5)
    assert s.target == -1.0


@pytest.mark.parametrize("k", [1, 3])
def test_functional_zero_for_constant_c(k):
    s = CheckerboardSpec((0.7, 1.2, 1.9, 0.9), (0.2, -1, 1.9, 0), (0.8,) * 4, 0.3, 0.5, 2.0)
    sol = cell_elliptic(s) if k == 1 else cell_averaged(s)
    assert abs(cell_functional(s, sol)) <= 1e-14


@pytest.mark.parametrize("s", random_specs(8))
def test_correctors_have_zero_y_mean(s):
    for sol in (cell_elliptic(s), cell_averaged(s), cell_parabolic(s, (32, 32))):
        assert np.max(np.abs(sol.y_means())) <= 1e-12


@pytest.mark.parametrize("s", random_specs(6, seed=11))
def test_numeric_elliptic_matches_closed_form(s):
    exact = cell_functional(s, cell_elliptic(s))
    assert cell_functional(s, cell_elliptic_numeric(s, 128)) == pytest.approx(exact, abs=1e-10)


@pytest.mark.parametrize("s", random_specs(16, seed=5))
def test_corrector_bounds(s):
    d = s.delta
    B = CorrectorBounds(s.lam, s.Lam)
    e, a, p = cell_elliptic(s), cell_averaged(s), cell_parabolic(s, (64, 64))
    # large-area regions carry an O(delta) gradient
    assert max(abs(e.pieces[0]), abs(e.pieces[1])) <= B.elliptic_pointwise(d)
    for sol in (e, a, p):
        assert corrector_l2(s, sol) <= B.parabolic_energy(d)
    assert corrector_distance(s, p, e) <= B.parabolic_vs_elliptic(d)


def test_averaged_pieces_bounded_as_delta_grows():
    for d in np.linspace(0.05, 0.999, 60):
        for s in random_specs(4, seed=int(d * 1000)):
            sol = cell_averaged(s.with_delta(d))
            assert max(map(abs, sol.pieces)) <= 2 * s.Lam / s.lam


def test_parabolic_grid_validation():
    with pytest.raises(ValueError):
        cell_parabolic(spec(), (8, 8))


def test_parabolic_converges_under_refinement():
    s = random_specs(1, seed=99)[0]
    vals = [cell_functional(s, cell_parabolic(s, (n, n))) for n in (32, 64, 128)]
    assert abs(vals[2] - vals[1]) <= abs(vals[1] - vals[0]) + 1e-12


def test_certify_zero_target():
    s = CheckerboardSpec((1.3,) * 4, (0.5, -0.2, 0.5, -0.2), (1.0, -1.5, 0.3, 2.0), 0.1, 0.5, 2.0)
    rep = certify_corrector_bound(s)
    assert rep.ok and rep.target == 0.0
    assert max(rep.error) <= 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_certify_random_margin_factor(seed):
    s = CheckerboardSpec.random(np.random.default_rng(seed), 0.04)
    rep = certify_corrector_bound(s, grid=(64, 64))
    assert rep.ok
    assert all(rep.bound >= 10 * (e + (rep.k2_discretization if k == 1 else 0))
               for k, e in enumerate(rep.error))


def test_certify_report_json_and_raise():
    rep = certify_corrector_bound(spec(delta=0.1), grid=(32, 32))
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["k"] == [1, 2, 3] and len(d["pass"]) == 3 and d["spec"]["delta"] == 0.1
    bad = certify_corrector_bound(spec(delta=0.1), grid=(32, 32))
    bad.passed[1] = False
    assert "k=2" in bad.failure_message()


def test_certify_raises_when_bound_violated(monkeypatch):
    import spikehom.homogenization as hm
    monkeypatch.setattr(hm.CorrectorBounds, "sqrt_rate", lambda self, d: 0.0)
    with pytest.raises(CertificationError):
        certify_corrector_bound(spec(delta=0.1), grid=(32, 32), raise_on_fail=True)


def test_laminate_four_thirds():
    a = (1.0, 1.0, 2.0, 2.0)
    assert laminate_closed_form(a, 0.5) == pytest.approx(4 / 3, abs=1e-12)
    assert homogenized_scalar(a, 0.5, 1) == pytest.approx(4 / 3, abs=1e-12)
    assert homogenized_scalar(a, 0.5, 3) == pytest.approx(4 / 3, abs=1e-12)
    assert homogenized_scalar(a, 0.5, 2, grid=(64, 64)) == pytest.approx(4 / 3, abs=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.5, 2.0), min_size=4, max_size=4), st.floats(0.05, 0.95))
def test_closed_form_regime_matches_laminate(a, delta):
    assert homogenized_scalar(a, delta, 1) == pytest.approx(laminate_closed_form(a, delta), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.5, 2.0), min_size=4, max_size=4), st.floats(0.05, 0.95),
       st.sampled_from([1, 3]))
def test_effective_coefficient_between_harmonic_and_arithmetic(a, delta, regime):
    mu = np.array(checkerboard_weak_limits(delta))
    q = homogenized_scalar(a, delta, regime)
    harmonic = 1.0 / np.dot(mu, 1.0 / np.array(a))
    assert harmonic - 1e-12 <= q <= np.dot(mu, a) + 1e-12


def test_equal_coefficients_are_unchanged():
    A = np.array([[1.5, 0.3], [0.3, 1.1]])
    for regime in (1, 2, 3):
        Q = homogenized_tensor([A] * 4, 0.3, regime, grid=(32, 32))
        assert np.allclose(Q, A, atol=1e-13)


def test_tensor_is_symmetric_and_matches_scalar_direction():
    A4 = [np.diag([1.0, 1.0]), np.diag([1.0, 1.0]), np.diag([2.0, 2.0]), np.diag([2.0, 2.0])]
    Q = homogenized_tensor(A4, 0.5, 1)
    assert Q[0, 0] == pytest.approx(4 / 3) and Q[1, 1] == pytest.approx(1.5) and Q[0, 1] == 0.0


def test_homogenized_q_caches_and_validates():
    pts = np.array([[1, 1, 2, 2]] * 5 + [[1, 1, 1, 1]], dtype=float)
    H = homogenized_q(pts, 0.5, 1)
    assert isinstance(H, HomogenizedTensor) and H.n == 1
    assert np.allclose(H.scalar(), [4 / 3] * 5 + [1.0])
    with pytest.raises(ValueError):
        HomogenizedTensor(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_weak_pairing_decays():
    rep = weak_pairing_test(0.3, [0.2, 0.1, 0.05, 0.025])
    assert all(b < a for a, b in zip(rep.gaps, rep.gaps[1:]))
    assert rep.gaps[-1] <= 0.01
