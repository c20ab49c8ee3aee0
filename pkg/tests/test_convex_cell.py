import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import solve_banded

from homlab.coeff import FieldModel, realize
from homlab.convex_cell import (LagrangianSpec, LagrangianSpecError, cell_minimum_1d,
                                cell_partition, cell_profile, convexity_check, cutoff,
                                ensemble_f_star, glue_affine_boundary, homogenized_lagrangian,
                                profile_energy, remainder_terms, write_records_csv,
                                write_summary_json)

QUAD = LagrangianSpec.power(2.0)
CB = FieldModel.checkerboard()


def quadratic_oracle(field, q, R, dx=0.05):
    """Direct solve of the discrete quadratic cell problem.

    Minimize sum_i a_i (u_{i+1} - u_i)^2 / l_i with u(-R) = -qR, u(R) = qR:
    a tridiagonal system for the interior nodes.
    """
    edges, a = cell_partition(field, R, dx)
    k = a / np.diff(edges)
    n = k.size - 1
    ab = np.zeros((3, n))
    ab[0, 1:] = -k[1:-1]
    ab[1] = k[:-1] + k[1:]
    ab[2, :-1] = -k[1:-1]
    rhs = np.zeros(n)
    rhs[0] += k[0] * (-q * R)
    rhs[-1] += k[-1] * (q * R)
    u = np.concatenate([[-q * R], solve_banded((1, 1), ab, rhs), [q * R]])
    return float(np.sum(k * np.diff(u) ** 2) / (2 * R))


def test_constant_coefficient_exact():
    f = realize(FieldModel.constant(1.0))
    for R in (1.0, 7.3, 50.0):
        assert cell_minimum_1d(QUAD, f, 1.0, R).m_R == pytest.approx(1.0, rel=1e-12)


def test_periodic_halves_harmonic_mean():
    f = realize(FieldModel.periodic([1.0, 2.0], period=1.0, interp="step"), 6)
    for R in (5.0, 20.0):
        pt = cell_minimum_1d(QUAD, f, 1.0, R)
        assert pt.m_R == pytest.approx(4 / 3, rel=1e-10)
        assert quadratic_oracle(f, 1.0, R) == pytest.approx(4 / 3, rel=1e-10)


def test_zero_slope_gives_zero():
    f = realize(CB, 1)
    for p in (1.5, 2.0, 3.0):
        assert cell_minimum_1d(LagrangianSpec.power(p), f, 0.0, 10.0).m_R == 0.0


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), q=st.floats(-3, 3).filter(lambda v: abs(v) > 1e-3),
       R=st.sampled_from([3.0, 10.0, 31.0]))
def test_quadratic_matches_linear_solve(seed, q, R):
    f = realize(CB, seed)
    pt = cell_minimum_1d(QUAD, f, q, R)
    assert pt.m_R == pytest.approx(quadratic_oracle(f, q, R), rel=1e-6)
    assert abs(pt.residual) <= 1e-8


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), R=st.sampled_from([10.0, 50.0]))
def test_per_realization_harmonic_mean(seed, R):
    f = realize(CB, seed)
    edges, a = cell_partition(f, R, 0.05)
    c = 2 * R / np.sum(np.diff(edges) / a)
    assert cell_minimum_1d(QUAD, f, 1.0, R).m_R == pytest.approx(c, rel=1e-9)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000), q=st.floats(-2, 2), p=st.sampled_from([1.5, 2.0, 3.0]))
def test_growth_sandwich(seed, q, p):
    L = LagrangianSpec.power(p, c0=1.0, C0=2.0)
    m = cell_minimum_1d(L, realize(CB, seed), q, 10.0).m_R
    lo, hi = L.growth_bounds(q)
    assert lo - 1e-9 <= m <= hi + 1e-9


def test_even_symmetry():
    f = realize(CB, 2)
    a = cell_minimum_1d(LagrangianSpec.power(3.0), f, 0.7, 20.0).m_R
    b = cell_minimum_1d(LagrangianSpec.power(3.0), f, -0.7, 20.0).m_R
    assert a == pytest.approx(b, rel=1e-10)


def test_custom_matches_power():
    L = LagrangianSpec.custom(lambda a, s: a * s * s, lambda a, s: 2 * a * s, 2.0, 1.0, 2.0)
    f = realize(CB, 4)
    assert cell_minimum_1d(L, f, 1.3, 20.0).m_R == pytest.approx(
        cell_minimum_1d(QUAD, f, 1.3, 20.0).m_R, rel=1e-8)


def test_affine_perturbation_shifts_by_bq():
    b, q = 0.7, 1.1
    L = LagrangianSpec.custom(lambda a, s: a * s * s + b * s, lambda a, s: 2 * a * s + b,
                              2.0, 1.0, 2.0)
    f = realize(CB, 8)
    base = cell_minimum_1d(QUAD, f, q, 15.0)
    pert = cell_minimum_1d(L, f, q, 15.0)
    assert pert.m_R == pytest.approx(base.m_R + b * q, rel=1e-8)


def test_non_coercive_custom_refused():
    L = LagrangianSpec.custom(lambda a, s: 0.0 * s, lambda a, s: 0.0 * s,
                              2.0, 1.0, 2.0)
    with pytest.raises(LagrangianSpecError):
        cell_minimum_1d(L, realize(CB, 0), 1.0, 5.0)


def test_parameter_checks():
    with pytest.raises(ValueError):
        cell_minimum_1d(QUAD, realize(CB, 0), 1.0, 0.5)
    with pytest.raises(ValueError):
        cell_minimum_1d(QUAD, realize(CB, 0), 1.0, 5.0, dx=0.2)
    with pytest.raises(LagrangianSpecError):
        LagrangianSpec.power(1.0)


def test_ensemble_closed_form():
    assert ensemble_f_star(CB, 1.0) == pytest.approx(4 / 3)
    assert ensemble_f_star(FieldModel.constant(1.5), 2.0) == pytest.approx(6.0)
    assert ensemble_f_star(FieldModel.poisson_bumps(), 1.0) is None


def test_window_differences_shrink_on_average():
    diffs = []
    for seed in range(20):
        f = realize(CB, seed)
        v = [cell_minimum_1d(QUAD, f, 1.0, R).m_R for R in (25.0, 50.0, 100.0, 200.0)]
        diffs.append(np.abs(np.diff(v)))
    d = np.mean(diffs, axis=0)
    assert np.all(np.diff(d) < 0)


def test_homogenized_lagrangian_and_serialization(tmp_path):
    est, rec = homogenized_lagrangian(QUAD, CB, [1.0, -1.0], [25.0, 100.0], range(6))
    assert len(rec) == 24
    assert est[0].f_star == pytest.approx(est[1].f_star, rel=1e-10)
    write_records_csv(rec, tmp_path / "r.csv")
    header = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert header == "q,R,seed,m_R,lambda"
    write_summary_json(est, tmp_path / "s.json")
    data = json.loads((tmp_path / "s.json").read_text())
    assert data["estimates"][0]["q"] == 1.0


def test_quadratic_homogeneity_and_convexity():
    qs = [0.5, 1.0, 2.0]
    est, _ = homogenized_lagrangian(QUAD, CB, qs, [200.0], range(5))
    f1 = est[1].f_star
    for e, q in zip(est, qs):
        assert e.f_star == pytest.approx(f1 * q * q, rel=0.02)
    assert convexity_check(qs, [e.f_star for e in est]).ok


def test_convexity_check_cases():
    assert convexity_check([-1, 0, 1], [1.0, 0.0, 1.0]).ok
    rep = convexity_check([-1, 0, 1], [0.0, 1.0, 0.0])
    assert not rep.ok and rep.violations[0][1] == 0.0
    with pytest.raises(ValueError):
        convexity_check([0, 1], [0, 1])


def test_cutoff_shape():
    z = np.linspace(-1, 1, 2001)
    c = cutoff(z, 0.1)
    assert np.all(c[np.abs(z) <= 0.9 - 1e-12] == 1.0)
    assert c[0] == 0.0 and c[-1] == 0.0
    assert np.max(np.abs(np.diff(c) / np.diff(z))) <= 2 / 0.1 + 1e-9


def test_glue_affine_is_identity_and_ends_exact():
    y = np.linspace(-10, 10, 401)
    np.testing.assert_array_equal(glue_affine_boundary(y, 0.8 * y, 0.8, 0.3), 0.8 * y)
    rng = np.random.default_rng(0)
    v = glue_affine_boundary(y, rng.normal(size=y.size), 0.8, 0.3)
    assert v[0] == 0.8 * y[0] and v[-1] == 0.8 * y[-1]
    with pytest.raises(ValueError):
        glue_affine_boundary(y, y, 1.0, 1.0)


def test_glue_remainder_constant_stable():
    ratios = {}
    for R in (20.0, 40.0, 80.0):
        r = []
        for seed in range(3):
            f = realize(CB, seed)
            pt = cell_minimum_1d(QUAD, f, 1.0, R)
            y, u = cell_profile(QUAD, f, pt)
            u = u + 0.3 * np.sin(y * np.random.default_rng(seed).uniform(0.5, 2))
            v = glue_affine_boundary(y, u, 1.0, 0.2)
            excess = profile_energy(QUAD, f, y, v) - profile_energy(QUAD, f, y, u)
            r.append(excess / remainder_terms(QUAD, f, y, u, 1.0, 0.2).sum())
        ratios[R] = max(r)
    assert all(c <= 1.0 for c in ratios.values())
    assert ratios[80.0] <= 2 * max(ratios[20.0], 1e-3)
