import json
import os

import numpy as np
import pytest

from homlab.coeff import FieldModel, MacroModulus, eval_macro, realize
from homlab.diffuse import (DiscreteProfile, build_test_function, cell_pieces, default_step,
                            local_average_integrand, macro_cells, minimize_diffuse,
                            rescale_to_micro)
from homlab.ymeasure import (EmpiricalMeasure, WindowShapeError, energy_from_measure,
                             invariance_diagnostic, marginal_q_diagnostic, window_samples)

CB = FieldModel.checkerboard()
ONE = realize(FieldModel.constant(1.0))
M1 = MacroModulus.constant(1.0)


def micro_profile(eps, h=0.01, func=None, seed=0):
    n = int(round(1 / eps / h))
    t = h * np.arange(n + 1)
    vals = func(t) if func is not None else np.random.default_rng(seed).normal(size=n + 1)
    return DiscreteProfile(h, vals)


def direct_sum(P, u, field, m):
    """Grid sum of f_eps(u, x/eps) over the retained atom points, read off the full profile."""
    vals = [local_average_integrand(u, field, float(eval_macro(m, a.x)), a.x / P.eps, P.eps)
            for a in P.atoms]
    return float(np.mean(vals))


def test_constant_field_windows_identical():
    P = window_samples(micro_profile(0.1), ONE, M1, 0.1, 1.0, 10)
    for a in P.atoms[1:]:
        assert np.array_equal(a.coeff_window, P.atoms[0].coeff_window)
    assert P.total_weight() == pytest.approx(1.0, abs=1e-12)


def test_coeff_window_is_shifted_field():
    f = realize(FieldModel.periodic([1.0, 1.8, 1.3], period=1.7), 3)
    u = micro_profile(0.05)
    P = window_samples(u, f, M1, 0.05, 2.0, 40)
    for a in P.atoms:
        np.testing.assert_allclose(a.coeff_window, f.shift(a.x / 0.05).eval(P.t),
                                   rtol=0, atol=1e-12)
        assert np.all((a.coeff_window >= 1) & (a.coeff_window <= 2))


def test_dropping_renormalizes():
    P = window_samples(micro_profile(0.05), realize(CB, 1), M1, 0.05, 3.0, 100)
    assert P.n_dropped > 0
    assert len(P.atoms) + P.n_dropped == 100
    assert P.total_weight() == pytest.approx(1.0, abs=1e-12)
    assert all(0 <= a.x <= 1 for a in P.atoms)


def test_shape_errors():
    u = micro_profile(0.1)
    with pytest.raises(WindowShapeError):
        window_samples(u, ONE, M1, 0.1, 0.5, 10)
    with pytest.raises(WindowShapeError):
        window_samples(u, ONE, M1, 0.1, 1.0, 5)
    with pytest.raises(WindowShapeError):
        window_samples(DiscreteProfile(0.01, np.zeros(50)), ONE, M1, 0.1, 1.0, 10)


def test_single_atom_zero_profile():
    eps = 0.1
    u = DiscreteProfile(0.01, np.zeros(301), -1.5)
    P = window_samples(DiscreteProfile(0.01, np.zeros(1001)), ONE, M1, eps, 1.0, 10)
    P.atoms = P.atoms[:1]
    P.atoms[0].weight = 1.0
    assert energy_from_measure(P) == pytest.approx(eps ** -2, rel=1e-12)
    assert local_average_integrand(u, ONE, 1.0, 0.0, eps) == pytest.approx(eps ** -2, rel=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_energy_identity_exact(seed):
    eps = 0.05
    f = realize(CB, seed)
    m = MacroModulus.piecewise([0.5], [1.0, 2.0])
    u = micro_profile(eps, seed=seed)
    P = window_samples(u, f, m, eps, 3.0, 120)
    lhs = energy_from_measure(P)
    assert lhs == pytest.approx(direct_sum(P, u, f, m), rel=1e-12)


def test_energy_matches_diffuse_minimizer():
    eps = 0.04
    f = realize(CB, 0)
    h = default_step(eps)
    built = build_test_function(cell_pieces(eps, f, M1), eps, h=h)
    res = minimize_diffuse(eps, f, M1, warm_starts=[("construction", built)], maxiter=5)
    P = window_samples(rescale_to_micro(res.profile, eps), f, M1, eps, 1.0, 400)
    assert abs(energy_from_measure(P) - res.energy) / res.energy <= eps


def test_per_cell_energy_above_dp_alpha():
    eps = 0.01
    m = MacroModulus.piecewise([0.5], [1.0, 2.0])
    h = default_step(eps)
    built = build_test_function(cell_pieces(eps, ONE, m), eps, h=h)
    res = minimize_diffuse(eps, ONE, m, warm_starts=[("construction", built)], maxiter=2)
    P = window_samples(rescale_to_micro(res.profile, eps), ONE, m, eps, 1.0, 200)
    per_cell = energy_from_measure(P, macro_cells(m))
    for (a, b), e in zip(macro_cells(m), per_cell):
        alpha = 2 ** (2 / 3) * float(eval_macro(m, 0.5 * (a + b))) ** (1 / 3)
        assert alpha <= e * 1.15


def test_save_load_roundtrip(tmp_path):
    P = window_samples(micro_profile(0.05), realize(CB, 4), M1, 0.05, 2.0, 30,
                       provenance={"minimizer": "test"})
    path = tmp_path / "P"
    P.save(path)
    files = sorted(os.listdir(path / "windows"))
    assert len(files) == 2 * len(P.atoms)
    raw = np.fromfile(path / "windows" / files[0], dtype="<f8")
    assert raw.size == P.atoms[0].coeff_window.size
    man = json.loads((path / "manifest.json").read_text())
    assert man["N"] == len(P.atoms) and man["provenance"]["minimizer"] == "test"
    Q = EmpiricalMeasure.load(path)
    assert len(Q.atoms) == len(P.atoms)
    for a, b in zip(P.atoms, Q.atoms):
        assert a.x == b.x and a.weight == b.weight and a.m_value == b.m_value
        assert np.array_equal(a.coeff_window, b.coeff_window)
        assert np.array_equal(a.profile_window, b.profile_window)
    assert (Q.eps, Q.W, Q.h, Q.n_dropped) == (P.eps, P.W, P.h, P.n_dropped)


def test_load_rejects_truncated_window(tmp_path):
    P = window_samples(micro_profile(0.1), ONE, M1, 0.1, 1.0, 10)
    P.save(tmp_path)
    f = tmp_path / "windows" / "000000_profile.f64"
    f.write_bytes(f.read_bytes()[:-8])
    with pytest.raises(WindowShapeError):
        EmpiricalMeasure.load(tmp_path)


def test_shift_equivariance_of_sampling():
    eps, h, y = 0.05, 0.01, 0.3
    f = realize(CB, 2)
    u = micro_profile(eps, h)
    P = window_samples(u, f, M1, eps, 3.0, 50)
    moved = P.shifted(y)
    pre = DiscreteProfile(h, u.values, u.start - y)
    Q = window_samples(pre, f.shift(y), M1, eps, moved.W, 50)
    by_x = {round(a.x, 9): a for a in Q.atoms}
    matched = 0
    for a in moved.atoms:
        b = by_x.get(round(a.x, 9))
        if b is None:
            continue
        matched += 1
        assert np.array_equal(a.profile_window, b.profile_window)
        np.testing.assert_allclose(a.coeff_window, b.coeff_window, rtol=0, atol=1e-12)
    assert matched >= 0.8 * len(moved.atoms)


def test_invariance_trivial_cases():
    eps = 0.1
    P = window_samples(micro_profile(eps, func=lambda t: np.full_like(t, 0.3)), ONE, M1, eps,
                       3.0, 20)
    assert invariance_diagnostic(P, 0.0) == 0.0
    assert invariance_diagnostic(P, 0.5) == 0.0
    assert invariance_diagnostic(P, -0.7) == 0.0
    with pytest.raises(WindowShapeError):
        invariance_diagnostic(P, 0.8)


def test_constant_slope_shift_invariant_observables():
    # u^2 is not shift invariant, so only the slope and coefficient observables are;
    # a dyadic grid keeps the difference quotients free of rounding noise
    eps = 0.1
    u = micro_profile(eps, h=2.0 ** -7, func=lambda t: 0.5 * t)
    P = window_samples(u, ONE, M1, eps, 3.0, 20)
    assert invariance_diagnostic(P, 0.5, ("mean_a", "mean_abs_slope")) == 0.0


def test_marginal_constant_field_zero():
    P = window_samples(micro_profile(0.1), ONE, M1, 0.1, 1.0, 20)
    assert marginal_q_diagnostic(P, FieldModel.constant(1.0), range(50)) == 0.0


def test_marginal_shrinks_with_eps_majority():
    # the marginal only sees coefficient windows, so any profile will do
    ok = 0
    for seed in range(3):
        d = []
        for eps in (0.1, 0.01):
            P = window_samples(micro_profile(eps, func=np.zeros_like), realize(CB, seed), M1, eps,
                               1.0, 500)
            d.append(marginal_q_diagnostic(P, CB, range(10_000, 10_500)))
        ok += d[0] >= 0.8 * d[1]
    assert ok >= 2
