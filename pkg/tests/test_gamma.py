import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homlab.coeff import FieldModel, realize
from homlab.gamma import (DiscretizedFunctional, GammaDistanceConfig, Probe, default_probes,
                          diffuse_snapshot, diffuse_window_value, gamma_distance,
                          gamma_limit_check, phi, sharp_snapshot, sharp_window_value,
                          single_transition_value, weight_table, window_grid, yosida,
                          yosida_table)
from homlab.wells import A0

ONE = realize(FieldModel.constant(1.0))
H = 0.1 ** 2 / 4
PROBES = default_probes(H, 64, 0)
T = window_grid(H)


def toy_pair():
    """Samples u_a = 0 and u_b = c with L2 distance exactly 2 on the window."""
    length = T[-1] - T[0]
    c = 2.0 / math.sqrt(length)
    ua, ub = np.zeros_like(T), np.full_like(T, c)
    return ua, ub


def as_sample_probes(f):
    return [Probe(u, y) for u, y in zip(f.profiles, f.ys)]


def ladder_to_recover(f):
    """Geometric ladder long enough that sup_lambda R_lambda f hits f at every sample."""
    fin = np.isfinite(f.values)
    d = [f.distances(u, y)[fin] for u, y in zip(f.profiles, f.ys)]
    dmin = min(np.min(x[x > 0]) for x in d)
    span = np.max(f.values[fin]) - np.min(f.values[fin])
    J = int(np.ceil(np.log2(max(span / dmin, 1.0)))) + 1
    return tuple(2.0 ** j for j in range(J + 1))


def test_yosida_toy():
    ua, ub = toy_pair()
    f = DiscretizedFunctional([ua, ub], [0.0, 0.0], [1.0, 0.0], H)
    assert f.distances(ua, 0.0)[1] == pytest.approx(2.0, rel=1e-12)
    assert yosida(f, 0.3, ua, 0.0) == pytest.approx(0.6, rel=1e-12)
    assert yosida(f, 1.0, ua, 0.0) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(ValueError):
        yosida(f, 0.0, ua)


def test_yosida_constant_functional():
    ua, ub = toy_pair()
    f = DiscretizedFunctional([ua, ub], [0.0, 0.5], [2.5, 2.5], H)
    assert yosida(f, 3.0, ub, 0.5) == 2.5
    probe = 0.5 * ub
    assert yosida(f, 3.0, probe, 0.1) <= 2.5 + 3.0 * np.min(f.distances(probe, 0.1))


def test_functional_validation():
    ua, ub = toy_pair()
    with pytest.raises(ValueError):
        DiscretizedFunctional([ua], [0.0], [-1.0], H)
    with pytest.raises(ValueError):
        DiscretizedFunctional([ua], [0.0], [math.inf], H)
    with pytest.raises(ValueError):
        DiscretizedFunctional([ua, ub], [0.0], [1.0, 2.0], H)
    with pytest.raises(ValueError):
        GammaDistanceConfig([])
    with pytest.raises(ValueError):
        GammaDistanceConfig(PROBES, lambdas=(2.0, 1.0))


def test_gamma_distance_toy_brute_force():
    ua, ub = toy_pair()
    f = DiscretizedFunctional([ua, ub], [0.0, 0.0], [1.0, 0.0], H)
    g = DiscretizedFunctional([ua, ub], [0.0, 0.0], [0.5, 0.25], H)
    cfg = GammaDistanceConfig([Probe(ua), Probe(ub)], lambdas=(0.1, 1.0))
    # hand values: R_lam at u_a = min(fa, fb + 2 lam), at u_b = min(fb, fa + 2 lam)
    Rf = {(0.1, 0): 0.2, (0.1, 1): 0.0, (1.0, 0): 1.0, (1.0, 1): 0.0}
    Rg = {(0.1, 0): 0.45, (0.1, 1): 0.25, (1.0, 0): 0.5, (1.0, 1): 0.25}
    ph = lambda t: t / (1 + t)
    expected = sum(2.0 ** -(i + 1 + k + 1) * abs(ph(Rf[lam, k]) - ph(Rg[lam, k]))
                   for i, lam in enumerate((0.1, 1.0)) for k in range(2))
    assert gamma_distance(f, g, cfg) == pytest.approx(expected, rel=1e-12)


def test_weights_and_phi():
    cfg = GammaDistanceConfig(PROBES)
    w = weight_table(cfg)
    assert w.shape == (5, 16)
    assert w[0, 0] == 0.25
    assert phi(math.inf) == 1.0
    assert phi(1.0) == 0.5


@pytest.fixture(scope="module")
def snapshots():
    cb = realize(FieldModel.checkerboard(), 3)
    return [sharp_snapshot(PROBES, H, cb, 1.0),
            diffuse_snapshot(PROBES, H, cb, 1.0, 0.1),
            diffuse_snapshot(PROBES, H, cb, 1.0, 0.03)]


def test_yosida_below_f_at_samples(snapshots):
    for f in snapshots:
        cfg = GammaDistanceConfig(as_sample_probes(f), kmax=64)
        tab = yosida_table(f, cfg)
        assert np.all(tab <= f.values[None, :])


def test_yosida_monotone_in_lambda(snapshots):
    for f in snapshots:
        tab = yosida_table(f, GammaDistanceConfig(PROBES, kmax=64))
        assert np.all(np.diff(tab, axis=0) >= 0)


@settings(max_examples=30, deadline=None)
@given(i=st.integers(0, 63), j=st.integers(0, 63), lam=st.floats(0.01, 50),
       y1=st.floats(-1, 1), y2=st.floats(-1, 1))
def test_yosida_lipschitz(snapshots, i, j, lam, y1, y2):
    f = snapshots[1]
    u1, u2 = PROBES[i].u, PROBES[j].u
    d = np.sqrt(np.sum(f._w * (u1 - u2) ** 2)) + abs(y1 - y2)
    assert abs(yosida(f, lam, u1, y1) - yosida(f, lam, u2, y2)) <= lam * d * (1 + 1e-12) + 1e-12


def test_sup_recovery(snapshots):
    for f in snapshots:
        cfg = GammaDistanceConfig(as_sample_probes(f), lambdas=ladder_to_recover(f), kmax=64)
        sup = yosida_table(f, cfg).max(axis=0)
        fin = np.isfinite(f.values)
        assert np.array_equal(sup[fin], f.values[fin])


def test_distance_pseudometric(snapshots):
    cfg = GammaDistanceConfig(PROBES)
    a, b, c = snapshots
    for f in snapshots:
        assert gamma_distance(f, f, cfg) == 0.0
    assert gamma_distance(a, b, cfg) == gamma_distance(b, a, cfg)
    assert gamma_distance(a, c, cfg) <= gamma_distance(a, b, cfg) + gamma_distance(b, c, cfg)
    assert gamma_distance(a, b, cfg) >= 0


def test_affine_probe_value():
    t = window_grid(1e-3, 1.2)
    v = diffuse_window_value(t.copy(), 1e-3, ONE, 1.0, 0.01)
    assert v == pytest.approx(1 / 12, rel=1e-5)


def test_half_slope_probe_blows_up():
    t = window_grid(1e-3, 1.2)
    for eps in (0.1, 0.01):
        v = diffuse_window_value(0.5 * t, 1e-3, ONE, 1.0, eps)
        assert v >= eps ** -2 * 9 / 16


def test_sharp_value_off_sawtooth_infinite():
    assert sharp_window_value(Probe(np.sin(T), 0.0, "noise"), H, ONE, 1.0) == math.inf
    p = Probe(0.5 - np.abs(T), 0.0, "sawtooth", (0.0,))
    assert sharp_window_value(p, H, ONE, 1.0) == pytest.approx(A0 + 1 / 12, rel=1e-4)


def test_single_transition_close_to_sharp():
    val, sharp = single_transition_value(1e-3, ONE, 1.0)
    assert sharp == pytest.approx(A0 + 1 / 12, rel=1e-6)
    assert abs(val - sharp) / sharp < 0.05


def test_closed_form_recovery_matches_grid_on_fine_grid():
    eps = 0.1
    h = eps ** 2 / 40
    probes = [p for p in default_probes(h, 16, 1) if p.kind == "sawtooth"]
    a = diffuse_snapshot(probes, h, ONE, 1.0, eps, closed_form=True)
    b = diffuse_snapshot(probes, h, ONE, 1.0, eps, closed_form=False)
    np.testing.assert_allclose(a.values, b.values, rtol=0.01)


def test_limit_check_report():
    rep = gamma_limit_check([0.1, 0.03, 0.01], ONE, 1.0)
    assert rep.eps == [0.1, 0.03, 0.01]
    assert rep.decreasing and rep.blowup
    data = json.loads(rep.to_json())
    assert len(data["distances"]) == 3 and data["config"]["lambdas"] == [1, 2, 4, 8, 16]
    assert len(data["traces"]) == 64
