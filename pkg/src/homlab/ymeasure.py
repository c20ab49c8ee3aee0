"""Empirical Young measures on micropatterns.

An atom records, at a macro point x, the coefficient and the micro profile
seen from x/eps on a window [-W/2, W/2].  Energies and diagnostics are
computed from the atoms alone.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.stats import ks_2samp

from .coeff import CoefficientField, FieldModel, MacroModulus, eval_macro, realize
from .diffuse import DiscreteProfile, d1, local_average_integrand, trapezoid_weights

OBSERVABLES = ("mean_a", "energy_density", "mean_abs_slope")


class WindowShapeError(ValueError):
    pass


@dataclass
class WindowAtom:
    x: float
    coeff_window: np.ndarray
    profile_window: np.ndarray
    weight: float
    m_value: float


@dataclass
class EmpiricalMeasure:
    atoms: list
    eps: float
    W: float
    h: float                  # micro grid step of the windows
    n_requested: int = 0
    n_dropped: int = 0
    provenance: dict = dc_field(default_factory=dict)

    @property
    def half(self):
        return (self.atoms[0].profile_window.size - 1) // 2 if self.atoms else 0

    @property
    def t(self):
        k = self.half
        return self.h * np.arange(-k, k + 1)

    def window_profile(self, atom):
        return DiscreteProfile(self.h, atom.profile_window, -self.half * self.h)

    def total_weight(self):
        return float(sum(a.weight for a in self.atoms))

    def shifted(self, y):
        """theta_y applied to every atom: windows recentred at +y and shortened
        by 2|y| so they stay inside the recorded data."""
        j = int(round(y / self.h))
        if abs(j * self.h - y) > 1e-9 * max(1.0, abs(y)):
            raise WindowShapeError("shift must be a multiple of the window step")
        k = self.half - abs(j)
        if k * self.h < 0.5:
            raise WindowShapeError(f"shift {y} leaves no unit window")
        c = self.half + j
        atoms = [WindowAtom(a.x, a.coeff_window[c - k:c + k + 1].copy(),
                            a.profile_window[c - k:c + k + 1].copy(), a.weight, a.m_value)
                 for a in self.atoms]
        return EmpiricalMeasure(atoms, self.eps, 2 * k * self.h, self.h, self.n_requested,
                                self.n_dropped, dict(self.provenance, shift=float(y)))

    # --- persistence -------------------------------------------------------------

    def save(self, path):
        os.makedirs(os.path.join(path, "windows"), exist_ok=True)
        stats = atom_statistics(self, 0.0)
        with open(os.path.join(path, "atoms.csv"), "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["index", "x", "weight", "m"] + list(OBSERVABLES))
            for i, a in enumerate(self.atoms):
                wr.writerow([i, repr(a.x), repr(a.weight), repr(a.m_value)]
                            + [repr(float(stats[o][i])) for o in OBSERVABLES])
                for tag, arr in (("coeff", a.coeff_window), ("profile", a.profile_window)):
                    arr.astype("<f8").tofile(os.path.join(path, "windows", f"{i:06d}_{tag}.f64"))
        manifest = {"schema": 1, "eps": self.eps, "W": self.W, "h": self.h,
                    "N": len(self.atoms), "n_requested": self.n_requested,
                    "n_dropped": self.n_dropped, "window_points": 2 * self.half + 1,
                    "dtype": "<f8", "provenance": self.provenance}
        with open(os.path.join(path, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(os.path.join(path, "manifest.json")) as fh:
            man = json.load(fh)
        atoms = []
        with open(os.path.join(path, "atoms.csv"), newline="") as fh:
            for row in csv.DictReader(fh):
                i = int(row["index"])
                wins = [np.fromfile(os.path.join(path, "windows", f"{i:06d}_{tag}.f64"), dtype="<f8")
                        for tag in ("coeff", "profile")]
                if any(w.size != man["window_points"] for w in wins):
                    raise WindowShapeError(f"atom {i}: window length mismatch")
                atoms.append(WindowAtom(float(row["x"]), wins[0], wins[1],
                                        float(row["weight"]), float(row["m"])))
        return cls(atoms, man["eps"], man["W"], man["h"], man["n_requested"], man["n_dropped"],
                   man.get("provenance", {}))


def window_samples(u: DiscreteProfile, field: CoefficientField, m: MacroModulus, eps, W, N,
                   provenance=None) -> EmpiricalMeasure:
    """Atoms at x_j = (j + 1/2)/N snapped to the profile grid.

    ``u`` is the micro profile u_eps(t) = v(eps t)/eps.  Windows leaving the
    data are dropped and the remaining weights renormalized.
    """
    if W < 1:
        raise WindowShapeError("window length must be at least 1")
    if N < 10:
        raise WindowShapeError("need at least 10 atoms")
    if u.end - u.start < W:
        raise WindowShapeError("profile shorter than one window")
    k = int(round(0.5 * W / u.h))
    n = u.values.size
    centers = []
    for j in range(N):
        c = int(round(((j + 0.5) / (N * eps) - u.start) / u.h))
        if c - k >= 0 and c + k <= n - 1:
            centers.append(c)
    if not centers:
        raise WindowShapeError("every window overflows the profile")
    tgrid = u.x
    atoms = []
    for c in centers:
        ts = tgrid[c - k:c + k + 1]
        x = float(tgrid[c] * eps)
        atoms.append(WindowAtom(x, field.eval(ts), u.values[c - k:c + k + 1].copy(),
                                1.0 / len(centers), float(eval_macro(m, min(max(x, 0.0), 1.0)))))
    prov = {"field": field.model.to_dict(), "phase": field.phase, "offset": field.offset}
    prov.update(provenance or {})
    return EmpiricalMeasure(atoms, float(eps), 2 * k * u.h, u.h, N, N - len(centers), prov)


def energy_from_measure(P: EmpiricalMeasure, cells=None):
    """Sum of weight * f_eps(profile window, 0) over atoms.

    With ``cells`` (a list of (a, b) macro intervals) returns per-cell
    averages instead: atoms are grouped by x and renormalized per cell.
    """
    vals = np.array([local_average_integrand(P.window_profile(a), a.coeff_window, a.m_value,
                                             0.0, P.eps) for a in P.atoms])
    w = np.array([a.weight for a in P.atoms])
    if cells is None:
        return float(np.dot(w, vals))
    xs = np.array([a.x for a in P.atoms])
    out = []
    for a, b in cells:
        sel = (xs >= a) & (xs < b) if b < 1 else (xs >= a) & (xs <= b)
        out.append(float(np.dot(w[sel], vals[sel]) / w[sel].sum()) if sel.any() else float("nan"))
    return out


def _unit_slice(P, y):
    j = int(round(y / P.h))
    half = int(round(0.5 / P.h))
    c = P.half + j
    if c - half < 0 or c + half > 2 * P.half:
        raise WindowShapeError("shifted unit window leaves the recorded data")
    return slice(c - half, c + half + 1)


def atom_statistics(P: EmpiricalMeasure, y=0.0):
    """Per-atom observables on the unit window I_y."""
    sl = _unit_slice(P, y)
    w = trapezoid_weights(sl.stop - sl.start, P.h)
    w = w / w.sum()
    out = {o: np.empty(len(P.atoms)) for o in OBSERVABLES}
    for i, a in enumerate(P.atoms):
        out["mean_a"][i] = np.dot(w, a.coeff_window[sl])
        slope = d1(a.profile_window, P.h)[sl]
        out["mean_abs_slope"][i] = np.dot(w, np.abs(slope))
        out["energy_density"][i] = local_average_integrand(
            P.window_profile(a), a.coeff_window, a.m_value, y, P.eps)
    return out


def ks_distance(a, b):
    return float(ks_2samp(a, b).statistic)


def invariance_diagnostic(P: EmpiricalMeasure, y, observables=OBSERVABLES):
    """max over observables of the KS distance between the laws under P and theta_y P."""
    if abs(y) > P.W / 4 + 1e-12:
        raise WindowShapeError(f"|y| must not exceed W/4 = {P.W / 4}")
    if y == 0:
        return 0.0
    s0 = atom_statistics(P, 0.0)
    s1 = atom_statistics(P, y)
    return max(ks_distance(s0[o], s1[o]) for o in observables)


def reference_window_means(model: FieldModel, seeds, h):
    """Unit-window means of a(omega', .) at the origin over fresh realizations."""
    half = int(round(0.5 / h))
    t = h * np.arange(-half, half + 1)
    w = trapezoid_weights(t.size, h)
    w = w / w.sum()
    return np.array([np.dot(w, realize(model, s).eval(t)) for s in seeds])


def marginal_q_diagnostic(P: EmpiricalMeasure, model: FieldModel, reference_seeds):
    """KS distance between unit-window means of a under Q_eps and over fresh seeds."""
    ours = atom_statistics(P, 0.0)["mean_a"] if P.atoms else np.empty(0)
    ref = reference_window_means(model, reference_seeds, P.h)
    return ks_distance(ours, ref)
