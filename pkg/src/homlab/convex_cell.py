"""Convex cell problems in one dimension and the homogenized Lagrangian f_*.

With u(-R) = -qR, u(R) = qR the minimization of int L(y, u') decouples by
duality: u'(y) = argmin_s L(y, s) - lam*s, with lam fixed so that the mean
slope is q.  The mean slope is nondecreasing in lam, so bisection suffices.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .coeff import CoefficientField, FieldModel, realize


class LagrangianSpecError(ValueError):
    pass


@dataclass(frozen=True)
class LagrangianSpec:
    """L(y, s) = a(y)|s|^p (``power``) or a user convex integrand (``custom``).

    For ``custom`` the integrand is a callable ``func(a, s)`` of the local
    coefficient value and the slope, with ``dfunc`` its s-derivative; both
    must accept numpy arrays.  Stationarity is inherited from the field.
    """
    kind: str = "power"
    p: float = 2.0
    c0: float = 1.0
    C0: float = 2.0
    func: Optional[Callable] = None
    dfunc: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in ("power", "custom"):
            raise LagrangianSpecError(f"unknown Lagrangian kind {self.kind!r}")
        if not self.p > 1:
            raise LagrangianSpecError("p must exceed 1")
        if not (self.c0 > 0 and self.C0 > 0):
            raise LagrangianSpecError("growth constants must be positive")
        if self.kind == "custom" and (self.func is None or self.dfunc is None):
            raise LagrangianSpecError("custom Lagrangian needs func and dfunc")

    @classmethod
    def power(cls, p=2.0, c0=1.0, C0=2.0):
        return cls("power", float(p), c0, C0)

    @classmethod
    def custom(cls, func, dfunc, p, c0, C0):
        return cls("custom", float(p), c0, C0, func, dfunc)

    def value(self, a, s):
        if self.kind == "power":
            return a * np.abs(s) ** self.p
        return self.func(a, s)

    def derivative(self, a, s):
        if self.kind == "power":
            return self.p * a * np.sign(s) * np.abs(s) ** (self.p - 1)
        return self.dfunc(a, s)

    def dual_slope(self, a, lam):
        """argmin_s L(a, s) - lam*s, elementwise."""
        a = np.asarray(a, dtype=float)
        if self.kind == "power":
            return np.sign(lam) * (abs(lam) / (self.p * a)) ** (1.0 / (self.p - 1))
        # monotone derivative: bracket then bisect
        lo = np.full(a.shape, -1.0)
        hi = np.full(a.shape, 1.0)
        for _ in range(200):
            bad = self.derivative(a, lo) > lam
            if not bad.any():
                break
            lo[bad] *= 2.0
        for _ in range(200):
            bad = self.derivative(a, hi) < lam
            if not bad.any():
                break
            hi[bad] *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            up = self.derivative(a, mid) < lam
            lo = np.where(up, mid, lo)
            hi = np.where(up, hi, mid)
            if np.all(hi - lo <= 1e-15 * np.maximum(1.0, np.abs(mid))):
                break
        return 0.5 * (lo + hi)

    def growth_bounds(self, s):
        s = np.abs(s)
        return self.c0 * s ** self.p, self.C0 * (1 + s) ** self.p

    def to_dict(self):
        if self.kind == "custom":
            return {"kind": "custom", "p": self.p, "c0": self.c0, "C0": self.C0}
        return {"kind": "power", "p": self.p, "c0": self.c0, "C0": self.C0}


@dataclass
class HomogenizedPoint:
    q: float
    R: float
    m_R: float
    lam: float
    seeds: list = dc_field(default_factory=list)
    residual: float = 0.0

    def to_dict(self):
        return asdict(self)


def cell_partition(field: CoefficientField, R, dx):
    """Sub-intervals of (-R, R): a uniform grid refined at the field's jumps.

    Returns (edges, a) with ``a`` sampled at the interval midpoints; for
    piecewise-constant fields this makes the cell integrals exact.
    """
    n = max(1, int(math.ceil(2 * R / dx)))
    edges = np.linspace(-R, R, n + 1)
    jumps = field.discontinuities(-R, R)
    if len(jumps):
        edges = np.union1d(edges, np.asarray(jumps, dtype=float))
        edges = edges[np.concatenate([[True], np.diff(edges) > 1e-12 * R])]
        edges[-1] = R
    mid = 0.5 * (edges[:-1] + edges[1:])
    return edges, field.eval(mid)


def _mean_slope(L, a, w, lam):
    return float(np.dot(w, L.dual_slope(a, lam)))


def cell_minimum_1d(L: LagrangianSpec, field: CoefficientField, q, R, dx=0.05,
                    tol=1e-8, seed=None) -> HomogenizedPoint:
    if R < 1:
        raise ValueError("R must be at least 1")
    if not (0 < dx <= 0.1):
        raise ValueError("dx must lie in (0, 0.1]")
    edges, a = cell_partition(field, R, dx)
    w = np.diff(edges) / (2 * R)
    q = float(q)
    if q == 0.0:
        s = L.dual_slope(a, 0.0)
        return HomogenizedPoint(q, float(R), float(np.dot(w, L.value(a, s))), 0.0,
                                [] if seed is None else [seed], float(abs(np.dot(w, s))))
    B = 4.0 * L.C0 * L.p * (1 + abs(q)) ** (L.p - 1)
    lo, hi = -B, B
    for _ in range(60):
        if _mean_slope(L, a, w, lo) <= q <= _mean_slope(L, a, w, hi):
            break
        lo, hi = 2 * lo, 2 * hi
    else:
        raise LagrangianSpecError("cannot bracket the multiplier; is L coercive?")
    lam = 0.5 * (lo + hi)
    for _ in range(300):
        lam = 0.5 * (lo + hi)
        r = _mean_slope(L, a, w, lam) - q
        if abs(r) <= tol * 1e-4 or hi - lo <= 1e-15 * max(1.0, abs(lam)):
            break
        if r < 0:
            lo = lam
        else:
            hi = lam
    s = L.dual_slope(a, lam)
    resid = float(np.dot(w, s) - q)
    if abs(resid) > tol:
        raise LagrangianSpecError(f"bisection stalled with mean-slope residual {resid:.3g}")
    return HomogenizedPoint(q, float(R), float(np.dot(w, L.value(a, s))), float(lam),
                            [] if seed is None else [seed], resid)


def cell_profile(L: LagrangianSpec, field, point: HomogenizedPoint, dx=0.05):
    """Nodes and values of the minimizer u for a solved cell."""
    edges, a = cell_partition(field, point.R, dx)
    s = L.dual_slope(a, point.lam)
    u = -point.q * point.R + np.concatenate([[0.0], np.cumsum(s * np.diff(edges))])
    return edges, u


def profile_energy(L: LagrangianSpec, field, y, u):
    """(1/|Q_R|) int L(y, u') for u piecewise linear on the nodes y."""
    mid = 0.5 * (y[:-1] + y[1:])
    s = np.diff(u) / np.diff(y)
    return float(np.sum(np.diff(y) * L.value(field.eval(mid), s)) / (y[-1] - y[0]))


def ensemble_f_star(model: FieldModel, q, p=2.0):
    """1D closed form |q|^p E[a^(-1/(p-1))]^(1-p) for a(y)|s|^p, or None.

    Available when the one-point law of a is explicit: constant,
    discrete-level or uniform checkerboard, step-interpolated periodic.
    """
    r = -1.0 / (p - 1.0)
    prm = model.params
    if model.kind == "constant":
        moment = prm["value"] ** r
    elif model.kind == "checkerboard" and "levels" in prm:
        lev = np.asarray(prm["levels"], dtype=float)
        probs = prm.get("probs") or [1.0 / lev.size] * lev.size
        moment = float(np.dot(probs, lev ** r))
    elif model.kind == "checkerboard":
        lo, hi = prm["low"], prm["high"]
        if hi == lo:
            moment = lo ** r
        elif r == -1.0:
            moment = math.log(hi / lo) / (hi - lo)
        else:
            moment = (hi ** (r + 1) - lo ** (r + 1)) / ((r + 1) * (hi - lo))
    elif model.kind == "periodic_random_phase" and prm.get("interp") == "step":
        moment = float(np.mean(np.asarray(prm["samples"], dtype=float) ** r))
    else:
        return None
    return abs(float(q)) ** p * moment ** (1.0 - p)


def _hl_task(args):
    L, model, seed, q, R, dx = args
    pt = cell_minimum_1d(L, realize(model, seed), q, R, dx, seed=seed)
    return {"q": float(q), "R": float(R), "seed": int(seed), "m_R": pt.m_R, "lam": pt.lam}


@dataclass
class HomogenizedEstimate:
    q: float
    f_star: float
    R_schedule: list
    means: list
    stds: list
    flagged: bool

    def to_dict(self):
        return asdict(self)


def homogenized_lagrangian(L: LagrangianSpec, model: FieldModel, qs, R_schedule, seeds,
                           dx=0.05, workers=1):
    """f_*(q) as the seed mean of m_R at the largest R.

    Returns (estimates, records); an estimate is flagged when the across-seed
    spread does not shrink from the first to the last window size.
    """
    R_schedule = sorted(float(r) for r in R_schedule)
    seeds = list(seeds)
    if not seeds or not R_schedule:
        raise ValueError("need seeds and an R schedule")
    tasks = [(L, model, s, float(q), R, dx) for q in qs for R in R_schedule for s in seeds]
    if workers > 1 and L.kind == "power":
        with ProcessPoolExecutor(workers) as ex:
            records = list(ex.map(_hl_task, tasks, chunksize=4))
    else:
        records = [_hl_task(t) for t in tasks]
    out = []
    for q in qs:
        means, stds = [], []
        for R in R_schedule:
            v = np.array([r["m_R"] for r in records if r["q"] == float(q) and r["R"] == R])
            means.append(float(v.mean()))
            stds.append(float(v.std(ddof=1)) if v.size > 1 else 0.0)
        flagged = len(R_schedule) > 1 and stds[-1] > stds[0] + 1e-14
        out.append(HomogenizedEstimate(float(q), means[-1], R_schedule, means, stds, bool(flagged)))
    return out, records


def write_records_csv(records, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["q", "R", "seed", "m_R", "lambda"])
        for r in records:
            wr.writerow([repr(r["q"]), repr(r["R"]), r["seed"], repr(r["m_R"]), repr(r["lam"])])


def write_summary_json(estimates, path):
    with open(path, "w") as fh:
        json.dump({"schema": 1, "estimates": [e.to_dict() for e in estimates]}, fh,
                  indent=2, sort_keys=True)


def cutoff(z, delta):
    """Piecewise-linear chi_delta: 1 on |z| <= 1 - delta, 0 at |z| = 1."""
    return np.clip((1.0 - np.abs(z)) / delta, 0.0, 1.0)


def glue_affine_boundary(y, u, q, delta):
    """v = q*y + chi_delta(y/R) (u - q*y) on the nodes y of [-R, R]."""
    if not (0 < delta < 1):
        raise ValueError("delta must lie in (0, 1)")
    y = np.asarray(y, dtype=float)
    R = 0.5 * (y[-1] - y[0])
    if abs(y[0] + R) > 1e-12 * max(R, 1.0):
        raise ValueError("nodes must span a symmetric interval")
    v = q * y + cutoff(y / R, delta) * (np.asarray(u, dtype=float) - q * y)
    v[0], v[-1] = q * y[0], q * y[-1]
    return v


def remainder_terms(L: LagrangianSpec, field, y, u, q, delta):
    """Shape terms bounding energy(v_delta) - energy(u), per unit length.

    Returns the four terms delta, delta|q|^p, R^-p mean|u - qy|^p and the
    boundary-layer gradient term (mean of (1 + |u'|^p) over the layer).
    """
    R = 0.5 * (y[-1] - y[0])
    p = L.p
    mid = 0.5 * (y[:-1] + y[1:])
    lens = np.diff(y)
    du = np.abs(np.diff(u) / lens)
    layer = np.abs(mid / R) > 1 - delta
    dev = np.abs(u - q * y)
    devmid = 0.5 * (dev[:-1] + dev[1:])
    tot = 2 * R
    return np.array([
        delta,
        delta * abs(q) ** p,
        float(np.sum(lens * (devmid / (delta * R)) ** p) / tot),
        float(np.sum(lens * layer * (1 + du ** p)) / tot),
    ])


@dataclass
class ConvexityReport:
    ok: bool
    violations: list

    def to_dict(self):
        return asdict(self)


def convexity_check(qs, values, tol=1e-9):
    """Chord and midpoint convexity over all sampled triples."""
    qs = np.asarray(qs, dtype=float)
    values = np.asarray(values, dtype=float)
    if qs.size < 3:
        raise ValueError("need at least three q points")
    order = np.argsort(qs)
    qs, values = qs[order], values[order]
    viol = []
    n = qs.size
    for i in range(n):
        for k in range(i + 2, n):
            for j in range(i + 1, k):
                t = (qs[k] - qs[j]) / (qs[k] - qs[i])
                chord = t * values[i] + (1 - t) * values[k]
                if values[j] > chord + tol:
                    viol.append((float(qs[i]), float(qs[j]), float(qs[k]),
                                 float(values[j] - chord)))
    return ConvexityReport(not viol, viol)
