"""Stationary random coefficient fields a(omega, t) and macroscopic moduli m(x).

A realization is identified by ``(model, seed)``; the translation action
omega -> omega + y is carried by an explicit ``offset`` so that

    field.shift(y).eval(t) == field.eval(t + y)

holds bit for bit (the shifted field adds ``y`` to ``t`` and then the same
offset, in the same order as the caller does).
"""
from __future__ import annotations

from functools import lru_cache
from dataclasses import dataclass, field as dc_field, replace
from typing import Any

import numpy as np
from scipy import stats

A_MIN, A_MAX = 1.0, 2.0
KINDS = ("constant", "periodic_random_phase", "checkerboard", "poisson_bumps")

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_STREAM_PHASE, _STREAM_LEVEL, _STREAM_COUNT, _STREAM_POS = 1, 2, 3, 16


class FieldParameterError(ValueError):
    pass


def _splitmix64(x):
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash_uniform(seed, index, stream=0):
    """Counter-based uniform variates in [0, 1) keyed by (seed, stream, index).

    Pure function of its arguments, vectorized over ``index``.
    """
    idx = np.asarray(index, dtype=np.int64).astype(np.uint64)
    key = _splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ _splitmix64(np.uint64(stream)))
    with np.errstate(over="ignore"):
        z = _splitmix64(idx ^ key)
        z = _splitmix64(z + key)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


@dataclass(frozen=True)
class FieldModel:
    """Declarative description of a random coefficient model.

    ``params`` by kind:

    - constant: ``value``
    - periodic_random_phase: ``samples`` (one period, cyclic), ``period``,
      optional ``interp`` in {"linear", "step"} (default linear)
    - checkerboard: ``cell`` and either ``levels`` (+ optional ``probs``)
      for a discrete law or ``low``/``high`` for a continuous uniform law
    - poisson_bumps: ``intensity`` (points per unit length), ``height``,
      ``width`` (half-width of a triangular bump)
    """

    kind: str
    params: dict = dc_field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        validate_model(self)

    @classmethod
    def constant(cls, value=1.5, seed=0):
        return cls("constant", {"value": float(value)}, seed)

    @classmethod
    def checkerboard(cls, cell=1.0, levels=(1.0, 2.0), probs=None, seed=0):
        params = {"cell": float(cell), "levels": [float(v) for v in levels]}
        if probs is not None:
            params["probs"] = [float(p) for p in probs]
        return cls("checkerboard", params, seed)

    @classmethod
    def periodic(cls, samples, period=1.0, interp="linear", seed=0):
        params = {"samples": [float(v) for v in samples], "period": float(period)}
        if interp != "linear":
            params["interp"] = interp
        return cls("periodic_random_phase", params, seed)

    @classmethod
    def poisson_bumps(cls, intensity=1.0, height=0.5, width=0.25, seed=0):
        return cls("poisson_bumps", {"intensity": float(intensity), "height": float(height),
                                     "width": float(width)}, seed)

    def with_seed(self, seed):
        return replace(self, seed=int(seed))

    def mean(self):
        """Ensemble mean of a(omega, 0); ``None`` when not available in closed form."""
        p = self.params
        if self.kind == "constant":
            return p["value"]
        if self.kind == "checkerboard":
            if "levels" in p:
                probs = p.get("probs") or [1.0 / len(p["levels"])] * len(p["levels"])
                return float(np.dot(p["levels"], probs))
            return 0.5 * (p["low"] + p["high"])
        if self.kind == "periodic_random_phase":
            s = np.asarray(p["samples"])
            if p.get("interp", "linear") == "step":
                return float(np.mean(s))
            return float(np.mean(0.5 * (s + np.roll(s, -1))))
        return None

    def to_dict(self):
        return {"kind": self.kind, "params": dict(self.params), "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"kind", "params", "seed"}
        if unknown:
            raise FieldParameterError(f"unknown field model keys: {sorted(unknown)}")
        return cls(d["kind"], dict(d.get("params", {})), int(d.get("seed", 0)))


def _in_range(values):
    v = np.asarray(values, dtype=float)
    return v.size > 0 and np.all(v >= A_MIN) and np.all(v <= A_MAX)


def validate_model(model: FieldModel):
    p = model.params
    kind = model.kind
    if kind not in KINDS:
        raise FieldParameterError(f"unknown field kind {kind!r}")
    try:
        if kind == "constant":
            if not _in_range([p["value"]]):
                raise FieldParameterError("constant value must lie in [1, 2]")
        elif kind == "periodic_random_phase":
            if p["period"] <= 0:
                raise FieldParameterError("period must be positive")
            if len(p["samples"]) < 1 or not _in_range(p["samples"]):
                raise FieldParameterError("periodic samples must lie in [1, 2]")
            if p.get("interp", "linear") not in ("linear", "step"):
                raise FieldParameterError("interp must be 'linear' or 'step'")
        elif kind == "checkerboard":
            if p["cell"] <= 0:
                raise FieldParameterError("cell length must be positive")
            if "levels" in p:
                if not _in_range(p["levels"]):
                    raise FieldParameterError("checkerboard levels must lie in [1, 2]")
                probs = p.get("probs")
                if probs is not None:
                    pr = np.asarray(probs, dtype=float)
                    if len(pr) != len(p["levels"]) or np.any(pr < 0) or abs(pr.sum() - 1) > 1e-12:
                        raise FieldParameterError("probs must be a distribution over levels")
            else:
                if not (A_MIN <= p["low"] <= p["high"] <= A_MAX):
                    raise FieldParameterError("uniform law must be supported in [1, 2]")
        elif kind == "poisson_bumps":
            if p["intensity"] <= 0 or p["width"] <= 0 or p["height"] < 0:
                raise FieldParameterError("intensity and width must be positive, height >= 0")
    except KeyError as exc:
        raise FieldParameterError(f"{kind} model missing parameter {exc}") from None


@dataclass(frozen=True)
class CoefficientField:
    """One realization a(omega, .) of a stationary field.

    ``phase`` is the seed-derived random offset of the pattern, ``offset`` the
    accumulated translation omega -> omega + y.
    """

    model: FieldModel
    phase: float = 0.0
    offset: float = 0.0

    def shift(self, y):
        return replace(self, offset=self.offset + float(y))

    def eval(self, t):
        x = np.asarray(t, dtype=float) + self.offset
        out = _EVALUATORS[self.model.kind](self, x)
        return out

    __call__ = eval

    def bounds(self):
        """Deterministic (lower, upper) bounds of the realized values."""
        p = self.model.params
        k = self.model.kind
        if k == "constant":
            return p["value"], p["value"]
        if k == "checkerboard":
            if "levels" in p:
                return min(p["levels"]), max(p["levels"])
            return p["low"], p["high"]
        if k == "periodic_random_phase":
            return min(p["samples"]), max(p["samples"])
        return A_MIN, A_MAX

    def discontinuities(self, lo, hi):
        """Jump locations of the realization inside (lo, hi), in caller coordinates."""
        p = self.model.params
        if self.model.kind == "checkerboard":
            cell = p["cell"]
        elif self.model.kind == "periodic_random_phase" and p.get("interp") == "step":
            cell = p["period"] / len(p["samples"])
        else:
            return np.empty(0)
        base = self.phase - self.offset
        k0 = np.ceil((lo - base) / cell)
        k1 = np.floor((hi - base) / cell)
        pts = base + cell * np.arange(k0, k1 + 1)
        return pts[(pts > lo) & (pts < hi)]


def _eval_constant(f, x):
    return np.full(x.shape, f.model.params["value"])


def _eval_checkerboard(f, x):
    p = f.model.params
    k = np.floor((x - f.phase) / p["cell"]).astype(np.int64)
    u = hash_uniform(f.model.seed, k, _STREAM_LEVEL)
    if "levels" in p:
        levels = np.asarray(p["levels"], dtype=float)
        probs = p.get("probs")
        cdf = np.cumsum(probs) if probs is not None else np.arange(1, len(levels) + 1) / len(levels)
        idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(levels) - 1)
        return levels[idx]
    return p["low"] + (p["high"] - p["low"]) * u


def _eval_periodic(f, x):
    p = f.model.params
    s = np.asarray(p["samples"], dtype=float)
    n = len(s)
    pos = np.mod((x - f.phase) / p["period"], 1.0) * n
    i = np.floor(pos).astype(np.int64) % n
    if p.get("interp") == "step":
        return s[i]
    frac = pos - np.floor(pos)
    return s[i] * (1.0 - frac) + s[(i + 1) % n] * frac


@lru_cache(maxsize=32)
def _poisson_cdf(lam):
    kmax = int(stats.poisson.ppf(1.0 - 1e-12, lam)) + 1
    return kmax, stats.poisson.cdf(np.arange(kmax + 1), lam)


def _eval_poisson(f, x):
    p = f.model.params
    lam, height, width = p["intensity"], p["height"], p["width"]
    seed = f.model.seed
    kmax, cdf = _poisson_cdf(float(lam))
    reach = int(np.ceil(width))
    base = np.floor(x).astype(np.int64)
    acc = np.zeros(x.shape)
    for off in range(-reach, reach + 1):
        cell = base + off
        # inverse cdf: smallest k with cdf(k) >= u
        count = np.searchsorted(cdf, hash_uniform(seed, cell, _STREAM_COUNT))
        for i in range(min(kmax, int(np.max(count, initial=0)))):
            pos = cell + hash_uniform(seed, cell, _STREAM_POS + i)
            bump = np.maximum(0.0, 1.0 - np.abs(x - pos) / width)
            acc += np.where(count > i, height * bump, 0.0)
    return np.clip(A_MIN + acc, A_MIN, A_MAX)


_EVALUATORS = {
    "constant": _eval_constant,
    "checkerboard": _eval_checkerboard,
    "periodic_random_phase": _eval_periodic,
    "poisson_bumps": _eval_poisson,
}


def realize(model: FieldModel, seed=None) -> CoefficientField:
    """Realize ``model`` for ``seed`` (defaults to ``model.seed``)."""
    if seed is not None:
        model = model.with_seed(seed)
    validate_model(model)
    u = float(hash_uniform(model.seed, 0, _STREAM_PHASE))
    if model.kind == "checkerboard":
        phase = u * model.params["cell"]
    elif model.kind == "periodic_random_phase":
        phase = u * model.params["period"]
    else:
        phase = 0.0
    return CoefficientField(model, phase=phase)


def shift(field: CoefficientField, y) -> CoefficientField:
    return field.shift(y)


class MacroDomainError(ValueError):
    pass


@dataclass(frozen=True)
class MacroModulus:
    """Macroscopic modulus m(x) on [0, 1] with bounds alpha <= m <= beta."""

    kind: str
    breakpoints: tuple = ()
    values: tuple = (1.0,)
    grid: tuple = ()
    alpha: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "piecewise_constant", "smooth_sampled"):
            raise FieldParameterError(f"unknown modulus kind {self.kind!r}")
        vals = np.asarray(self.values, dtype=float)
        if self.kind == "piecewise_constant" and len(vals) != len(self.breakpoints) + 1:
            raise FieldParameterError("piecewise_constant needs len(values) == len(breakpoints) + 1")
        if self.kind == "smooth_sampled" and len(vals) != len(self.grid):
            raise FieldParameterError("smooth_sampled needs values on every grid point")
        if np.any(vals <= 0):
            raise FieldParameterError("modulus must be positive")
        if self.alpha is None:
            object.__setattr__(self, "alpha", float(vals.min()))
        if self.beta is None:
            object.__setattr__(self, "beta", float(vals.max()))
        if not (0 < self.alpha <= vals.min() and vals.max() <= self.beta):
            raise FieldParameterError("values violate alpha <= m <= beta")

    @classmethod
    def constant(cls, m=1.0):
        return cls("constant", values=(float(m),))

    @classmethod
    def piecewise(cls, breakpoints, values):
        return cls("piecewise_constant", tuple(float(b) for b in breakpoints),
                   tuple(float(v) for v in values))

    @classmethod
    def sampled(cls, grid, values):
        return cls("smooth_sampled", values=tuple(float(v) for v in values),
                   grid=tuple(float(g) for g in grid))

    def __call__(self, x):
        return eval_macro(self, x)

    def cells(self):
        """Intervals of [0, 1] on which m is constant (whole interval otherwise)."""
        if self.kind != "piecewise_constant":
            return [(0.0, 1.0)]
        edges = [0.0, *self.breakpoints, 1.0]
        return list(zip(edges[:-1], edges[1:]))

    def to_dict(self):
        d: dict[str, Any] = {"kind": self.kind, "values": list(self.values)}
        if self.breakpoints:
            d["breakpoints"] = list(self.breakpoints)
        if self.grid:
            d["grid"] = list(self.grid)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"kind", "values", "breakpoints", "grid", "alpha", "beta"}
        if unknown:
            raise FieldParameterError(f"unknown modulus keys: {sorted(unknown)}")
        return cls(d["kind"], tuple(d.get("breakpoints", ())), tuple(d.get("values", (1.0,))),
                   tuple(d.get("grid", ())), d.get("alpha"), d.get("beta"))


def eval_macro(m: MacroModulus, x):
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0) or np.any(xa > 1):
        raise MacroDomainError("macro point outside [0, 1]")
    if m.kind == "constant":
        out = np.full(xa.shape, m.values[0])
    elif m.kind == "piecewise_constant":
        out = np.asarray(m.values)[np.searchsorted(m.breakpoints, xa, side="right")]
    else:
        out = np.interp(xa, m.grid, m.values)
    return float(out) if out.ndim == 0 else out
