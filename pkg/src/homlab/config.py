"""Experiment configuration: a versioned JSON document, strictly validated."""
import json
from dataclasses import dataclass, field as dc_field

from .coeff import FieldModel, FieldParameterError, MacroModulus

SCHEMA_VERSION = 1
KINDS = ("alpha_sweep", "minam_check", "homog_convex", "ymeasure_diag", "gamma_diag")

TOP_KEYS = {"schema_version", "experiment", "id", "field", "macro", "schedules", "grid",
            "tolerances", "options", "output_dir", "workers"}
SCHEDULE_KEYS = {"R", "eps", "seeds", "q", "m", "reference_seeds"}
GRID_KEYS = {"dx", "du", "points_per_scale", "M_cap", "maxiter", "window", "atoms"}
TOLERANCE_KEYS = {"rel", "abs", "distance"}
OPTION_KEYS = {
    "alpha_sweep": {"boundary"},
    "minam_check": {"reference_R"},
    "homog_convex": {"p"},
    "ymeasure_diag": {"shift"},
    "gamma_diag": {"m_value", "n_probes", "probe_seed"},
}

# (required schedules, default tolerances) per experiment
REQUIRED = {
    "alpha_sweep": (("R",), {"rel": 0.03}),
    "minam_check": (("eps",), {"rel": 0.10}),
    "homog_convex": (("q", "R", "seeds"), {"rel": 0.02}),
    "ymeasure_diag": (("eps", "seeds"), {"distance": 0.1}),
    "gamma_diag": (("eps",), {"abs": 1e-12}),
}


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists (path, message) pairs."""

    def __init__(self, problems):
        self.problems = problems
        super().__init__("; ".join(f"{p}: {m}" for p, m in problems))

    def to_json(self):
        return json.dumps({"error": "config", "problems": [{"path": p, "message": m}
                                                           for p, m in self.problems]})


@dataclass
class ExperimentConfig:
    experiment: str
    id: str
    field: FieldModel
    macro: MacroModulus
    schedules: dict
    grid: dict
    tolerances: dict
    options: dict
    output_dir: str
    workers: int = 1
    raw: dict = dc_field(default_factory=dict, repr=False)


def _unknown(d, allowed, path, problems):
    for k in sorted(set(d) - allowed):
        problems.append((f"{path}.{k}" if path else k, "unknown key"))


def _monotone(seq):
    inc = all(b > a for a, b in zip(seq[:-1], seq[1:]))
    dec = all(b < a for a, b in zip(seq[:-1], seq[1:]))
    return inc or dec


def parse_config(doc) -> ExperimentConfig:
    problems = []
    if not isinstance(doc, dict):
        raise ConfigError([("", "configuration must be a JSON object")])
    _unknown(doc, TOP_KEYS, "", problems)
    if doc.get("schema_version") != SCHEMA_VERSION:
        problems.append(("schema_version", f"must be {SCHEMA_VERSION}"))
    kind = doc.get("experiment")
    if kind not in KINDS:
        problems.append(("experiment", f"must be one of {list(KINDS)}"))
        raise ConfigError(problems)

    try:
        fm = FieldModel.from_dict(doc.get("field", {"kind": "constant", "params": {"value": 1.0}}))
    except (FieldParameterError, KeyError, TypeError) as exc:
        problems.append(("field", str(exc)))
        fm = None
    try:
        macro = MacroModulus.from_dict(doc.get("macro", {"kind": "constant", "values": [1.0]}))
    except (FieldParameterError, KeyError, TypeError) as exc:
        problems.append(("macro", str(exc)))
        macro = None

    sched = doc.get("schedules", {})
    if not isinstance(sched, dict):
        problems.append(("schedules", "must be an object"))
        sched = {}
    _unknown(sched, SCHEDULE_KEYS, "schedules", problems)
    required, tol_default = REQUIRED[kind]
    for key in required:
        if key not in sched:
            problems.append((f"schedules.{key}", "required"))
    for key, seq in sched.items():
        if key not in SCHEDULE_KEYS:
            continue
        if not isinstance(seq, list) or not seq:
            problems.append((f"schedules.{key}", "must be a nonempty list"))
        elif not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in seq):
            problems.append((f"schedules.{key}", "entries must be numbers"))
        elif not _monotone(seq):
            problems.append((f"schedules.{key}", "must be strictly sorted"))
        elif key in ("R", "eps", "m") and min(seq) <= 0:
            problems.append((f"schedules.{key}", "entries must be positive"))
    if "eps" in sched and isinstance(sched["eps"], list) and sched["eps"] and \
            all(isinstance(v, (int, float)) for v in sched["eps"]) and max(sched["eps"]) > 0.1:
        problems.append(("schedules.eps", "eps must lie in (0, 0.1]"))

    grid = doc.get("grid", {})
    _unknown(grid, GRID_KEYS, "grid", problems)
    for k, v in grid.items():
        if k in GRID_KEYS and v is not None and (not isinstance(v, (int, float)) or v <= 0):
            problems.append((f"grid.{k}", "must be a positive number"))

    tol = dict(tol_default)
    tol.update(doc.get("tolerances", {}))
    _unknown(tol, TOLERANCE_KEYS, "tolerances", problems)
    for k, v in tol.items():
        if not isinstance(v, (int, float)) or v <= 0:
            problems.append((f"tolerances.{k}", "must be positive"))

    opts = doc.get("options", {})
    _unknown(opts, OPTION_KEYS[kind], "options", problems)

    workers = doc.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        problems.append(("workers", "must be a positive integer"))
    if "output_dir" not in doc or not isinstance(doc["output_dir"], str):
        problems.append(("output_dir", "required string"))
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(kind, str(doc.get("id", kind)), fm, macro,
                            {k: list(v) for k, v in sched.items()}, dict(grid), tol, dict(opts),
                            doc["output_dir"], workers, doc)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError([("", f"cannot read configuration: {exc}")]) from None
    return parse_config(doc)
