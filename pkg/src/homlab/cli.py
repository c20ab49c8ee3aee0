"""Command line runner: ``homlab run|report|validate``.

Exit codes: 0 all rows pass, 1 some row fails, 2 configuration error.
"""
import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor

from . import __version__
from .config import ConfigError, load_config
from .pipelines import PIPELINES, cell_key, execute_cell

log = logging.getLogger("homlab")

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
REPORT_COLUMNS = ["experiment", "params", "measured", "reference", "reference_tag",
                  "rel_error", "tolerance", "status"]
SUMMARY_SCHEMA = 1


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (dict, list)):
        return json.dumps(v, sort_keys=True, separators=(",", ":"))
    return str(v)


def resolve_workers(cfg):
    env = os.environ.get("HOMLAB_WORKERS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError([("HOMLAB_WORKERS", "must be a positive integer")]) from None
        if n < 1:
            raise ConfigError([("HOMLAB_WORKERS", "must be a positive integer")])
        return n
    return cfg.workers


def config_digest(raw):
    body = {k: v for k, v in raw.items() if k not in ("workers", "output_dir")}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


class Manifest:
    """Completed cells of a run directory, keyed by their parameter tuple."""

    def __init__(self, out_dir, digest):
        self.path = os.path.join(out_dir, "manifest.json")
        self.cell_dir = os.path.join(out_dir, "cells")
        os.makedirs(self.cell_dir, exist_ok=True)
        self.completed = {}
        if os.path.exists(self.path):
            with open(self.path) as fh:
                data = json.load(fh)
            if data.get("config_digest") != digest:
                raise ConfigError([("output_dir", "holds results of a different configuration")])
            self.completed = data.get("completed", {})
        self.digest = digest

    def load(self, key):
        with open(os.path.join(self.cell_dir, self.completed[key])) as fh:
            return json.load(fh)

    def record(self, key, result):
        name = hashlib.sha1(key.encode()).hexdigest()[:16] + ".json"
        with open(os.path.join(self.cell_dir, name), "w") as fh:
            json.dump({"params": json.loads(key), "result": result}, fh, sort_keys=True)
        self.completed[key] = name
        tmp = self.path + ".tmp"
        with open(tmp, "w") as fh:
            json.dump({"schema": 1, "config_digest": self.digest,
                       "completed": dict(sorted(self.completed.items()))}, fh, indent=1,
                      sort_keys=True)
        os.replace(tmp, self.path)


def write_results_csv(path, results):
    pkeys = sorted({k for p, _ in results for k in p})
    rkeys = sorted({k for _, r in results for k in r})
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(pkeys + rkeys)
        for p, r in sorted(results, key=lambda t: cell_key(t[0])):
            wr.writerow([_fmt(p.get(k)) for k in pkeys] + [_fmt(r.get(k)) for k in rkeys])


def write_report(out_dir, rows):
    with open(os.path.join(out_dir, "report.csv"), "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(REPORT_COLUMNS)
        for r in rows:
            wr.writerow([_fmt(r[c]) for c in REPORT_COLUMNS])


def read_report(out_dir):
    path = os.path.join(out_dir, "report.csv")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["params"] = json.loads(r["params"]) if r["params"] else {}
        for k in ("measured", "reference", "rel_error", "tolerance"):
            r[k] = float(r[k]) if r[k] else None
    return rows


def convergence_tables(rows):
    """One table per (experiment, numeric parameter axis)."""
    tables = {}
    for r in rows:
        numeric = {k: v for k, v in r["params"].items()
                   if isinstance(v, (int, float)) and not isinstance(v, bool)}
        for axis in ("eps", "R", "q", "m"):
            if axis in numeric:
                t = tables.setdefault(f"{r['experiment']}:{axis}", [])
                t.append({**r["params"], "measured": r["measured"],
                          "reference": r["reference"], "status": r["status"]})
                break
    return tables


def summarize(rows):
    failing = [r for r in rows if r["status"] == "fail"]
    return {"schema": SUMMARY_SCHEMA,
            "n_rows": len(rows),
            "n_pass": sum(r["status"] == "pass" for r in rows),
            "n_fail": len(failing),
            "n_info": sum(r["status"] == "info" for r in rows),
            "failing": [{"experiment": r["experiment"], "params": r["params"]} for r in failing],
            "tables": convergence_tables(rows)}


def emit_summary(out_dir, rows):
    summary = summarize(rows)
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    tdir = os.path.join(out_dir, "tables")
    os.makedirs(tdir, exist_ok=True)
    for name, table in summary["tables"].items():
        cols = sorted({k for rec in table for k in rec})
        with open(os.path.join(tdir, name.replace(":", "__") + ".csv"), "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(cols)
            for rec in table:
                wr.writerow([_fmt(rec.get(c)) for c in cols])
    return summary


def run_experiment(cfg, workers=1):
    cells_fn, _, rows_fn = PIPELINES[cfg.experiment]
    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    manifest = Manifest(out_dir, config_digest(cfg.raw))
    t0 = time.time()
    todo = [p for p in cells_fn(cfg) if cell_key(p) not in manifest.completed]
    log.info("%s: %d cells to run, %d cached", cfg.id, len(todo), len(manifest.completed))
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(workers) as ex:
            for params, result in ex.map(execute_cell, [(cfg.raw, p) for p in todo]):
                manifest.record(cell_key(params), result)
    else:
        for p in todo:
            params, result = execute_cell((cfg.raw, p))
            manifest.record(cell_key(params), result)
    results = []
    for p in cells_fn(cfg):
        results.append((p, manifest.load(cell_key(p))["result"]))
    write_results_csv(os.path.join(out_dir, f"{cfg.experiment}.csv"), results)
    rows = rows_fn(cfg, results)
    write_report(out_dir, rows)
    summary = emit_summary(out_dir, rows)
    with open(os.path.join(out_dir, "metadata.json"), "w") as fh:
        json.dump({"finished": time.strftime("%Y-%m-%dT%H:%M:%S"), "elapsed_s": time.time() - t0,
                   "workers": workers, "python": platform.python_version(),
                   "homlab": __version__}, fh, indent=2)
    return summary


def _print_summary(summary, stream=None):
    stream = stream or sys.stdout
    print(f"rows: {summary['n_rows']}  pass: {summary['n_pass']}  fail: {summary['n_fail']}  "
          f"info: {summary['n_info']}", file=stream)
    for name, table in summary["tables"].items():
        print(f"\n[{name}]", file=stream)
        for rec in table:
            print("  " + "  ".join(f"{k}={_fmt(v)}" for k, v in sorted(rec.items())), file=stream)
    for f in summary["failing"]:
        print(f"FAIL {f['experiment']} {json.dumps(f['params'], sort_keys=True)}", file=stream)


def cmd_validate(args):
    try:
        cfg = load_config(args.config)
        resolve_workers(cfg)
    except ConfigError as exc:
        print(exc.to_json())
        return EXIT_CONFIG
    print(json.dumps({"valid": True, "experiment": cfg.experiment, "id": cfg.id}))
    return EXIT_PASS


def cmd_run(args):
    try:
        cfg = load_config(args.config)
        workers = resolve_workers(cfg)
        summary = run_experiment(cfg, workers)
    except ConfigError as exc:
        print(exc.to_json())
        return EXIT_CONFIG
    _print_summary(summary)
    return EXIT_FAIL if summary["n_fail"] else EXIT_PASS


def cmd_report(args):
    try:
        rows = read_report(args.dir)
    except (OSError, ValueError) as exc:
        print(json.dumps({"error": "report", "message": str(exc)}))
        return EXIT_CONFIG
    if not rows:
        print(json.dumps({"error": "report", "message": "no rows"}))
        return EXIT_CONFIG
    summary = emit_summary(args.dir, rows)
    _print_summary(summary)
    return EXIT_FAIL if summary["n_fail"] else EXIT_PASS


def build_parser():
    ap = argparse.ArgumentParser(prog="homlab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="execute an experiment configuration")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("report", help="aggregate report.csv of a run directory")
    p.add_argument("dir")
    p.set_defaults(func=cmd_report)
    p = sub.add_parser("validate", help="check a configuration without running it")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
