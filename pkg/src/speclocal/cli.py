"""Batch front end: audits, invariants, sweeps, oracle values and matrix dumps.

    speclocal invariant --config job.json --out-dir out/
    speclocal sweep --config sweep.json --threads 4

Exit codes: 0 success, 2 config/schema error (nothing written), 3 numerical
failure (kernel error or failed strict-mode certification).
"""
from __future__ import annotations

import argparse
import csv
import inspect
import io
import itertools
import json
import logging
import multiprocessing as mp
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import kernels, localizer, models, oracles, symmetry
from .lattice import export_matrix

log = logging.getLogger("speclocal")

EXIT_OK, EXIT_SCHEMA, EXIT_NUMERIC = 0, 2, 3

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": sorted(models.REGISTRY)},
                "params": {"type": "object", "additionalProperties": {"type": ["number", "string", "boolean"]}},
            },
        },
        "pipeline": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "variant": {"enum": sorted(localizer.VARIANTS)},
                "kappa": {"anyOf": [_POS, {"type": "null"}]},
                "rho": {"anyOf": [_POS, {"type": "null"}]},
                "strict_mode": {"type": "boolean"},
                "gap_fraction": _POS,
                "chiral_slot": {"type": "string"},
                "conserved_slot": {"type": "string"},
                "twist_slot": {"type": "string"},
                "kappa_rule": {"enum": ["kappa_rho", "gap_over_commutator"]},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["axes"],
            "properties": {
                "axes": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["param"],
                        "properties": {
                            "param": {"type": "string"},
                            "start": _NUM,
                            "stop": _NUM,
                            "steps": {"type": "integer", "minimum": 1},
                            "values": {"type": "array", "items": _NUM, "minItems": 1},
                        },
                        "oneOf": [{"required": ["start", "stop", "steps"]}, {"required": ["values"]}],
                    },
                }
            },
        },
        "oracles": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"enabled": {"type": "boolean"}},
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "csv": {"type": "string"},
                "json_prefix": {"type": "string"},
                "dump_stem": {"type": "string"},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
    },
}

_BLAS_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

CSV_TAIL = ["eta", "g", "kappa", "rho", "admissibility", "signature", "invariant", "z2", "localizer_gap",
            "wall_time_ms"]


class ConfigError(ValueError):
    pass


def _default_variant(model: models.ModelInstance) -> str:
    if model.name == "ssh_pair":
        return "OddTwistedCommuting_" + model.params.get("case", "ii")
    return {
        "ssh": "OddStandard",
        "ssh_perturbed": "OddTwistedChiral",
        "kitaev_stacked": "OddTwistedChiral",
        "qwz": "EvenStandard",
        "bhz_rashba": "EvenTwistedConservation",
    }.get(model.name, "OddStandard" if model.d % 2 else "EvenStandard")


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema violation at {where}: {exc.message}") from exc
    return cfg


def sweep_points(cfg: dict) -> list[dict]:
    """Cartesian product of the sweep axes in axis order (first axis slowest)."""
    axes = cfg.get("sweep", {}).get("axes", [])
    if not axes:
        return [{}]
    grids = []
    for ax in axes:
        if "values" in ax:
            vals = [float(v) for v in ax["values"]]
        else:
            vals = [float(v) for v in np.linspace(ax["start"], ax["stop"], ax["steps"])]
        grids.append((ax["param"], vals))
    return [dict(zip([g[0] for g in grids], combo)) for combo in itertools.product(*[g[1] for g in grids])]


def _model_params(cfg: dict, point: dict) -> dict:
    p = dict(cfg["model"].get("params", {}))
    p.update(point)
    if "seed" in cfg and "seed" in inspect.signature(models.REGISTRY[cfg["model"]["name"]]).parameters:
        p.setdefault("seed", cfg["seed"])
    return p


def _spec(cfg: dict, model, strict: bool) -> localizer.LocalizerSpec:
    pipe = dict(cfg.get("pipeline", {}))
    pipe.setdefault("variant", _default_variant(model))
    if strict:
        pipe["strict_mode"] = True
    if model.name == "kitaev_stacked":
        pipe.setdefault("chiral_slot", "nu")
    return localizer.LocalizerSpec(**pipe)


def validate_semantics(cfg: dict, strict: bool, need_localizer: bool) -> None:
    """Build the first point's model and spec so bad names or params fail before output."""
    pts = sweep_points(cfg)
    try:
        m = models.build(cfg["model"]["name"], **_model_params(cfg, pts[0]))
    except (TypeError, models.ModelError) as exc:
        raise ConfigError(f"bad model parameters: {exc}") from exc
    if need_localizer:
        if m.d == 0:
            raise ConfigError("localizer pipelines need d >= 1")
        try:
            spec = _spec(cfg, m, strict)
        except (TypeError, localizer.LocalizerError) as exc:
            raise ConfigError(str(exc)) from exc
        parity = localizer.VARIANTS[spec.variant][0]
        if (m.d % 2 == 1) != (parity == "odd"):
            raise ConfigError(f"variant {spec.variant} incompatible with d = {m.d}")


def run_point(args: tuple) -> dict:
    """Worker: one sweep point. Never raises; failures are encoded in the row."""
    cfg, point, strict, with_oracle = args
    t0 = time.perf_counter()
    row = {"params": _model_params(cfg, point), "status": "ok"}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            m = models.build(cfg["model"]["name"], **row["params"])
            spec = _spec(cfg, m, strict)
            rep = localizer.invariant(spec, m)
            row["report"] = rep.to_json()
        except symmetry.NotAnInsulator as exc:
            row["status"] = "gap_closed"
            row["error"] = str(exc)
        except localizer.CertificationError as exc:
            row["status"] = "certification_failed"
            row["error"] = str(exc)
        except (kernels.KernelError, ArithmeticError, np.linalg.LinAlgError) as exc:
            row["status"] = "kernel_error"
            row["error"] = f"{type(exc).__name__}: {exc}"
        if with_oracle and row["status"] == "ok":
            try:
                ov = oracles.model_oracle(m)
                rep = row["report"]
                row["oracle"] = {"name": ov.name, "value": ov.value,
                                 "match": ov.matches(rep["invariant"], rep["z2"])}
            except (oracles.OracleError, kernels.KernelError) as exc:
                row["oracle"] = {"error": str(exc)}
    row["wall_time_ms"] = (time.perf_counter() - t0) * 1e3
    return row


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def csv_text(cfg: dict, rows: list[dict]) -> str:
    pnames = list(cfg["model"].get("params", {}))
    for ax in cfg.get("sweep", {}).get("axes", []):
        if ax["param"] not in pnames:
            pnames.append(ax["param"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(pnames + CSV_TAIL)
    for r in rows:
        rep = r.get("report")
        vals = [r["params"].get(p) for p in pnames]
        if rep is None:
            tail = [None, None, None, None, "violated", None, None, None, None, r["wall_time_ms"]]
        else:
            tail = [rep["eta"], rep["g"], rep["kappa"], rep["rho"], rep["admissibility"], rep["signature"],
                    rep["invariant"], rep["z2"], rep["localizer_gap"], r["wall_time_ms"]]
        w.writerow([_fmt(v) for v in vals + tail])
    return buf.getvalue()


def resolve_threads(n: int | None) -> int:
    if n is None:
        env = os.environ.get("LOCALIZER_THREADS")
        n = int(env) if env else 1
    if n == 0:
        n = os.cpu_count() or 1
    return max(1, n)


def run_points(cfg: dict, strict: bool, threads: int, with_oracle: bool) -> list[dict]:
    jobs = [(cfg, p, strict, with_oracle) for p in sweep_points(cfg)]
    if threads == 1 or len(jobs) == 1:
        return [run_point(j) for j in jobs]
    # spawned workers read these before importing numpy: one BLAS thread each
    saved = {k: os.environ.get(k) for k in _BLAS_VARS}
    os.environ.update({k: "1" for k in _BLAS_VARS})
    try:
        with ProcessPoolExecutor(max_workers=threads, mp_context=mp.get_context("spawn")) as ex:
            # map keeps submission order, so output order follows the sweep index
            return list(ex.map(run_point, jobs))
    finally:
        for k, v in saved.items():
            if v is None:
                os.environ.pop(k, None)
            else:
                os.environ[k] = v


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _exit_for(rows) -> int:
    bad = [r for r in rows if r["status"] in ("kernel_error", "certification_failed")]
    return EXIT_NUMERIC if bad else EXIT_OK


def cmd_invariant(cfg, ns, out: Path, sweep: bool) -> int:
    with_oracle = cfg.get("oracles", {}).get("enabled", True)
    rows = run_points(cfg, ns.strict, resolve_threads(ns.threads), with_oracle)
    out.mkdir(parents=True, exist_ok=True)
    prefix = cfg.get("output", {}).get("json_prefix", "point")
    for i, r in enumerate(rows):
        _write_json(out / f"{prefix}_{i:04d}.json", r)
    if sweep or "sweep" in cfg:
        name = cfg.get("output", {}).get("csv", "sweep.csv")
        (out / name).write_text(csv_text(cfg, rows), encoding="utf-8", newline="")
    for r in rows:
        if r["status"] != "ok":
            log.warning("point %s: %s (%s)", r["params"], r["status"], r.get("error"))
    return _exit_for(rows)


def cmd_audit(cfg, ns, out: Path) -> int:
    rows = []
    for p in sweep_points(cfg):
        m = models.build(cfg["model"]["name"], **_model_params(cfg, p))
        try:
            rep = symmetry.audit_model(m).to_json()
            status = "ok"
        except symmetry.NotAnInsulator as exc:
            rep, status = {"error": str(exc)}, "gap_closed"
        rows.append({"params": _model_params(cfg, p), "status": status, "audit": rep})
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "audit.json", rows if len(rows) > 1 else rows[0])
    return EXIT_OK


def cmd_oracle(cfg, ns, out: Path) -> int:
    rows, code = [], EXIT_OK
    for p in sweep_points(cfg):
        m = models.build(cfg["model"]["name"], **_model_params(cfg, p))
        try:
            ov = oracles.model_oracle(m)
            rows.append({"params": _model_params(cfg, p), "oracle": ov.name, "value": ov.value})
        except (oracles.OracleError, kernels.KernelError) as exc:
            rows.append({"params": _model_params(cfg, p), "error": str(exc)})
            code = EXIT_NUMERIC
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "oracle.json", rows if len(rows) > 1 else rows[0])
    return code


def cmd_dump(cfg, ns, out: Path) -> int:
    p = sweep_points(cfg)[0]
    m = models.build(cfg["model"]["name"], **_model_params(cfg, p))
    spec = _spec(cfg, m, ns.strict)
    try:
        data = localizer.model_data(spec, m, spec.rho)
    except symmetry.NotAnInsulator as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    kappa, rho = localizer.default_parameters(data.g, data.comm_norm, spec.rho, spec.kappa, spec.kappa_rule)
    L = localizer.assemble(spec, m, kappa, rho)
    out.mkdir(parents=True, exist_ok=True)
    stem = out / cfg.get("output", {}).get("dump_stem", "localizer")
    export_matrix(stem, L.matrix, L.sites, m.layout,
                  {"variant": spec.variant, "kappa": kappa, "rho": rho, "model": m.name, "params": m.params})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="speclocal", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, hlp in [("audit", "symmetry audit and class"), ("invariant", "localizer invariant per point"),
                      ("sweep", "parameter sweep with CSV table"), ("oracle", "momentum-space reference value"),
                      ("dump", "export the assembled localizer matrix")]:
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--config", required=True, help="JSON job config")
        p.add_argument("--out-dir", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker processes, 0 = all cores (fallback: $LOCALIZER_THREADS)")
        p.add_argument("--strict", action="store_true", help="require a-priori admissibility")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(ns.config)
        validate_semantics(cfg, ns.strict, ns.command in ("invariant", "sweep", "dump"))
        if ns.command == "sweep" and "sweep" not in cfg:
            raise ConfigError("sweep command needs a 'sweep' section")
        if ns.threads is not None and ns.threads < 0:
            raise ConfigError("--threads must be >= 0")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    out = Path(ns.out_dir)
    if ns.command == "audit":
        return cmd_audit(cfg, ns, out)
    if ns.command == "oracle":
        return cmd_oracle(cfg, ns, out)
    if ns.command == "dump":
        return cmd_dump(cfg, ns, out)
    return cmd_invariant(cfg, ns, out, ns.command == "sweep")


if __name__ == "__main__":
    sys.exit(main())
