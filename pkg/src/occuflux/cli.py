"""Command-line batch runner.

    occuflux run <config.json>      run one experiment, write artifacts
    occuflux verify <config.json>   run the acceptance suite, exit 1 on any failure
    occuflux schema                 print the config JSON schema

Artifacts are named ``{kind}-{hash}.{csv|json}`` where ``hash`` is taken
over the canonical config without ``threads`` and ``output_dir``, so the
same config always produces the same file names and CSV bytes.  Model
parameters (V, q, H, L, motion, ...) are top-level keys; they are required
for every kind except ``verify``, which always uses the reference
configuration.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, reference_params
from .model import GaussianBump, ParameterError, PiecewiseLinear, SpaceTimeTest, SystemParams, validate_params

KINDS = ("fluctuations", "family", "veqn", "covariance", "assumptions", "verify")
_PARAM_KEYS = ("V", "q", "H", "L", "motion", "T", "d", "box_radius", "dt")
_RUN_KEYS = ("kind", "seed", "threads", "output_dir", "tests", "grid", "replicas", "x", "horizon",
             "record_times", "psi", "r", "t", "dtau", "dx", "centering")
_REQUIRED = {
    "fluctuations": ("tests", "grid", "replicas"),
    "family": ("x", "horizon", "replicas"),
    "veqn": ("psi", "t"),
    "covariance": ("tests", "grid"),
    "assumptions": ("tests",),
    "verify": (),
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "occuflux experiment config",
    "type": "object",
    "required": ["kind", "seed"],
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": list(KINDS)},
        "seed": {"type": "integer", "minimum": 0},
        "threads": {"type": ["integer", "null"], "minimum": 1},
        "output_dir": {"type": "string", "default": "."},
        "V": {"type": "number", "exclusiveMinimum": 0},
        "q": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
        "H": {"type": "number", "minimum": 0},
        "L": {"type": "number", "minimum": 0},
        "T": {"type": "number", "exclusiveMinimum": 0, "default": 1.0},
        "d": {"type": "integer", "minimum": 1, "default": 1},
        "box_radius": {"type": ["number", "null"]},
        "dt": {"type": ["number", "null"]},
        "motion": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["brownian", "stable", "ou"]},
                "sigma": {"type": "number"},
                "alpha": {"type": "number", "exclusiveMinimum": 0, "maximum": 2},
                "c": {"type": "number", "exclusiveMinimum": 0},
                "theta": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "tests": {"type": "array", "minItems": 1, "items": {"$ref": "#/$defs/bump"}},
        "grid": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "replicas": {"type": "integer", "minimum": 2},
        "centering": {"enum": ["analytic", "empirical"]},
        "x": {"type": ["number", "array"]},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "record_times": {"type": "array", "items": {"type": "number"}},
        "psi": {
            "type": "object",
            "required": ["spatial"],
            "properties": {
                "spatial": {"$ref": "#/$defs/bump"},
                "chi": {"type": "object", "properties": {"knots": {"type": "array"}, "values": {"type": "array"}}},
                "time_scale": {"type": "number", "exclusiveMinimum": 0},
                "factor": {"type": "number"},
            },
        },
        "r": {"type": "number", "minimum": 0},
        "t": {"type": "number", "exclusiveMinimum": 0},
        "dtau": {"type": "number", "exclusiveMinimum": 0},
        "dx": {"type": "number", "exclusiveMinimum": 0},
    },
    "$defs": {
        "bump": {
            "type": "object",
            "properties": {
                "amplitude": {"type": "number", "minimum": 0},
                "center": {"type": "array", "items": {"type": "number"}},
                "width": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    kind: str
    params: SystemParams
    seed: int
    raw: dict
    output_dir: Path
    threads: int | None = None
    tests: list[GaussianBump] = field(default_factory=list)

    @property
    def digest(self) -> str:
        return config_hash(self.raw)

    def artifact(self, suffix: str) -> Path:
        return self.output_dir / f"{self.kind}-{self.digest}.{suffix}"


def config_hash(raw: dict) -> str:
    core = {k: v for k, v in raw.items() if k not in ("threads", "output_dir")}
    text = json.dumps(core, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def _bump(data, where: str) -> GaussianBump:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    try:
        return GaussianBump.from_dict(data)
    except (ParameterError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _psi(data) -> SpaceTimeTest:
    if not isinstance(data, dict) or "spatial" not in data:
        raise ConfigError("psi: expected an object with a 'spatial' bump")
    try:
        chi = PiecewiseLinear(**data["chi"]) if "chi" in data else PiecewiseLinear.ramp()
        return SpaceTimeTest(_bump(data["spatial"], "psi.spatial"), chi,
                             float(data.get("time_scale", 1.0)), float(data.get("factor", 1.0)))
    except (ParameterError, TypeError) as exc:
        raise ConfigError(f"psi: {exc}") from None


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    return parse_config(raw)


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - set(_PARAM_KEYS) - set(_RUN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
    kind = raw.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"kind: must be one of {list(KINDS)}, got {kind!r}")
    if "seed" not in raw:
        raise ConfigError("seed: required (no wall-clock seeding)")
    seed = raw["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed: must be a nonnegative integer, got {seed!r}")
    missing = [k for k in _REQUIRED[kind] if k not in raw]
    if kind != "verify":
        missing += [k for k in ("V", "q", "H", "L", "motion") if k not in raw]
    if missing:
        raise ConfigError(f"kind={kind} requires field(s): {missing}")
    given = {k: raw[k] for k in _PARAM_KEYS if k in raw}
    if kind == "verify":
        # the suite always runs on the reference configuration; given fields are still validated
        given = {**reference_params().to_dict(), **given}
        given.pop("Q"), given.pop("F_T")
    try:
        params = validate_params({**given, "seed": seed})
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None
    threads = raw.get("threads")
    if threads is not None and (isinstance(threads, bool) or not isinstance(threads, int) or threads < 1):
        raise ConfigError(f"threads: must be a positive integer, got {threads!r}")
    out = Path(raw.get("output_dir", "."))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output_dir: {exc}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output_dir: {out} is not writable")
    tests = [_bump(b, f"tests[{i}]") for i, b in enumerate(raw.get("tests", []))]
    if "tests" in raw and not tests:
        raise ConfigError("tests: at least one test function required")
    for i, b in enumerate(tests):
        if b.d != params.d:
            raise ConfigError(f"tests[{i}]: dimension {b.d} does not match d={params.d}")
    if "replicas" in raw:
        n = raw["replicas"]
        if isinstance(n, bool) or not isinstance(n, int) or n < 2:
            raise ConfigError(f"replicas: must be an integer >= 2, got {n!r}")
    return ExperimentConfig(kind, params, seed, raw, out, threads, tests)


# artifact writers

def _fmt(v) -> str:
    return repr(float(v))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n")


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _run_fluctuations(cfg: ExperimentConfig) -> tuple[list[Path], bool]:
    from .analytics import LimitCovariance
    from .simulator import occupation_fluctuations, write_samples_csv
    from .stats import estimate_cov, increments_test, ks_normality, min_st_test

    raw = cfg.raw
    samples = occupation_fluctuations(cfg.params, raw["grid"], cfg.tests, raw["replicas"], cfg.seed,
                                      centering=raw.get("centering"), threads=cfg.threads)
    csv_path = cfg.artifact("csv")
    write_samples_csv(samples, csv_path)
    times = np.asarray(raw["grid"], dtype=float)
    keep = times > 0
    theory = None
    report = {"n_replicas": len(samples), "times": times.tolist()}
    try:
        lc = LimitCovariance.build(cfg.params, cfg.tests)
        theory = lc.matrix(times[keep])
        report["kappa"] = lc.kappa.tolist()
    except ParameterError as exc:
        report["kappa"] = None
        report["theory_note"] = str(exc)
    cov = estimate_cov(samples, theory, min_replicas=min(30, len(samples)))
    report["covariance"] = cov.to_dict()
    tests = []
    t_pos = times[keep]
    if t_pos.size >= 3:
        tests.append(min_st_test(cov, target=None if theory is None else float(report["kappa"][0][0])).to_dict())
    if t_pos.size >= 4 and len(samples) >= 10:
        tests.append(increments_test(samples, indices=tuple(np.flatnonzero(keep)[:4])).to_dict())
    if len(samples) >= 100:
        last = np.array([s.values[-1, 0] for s in samples])
        tests.append(ks_normality(last).to_dict())
    report["tests"] = tests
    json_path = cfg.artifact("json")
    _write_json(json_path, report)
    return [csv_path, json_path], True


def _run_family(cfg: ExperimentConfig) -> tuple[list[Path], bool]:
    from .simulator import family_batch

    raw = cfg.raw
    psi = _psi(raw["psi"]) if "psi" in raw else None
    rec = [float(t) for t in raw.get("record_times", [])]
    fams = family_batch(cfg.params, raw["x"], psi, float(raw["horizon"]), raw["replicas"], cfg.seed,
                        r=float(raw.get("r", 0.0)), record_times=rec, threads=cfg.threads)
    header = ["replica", "seed", "extinction_time", "occupation"] + [f"mass_t{t!r}" for t in rec]
    rows = []
    for i, f in enumerate(fams):
        rows.append([i, f.seed, "" if f.extinction_time is None else _fmt(f.extinction_time),
                     "" if f.occupation is None else _fmt(f.occupation)] + [int(m) for m in f.mass])
    csv_path = cfg.artifact("csv")
    _write_rows(csv_path, header, rows)
    mass = np.array([f.mass for f in fams], dtype=float).reshape(len(fams), -1)
    summary = {"n": len(fams), "record_times": rec,
               "mean_mass": mass.mean(axis=0).tolist(),
               "se_mass": (mass.std(axis=0, ddof=1) / np.sqrt(len(fams))).tolist(),
               "expected_mass": [float(np.exp(-cfg.params.Q * t)) for t in rec]}
    if psi is not None:
        vals = 1.0 - np.exp(-np.array([f.occupation for f in fams]))
        summary["one_minus_laplace"] = {"mean": float(vals.mean()),
                                        "se": float(vals.std(ddof=1) / np.sqrt(vals.size))}
    json_path = cfg.artifact("json")
    _write_json(json_path, summary)
    return [csv_path, json_path], True


def _run_veqn(cfg: ExperimentConfig) -> tuple[list[Path], bool]:
    from .veqn import defect_u, solve_v, write_vgrid_csv

    raw = cfg.raw
    psi = _psi(raw["psi"])
    kw = {k: float(raw[k]) for k in ("dtau", "dx") if k in raw}
    grid = solve_v(cfg.params, psi, float(raw.get("r", 0.0)), float(raw["t"]), **kw)
    rep = defect_u(cfg.params, psi, grid)
    csv_path = cfg.artifact("csv")
    write_vgrid_csv(grid, csv_path)
    summary = {"iterations": grid.iterations, "residual": grid.residual,
               "refinement_change": grid.refinement_change, "dtau": grid.dtau, "dx": grid.dx,
               "u_discrepancy": rep.discrepancy, "sup_u": rep.sup_u, "defect_constant": rep.constant,
               "v_min": float(grid.v.min()), "u_min": float(rep.u_direct.min())}
    json_path = cfg.artifact("json")
    _write_json(json_path, summary)
    return [csv_path, json_path], True


def _run_covariance(cfg: ExperimentConfig) -> tuple[list[Path], bool]:
    from .analytics import LimitCovariance

    lc = LimitCovariance.build(cfg.params, cfg.tests)
    times = [float(t) for t in cfg.raw["grid"]]
    M = lc.matrix(times)
    k = len(cfg.tests)
    rows = []
    for a, s in enumerate(times):
        for b, t in enumerate(times):
            for i in range(k):
                for j in range(k):
                    rows.append([_fmt(s), _fmt(t), i, j, _fmt(M[a * k + i, b * k + j])])
    csv_path = cfg.artifact("csv")
    _write_rows(csv_path, ["s", "t", "phi_i", "phi_j", "covariance"], rows)
    json_path = cfg.artifact("json")
    json_path.write_text(lc.to_json() + "\n")
    return [csv_path, json_path], True


def _run_assumptions(cfg: ExperimentConfig) -> tuple[list[Path], bool]:
    from .analytics import check_assumptions, report_json

    checks = check_assumptions(cfg.params, cfg.tests[0])
    json_path = cfg.artifact("json")
    json_path.write_text(report_json(checks) + "\n")
    return [json_path], True


def _run_verify(cfg: ExperimentConfig) -> tuple[list[Path], bool]:
    from .acceptance import results_json, run_acceptance

    results = run_acceptance(replicas=int(cfg.raw.get("replicas", 4000)), seed=cfg.seed,
                             threads=cfg.threads, log=print)
    json_path = cfg.artifact("json")
    json_path.write_text(results_json(results) + "\n")
    csv_path = cfg.artifact("csv")
    _write_rows(csv_path, ["criterion", "title", "pass"],
                [[r.number, r.title, int(r.passed)] for r in results])
    return [csv_path, json_path], all(r.passed for r in results)


_RUNNERS = {"fluctuations": _run_fluctuations, "family": _run_family, "veqn": _run_veqn,
            "covariance": _run_covariance, "assumptions": _run_assumptions, "verify": _run_verify}


def _versions() -> dict:
    import numba
    import scipy

    return {"occuflux": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def execute(cfg: ExperimentConfig) -> tuple[list[Path], bool]:
    paths, ok = _RUNNERS[cfg.kind](cfg)
    manifest = cfg.output_dir / f"manifest-{cfg.digest}.json"
    _write_json(manifest, {"kind": cfg.kind, "config_hash": cfg.digest, "seed": cfg.seed,
                           "config": cfg.raw, "versions": _versions(),
                           "artifacts": [p.name for p in paths], "pass": ok})
    return paths + [manifest], ok


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="occuflux", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in ("run", "verify"):
        p = sub.add_parser(verb)
        p.add_argument("config")
    sub.add_parser("schema")
    args = parser.parse_args(argv)

    if args.verb == "schema":
        print(json.dumps(SCHEMA, indent=2))
        return 0
    try:
        cfg = load_config(args.config)
        if args.verb == "verify" and cfg.kind != "verify":
            cfg = parse_config({**cfg.raw, "kind": "verify"})
        paths, ok = execute(cfg)
    except (ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for p in paths:
        print(p)
    if args.verb == "verify" and not ok:
        print("verify: one or more acceptance criteria failed", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
