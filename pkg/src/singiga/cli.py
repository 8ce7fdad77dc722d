"""Command-line front end.

Every subcommand reads a flat INI config (section ``[study]``), writes one or
more CSV tables into ``--out`` and a JSON manifest next to them.

Exit codes: 0 success, 1 configuration error, 2 unexpected solver failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from . import __version__

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2
CONVERGENCE_HEADER = ("h", "dofs", "err_l2", "eoc_l2", "err_h1", "eoc_h1", "cond")
VARIANT_ORDER = ("regularized", "robust-delta0", "naive")


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# config parsing


def read_config(path: Optional[str]) -> Dict[str, str]:
    """Key/value pairs of the ``[study]`` section (empty when ``path`` is None)."""
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(p.read_text(encoding="utf-8"))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not cp.has_section("study"):
        raise ConfigError(f"{path}: missing [study] section")
    return {k: v.strip() for k, v in cp.items("study")}


class _Reader:
    """Typed access to config values with defaults; records every key used."""

    def __init__(self, raw: Dict[str, str]):
        self.raw = dict(raw)
        self.used = set()

    def _get(self, key):
        self.used.add(key)
        return self.raw.get(key)

    def str(self, key, default):
        v = self._get(key)
        return default if v in (None, "") else v

    def float(self, key, default):
        v = self._get(key)
        if v in (None, ""):
            return default
        try:
            return float(v)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected a number, got {v!r}") from exc

    def opt_float(self, key):
        v = self._get(key)
        if v in (None, "", "auto"):
            return None
        return self.float(key, None)

    def floats(self, key, default):
        v = self._get(key)
        if v in (None, ""):
            return tuple(default)
        try:
            return tuple(_parse_number(t) for t in v.replace(";", ",").split(",") if t.strip())
        except ValueError as exc:
            raise ConfigError(f"{key}: expected a comma separated list of numbers, got {v!r}") from exc

    def ints(self, key, default):
        vals = self.floats(key, default)
        if any(float(x) != int(x) for x in vals):
            raise ConfigError(f"{key}: expected integers")
        return tuple(int(x) for x in vals)

    def bool(self, key, default):
        v = self._get(key)
        if v in (None, ""):
            return default
        s = v.lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        if s == "auto":
            return None
        raise ConfigError(f"{key}: expected a boolean, got {v!r}")

    def unknown(self) -> List[str]:
        return sorted(set(self.raw) - self.used)


def _parse_number(tok: str) -> float:
    tok = tok.strip()
    if "/" in tok:
        a, b = tok.split("/")
        return float(a) / float(b)
    return float(tok)


# --------------------------------------------------------------------------
# manifest


@dataclass
class RunManifest:
    command: str
    version: str
    config: Dict[str, str]
    seed: int
    rows: List[Dict[str, Any]] = field(default_factory=list)
    counters: Dict[str, int] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    status: str = "ok"

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True, allow_nan=False)

    @staticmethod
    def from_json(text: str) -> "RunManifest":
        return RunManifest(**_unjsonable(json.loads(text)))


def _jsonable(obj):
    # non-finite floats are stored as strings so the file stays strict JSON
    if isinstance(obj, float) and not math.isfinite(obj):
        return {"__float__": repr(obj)}
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _unjsonable(obj):
    if isinstance(obj, dict):
        if set(obj) == {"__float__"}:
            return float(obj["__float__"])
        return {k: _unjsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_unjsonable(v) for v in obj]
    return obj


# --------------------------------------------------------------------------
# CSV helpers


def fmt(x) -> str:
    """Deterministic text for a table cell."""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, int):
        return str(x)
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.10e}"


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) if not isinstance(v, str) else v for v in r])
    path.write_bytes(buf.getvalue().encode("utf-8"))


def _write_manifest(out: Path, name: str, manifest: RunManifest) -> None:
    (out / f"{name}.json").write_text(manifest.to_json() + "\n", encoding="utf-8")


def _sum_counters(rows) -> Dict[str, int]:
    total: Dict[str, int] = {}
    for r in rows:
        for k, v in r.get("diagnostics", {}).items():
            total[k] = total.get(k, 0) + int(v)
    return total


# --------------------------------------------------------------------------
# commands


def _study_config(rd: _Reader, seed: int, defaults: Dict[str, Any]):
    from .experiments import StudyConfig

    domain = rd.str("domain", defaults.get("domain", "model8"))
    rot_raw = rd.raw.get("rotation", "")
    rd.used.add("rotation")
    if rot_raw.strip().lower() == "random":
        import numpy as np
        from .geometry import build_domain
        npatch = len(build_domain(domain, 2.0).patches)
        rotation = tuple(float(r) for r in np.random.default_rng(seed).uniform(0.0, 0.5 * math.pi, npatch))
    else:
        rotation = rd.floats("rotation", (0.0,))
    anchor = rd.floats("anchor", (0.0, 0.0))
    if len(anchor) != 2:
        raise ConfigError("anchor: expected two numbers")
    return StudyConfig(
        domain=domain,
        gamma=rd.float("gamma", 2.0),
        degrees=rd.ints("degrees", defaults.get("degrees", (1, 2))),
        hs=rd.floats("hs", defaults.get("hs", (0.25, 0.125, 0.0625, 0.03125))),
        rotation=rotation,
        anchor=anchor,
        delta_mode=rd.str("delta_mode", "cusp"),
        delta_exponent=rd.float("delta_exponent", 1.0),
        delta_value=rd.float("delta_value", 0.0),
        variant=rd.str("variant", "regularized"),
        ghost=rd.bool("ghost", None),
        eta=rd.float("eta", 0.01),
        beta=rd.opt_float("beta"),
        kappa=rd.float("kappa", 0.5),
        problem=rd.str("problem", defaults.get("problem", "sinusoid2d")),
        compute_cond=bool(rd.bool("compute_cond", False)),
        expect_failure=bool(rd.bool("expect_failure", False)),
    )


def _row_dict(r) -> Dict[str, Any]:
    d = asdict(r)
    d["diagnostics"] = dict(r.diagnostics)
    return d


def cmd_convergence(args, surface: bool = False) -> int:
    from .experiments import run_convergence, run_surface

    rd = _Reader(read_config(args.config))
    name = rd.str("name", "surface" if surface else "convergence")
    defaults = {"domain": "ellipsoid", "problem": "ellipsoid",
                "hs": (0.25, 0.125, 0.0625, 0.03125, 0.015625)} if surface else {}
    try:
        study = _study_config(rd, args.seed, defaults)
        _reject_unknown(rd)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rows = run_surface(study) if surface else run_convergence(study)
    out = _outdir(args.out)
    csv_rows = [(r.h, r.dofs, r.err_l2, r.eoc_l2, r.err_h1, r.eoc_h1, r.cond) for r in rows]
    write_csv(out / f"{name}.csv", CONVERGENCE_HEADER, csv_rows)
    manifest = RunManifest(args.command, __version__, dict(rd.raw), args.seed, [_row_dict(r) for r in rows])
    manifest.counters = _sum_counters(manifest.rows)
    manifest.outputs = [f"{name}.csv"]
    failed = [r for r in rows if r.status != "ok"]
    manifest.status = "ok" if not failed else ("expected-failure" if study.expect_failure else "solver-failure")
    _write_manifest(out, name, manifest)
    if failed and not study.expect_failure:
        for r in failed:
            print(f"error: p={r.p} h={r.h}: {r.status}: {r.message}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_condition(args) -> int:
    from .experiments import run_condition_sweep

    rd = _Reader(read_config(args.config))
    name = rd.str("name", "condition")
    gammas = rd.floats("gammas", (1, 2, 3, 4, 5, 6))
    p = rd.ints("degree", (2,))[0]
    h = rd.float("h", 0.1)
    variants = tuple(v.strip() for v in rd.str("variants", ",".join(VARIANT_ORDER)).split(",") if v.strip())
    domain = rd.str("domain", "model8")
    bad = [v for v in variants if v not in VARIANT_ORDER]
    if bad:
        raise ConfigError(f"variants: unknown {bad}")
    if h <= 0 or p < 1:
        raise ConfigError("h must be positive and degree >= 1")
    _reject_unknown(rd)
    rows = run_condition_sweep(gammas, p, h, variants, domain)
    out = _outdir(args.out)
    header = ("gamma", "p", "h", "dofs") + tuple(f"cond_{v}" for v in variants)
    write_csv(out / f"{name}.csv", header, [(r.gamma, r.p, r.h, r.dofs) + tuple(r.cond[v] for v in variants) for r in rows])
    manifest = RunManifest(args.command, __version__, dict(rd.raw), args.seed,
                           [asdict(r) for r in rows], outputs=[f"{name}.csv"])
    _write_manifest(out, name, manifest)
    return EXIT_OK


def cmd_delta_study(args) -> int:
    from .experiments import optimal_exponent, run_delta_study

    rd = _Reader(read_config(args.config))
    name = rd.str("name", "delta")
    gammas = rd.floats("gammas", (1, 2, 3))
    degrees = rd.ints("degrees", (1, 2))
    hs = rd.floats("hs", (0.25, 0.125, 0.0625, 0.03125))
    extra = rd.floats("exponents", (1.0, 2.0))
    include_opt = rd.bool("include_optimal", True)
    domain = rd.str("domain", "model8")
    if any(h <= 0 for h in hs) or any(p < 1 for p in degrees):
        raise ConfigError("hs must be positive and degrees >= 1")
    _reject_unknown(rd)
    out = _outdir(args.out)
    manifest = RunManifest(args.command, __version__, dict(rd.raw), args.seed)
    for g in gammas:
        for p in degrees:
            exps = tuple(extra)
            if include_opt is not False:
                exps = (optimal_exponent(g, p),) + tuple(e for e in exps if e != optimal_exponent(g, p))
            res = run_delta_study(g, p, hs, exps, domain)
            fname = f"{name}_g{fmt_tag(g)}_p{p}.csv"
            header = ("h", "norm") + tuple(f"a={fmt(a)}" for a in exps)
            rows = []
            for i, h in enumerate(hs):
                rows.append((h, "l2") + tuple(res.l2[i]))
                rows.append((h, "h1") + tuple(res.h1[i]))
            write_csv(out / fname, header, rows)
            manifest.outputs.append(fname)
            manifest.rows.append({"gamma": g, "p": p, "exponents": list(exps),
                                  "l2": res.l2.tolist(), "h1": res.h1.tolist()})
    _write_manifest(out, name, manifest)
    return EXIT_OK


def fmt_tag(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else str(x).replace(".", "p")


def cmd_region(args) -> int:
    import numpy as np
    from .geometry import CollapsedBilinearMap, CuspMap
    from .metric_reg import regularization_region

    rd = _Reader(read_config(args.config))
    kind = args.map or rd.str("map", "cusp")
    gamma = args.gamma if args.gamma is not None else rd.float("gamma", 2.0)
    delta = args.delta if args.delta is not None else rd.float("delta", 0.001)
    res = args.resolution if args.resolution is not None else int(rd.float("resolution", 256))
    name = rd.str("name", "region")
    _reject_unknown(rd)
    if kind == "cusp":
        if gamma < 1:
            raise ConfigError("gamma must be >= 1")
        m = CuspMap(gamma)
    elif kind in ("collapsed-bilinear", "bilinear"):
        m = CollapsedBilinearMap()
    else:
        raise ConfigError(f"unknown map kind {kind!r}")
    if delta < 0 or res < 1:
        raise ConfigError("delta must be >= 0 and resolution >= 1")
    mask = regularization_region(m, delta, res)
    out = _outdir(args.out)
    buf = "\n".join(",".join("1" if v else "0" for v in row) for row in mask) + "\n"
    (out / f"{name}.csv").write_bytes(buf.encode("utf-8"))
    manifest = RunManifest(args.command, __version__,
                           {"map": kind, "gamma": repr(gamma), "delta": repr(delta), "resolution": str(res)},
                           args.seed, [{"fraction": float(np.mean(mask))}], outputs=[f"{name}.csv"])
    _write_manifest(out, name, manifest)
    return EXIT_OK


def _reject_unknown(rd: _Reader):
    extra = rd.unknown()
    if extra:
        raise ConfigError(f"unknown config keys: {', '.join(extra)}")


def _outdir(path: str) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="singiga", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, hlp in (("convergence", "convergence study on a planar domain"),
                      ("delta-study", "error versus the delta scaling exponent"),
                      ("condition", "condition numbers over cusp exponents"),
                      ("surface", "Laplace-Beltrami study on the ellipsoid"),
                      ("region", "indicator of the region of regularization")):
        sp = sub.add_parser(name, help=hlp)
        sp.add_argument("--config", help="INI file with a [study] section")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="BLAS threads")
        sp.add_argument("--seed", type=int, default=0, help="seed for randomized inputs")
        if name == "region":
            sp.add_argument("--map", choices=("cusp", "collapsed-bilinear"))
            sp.add_argument("--gamma", type=float)
            sp.add_argument("--delta", type=float)
            sp.add_argument("--resolution", type=int)
    return ap


COMMANDS = {
    "convergence": cmd_convergence,
    "surface": lambda a: cmd_convergence(a, surface=True),
    "condition": cmd_condition,
    "delta-study": cmd_delta_study,
    "region": cmd_region,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    # only effective when numerical libraries are not loaded yet
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(args.threads))
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, RuntimeError, MemoryError) as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
