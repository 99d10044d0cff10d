"""Command-line entry point: ``qflat <qcheck|degree|verify|profile> [options]``.

Exit codes: 0 success, 1 check failure, 2 configuration error,
3 degenerate geometry, 4 quadrature failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import hypersurface as hs
from . import normal_metric as nm
from . import quantization as qa
from . import tensor_core as tc
from .curvature import paneitz_law_residual, q_curvature_4d
from .fields import field_from_id
from .quadrature import IntegrandError, ToleranceNotMet

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DEGENERATE, EXIT_QUADRATURE = 0, 1, 2, 3, 4
COMMANDS = ("qcheck", "degree", "verify", "profile")
FORMATS = ("json", "csv", "text")
PROFILE_HEADER = ("r", "vol_boundary", "vol_ball", "ratio")
NON_QUANTIZING_MODELS = ("cone",)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Output

def to_json(obj, indent: int = 2) -> str:
    """JSON text with every float written to 17 significant digits."""
    return _encode(_plain(obj), indent, 0)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def _float_token(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    text = format(x, ".17g")
    if not any(c in text for c in ".en"):
        text += ".0"
    return text


def _encode(obj, indent, level) -> str:
    pad, inner = " " * (indent * level), " " * (indent * (level + 1))
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(k)}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + _encode(v, indent, level + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return _float_token(obj)
    return json.dumps(obj)


def _fmt6(x) -> str:
    return format(x, ".6g") if isinstance(x, float) else str(x)


def _text_table(header, rows) -> str:
    cells = [list(header)] + [[_fmt6(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells)


def _profile_csv(profile: qa.RadialProfile) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PROFILE_HEADER)
    for row in profile.rows():
        writer.writerow([_float_token(float(v)) for v in row])
    return buf.getvalue()


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


# ---------------------------------------------------------------------------
# Configuration

@dataclass
class RunConfig:
    command: str
    metric: str | None = None
    surface: str | None = None
    n: int | None = None
    tol: float | None = None
    radii: list = field(default_factory=list)
    out: str | None = None
    format: str = "text"
    only: list = field(default_factory=list)
    reverse_orientation: bool = False
    threads: int = 1

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {', '.join(FORMATS)}")
        if self.tol is not None and not self.tol > 0:
            raise ConfigError("tolerances must be positive")
        if self.n is not None and self.n < 2:
            raise ConfigError("dimension must be at least 2")
        if any(r <= 0 for r in self.radii) or any(b <= a for a, b in zip(self.radii, self.radii[1:])):
            raise ConfigError("radii must be positive and strictly increasing")
        if self.threads < 1:
            raise ConfigError("QFLAT_THREADS must be a positive integer")
        unknown = [c for c in self.only if c not in VERIFY_CHECKS]
        if unknown:
            raise ConfigError(f"unknown check(s): {', '.join(unknown)}")
        return self


def _parse_radii(text):
    if text is None:
        return []
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad radius list {text!r}") from exc


def _parse_only(text):
    if not text:
        return []
    if isinstance(text, (list, tuple)):
        return [str(v) for v in text]
    return [v.strip() for v in str(text).split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qflat", description="Q-curvature checks for conformally flat metrics.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("qcheck", "total Q-curvature and its quantization"),
                           ("degree", "degree of the Gauss map of a hypersurface"),
                           ("verify", "run the invariant suite"),
                           ("profile", "isoperimetric profile over a radius ladder")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--metric", help="metric id: flat, sphere, cone:beta=B, bump:a=A,s=S, expr:<sympy>")
        p.add_argument("--surface", help="surface id: sphere, flat, paraboloid, graph:bump, graph:radial:p=P")
        p.add_argument("--n", type=int, help="dimension")
        p.add_argument("--tol", type=float, help="override the acceptance tolerance")
        p.add_argument("--radii", help="comma-separated radius ladder")
        p.add_argument("--out", help="write the report to this path")
        p.add_argument("--format", choices=FORMATS, help="output format (default text)")
        p.add_argument("--only", help="comma-separated subset of verify checks")
        p.add_argument("--reverse-orientation", action="store_true", default=None,
                       help="compose the Gauss map with the antipodal map")
        p.add_argument("--config", help="JSON file of option defaults; flags take precedence")
    return parser


def make_config(argv=None) -> RunConfig:
    ns = build_parser().parse_args(argv)
    base = {}
    if ns.config:
        try:
            with open(ns.config, encoding="utf-8") as fh:
                base = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {ns.config}: {exc}") from exc
        if not isinstance(base, dict):
            raise ConfigError("config file must hold a JSON object")
        base = {k.replace("-", "_"): v for k, v in base.items()}
    merged = dict(base)
    for key in ("metric", "surface", "n", "tol", "radii", "out", "format", "only", "reverse_orientation"):
        val = getattr(ns, key)
        if val is not None:
            merged[key] = val
    env = os.environ.get("QFLAT_THREADS", "1")
    try:
        threads = int(env)
    except ValueError as exc:
        raise ConfigError("QFLAT_THREADS must be a positive integer") from exc
    try:
        cfg = RunConfig(
            command=ns.command,
            metric=merged.get("metric"),
            surface=merged.get("surface"),
            n=None if merged.get("n") is None else int(merged["n"]),
            tol=None if merged.get("tol") is None else float(merged["tol"]),
            radii=_parse_radii(merged.get("radii")),
            out=merged.get("out"),
            format=merged.get("format") or "text",
            only=_parse_only(merged.get("only")),
            reverse_orientation=bool(merged.get("reverse_orientation", False)),
            threads=threads,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


# ---------------------------------------------------------------------------
# Commands

def _resolve_metric(cfg: RunConfig, default: str = "sphere"):
    metric_id = cfg.metric or default
    try:
        return metric_id, field_from_id(metric_id, cfg.n or 4)
    except (KeyError, ValueError) as exc:
        raise ConfigError(exc.args[0] if exc.args else str(exc)) from exc


def cmd_qcheck(cfg: RunConfig) -> tuple[int, dict]:
    metric_id, w = _resolve_metric(cfg)
    if w.n != 4:
        raise ConfigError("qcheck needs n = 4")
    tol = cfg.tol if cfg.tol is not None else 1e-4
    res = qa.total_q_integral(w)
    report = qa.quantization_report(res.value, 4, tol=tol)
    payload = {"metric": metric_id, "report": report.as_dict(), "quadrature_error": res.error,
               "converged": res.converged}
    model = metric_id.split(":")[0] in NON_QUANTIZING_MODELS
    if model:
        payload["note"] = "model end, quantization not expected"
    if not res.converged:
        return EXIT_QUADRATURE, payload
    return (EXIT_OK if report.quantized or model else EXIT_FAIL), payload


def cmd_degree(cfg: RunConfig) -> tuple[int, dict]:
    surface_id = cfg.surface or "sphere"
    try:
        surface = hs.surface_from_id(surface_id, cfg.n or 4)
    except (KeyError, ValueError) as exc:
        raise ConfigError(exc.args[0] if exc.args else str(exc)) from exc
    if cfg.reverse_orientation:
        surface = surface.reversed()
    tol = cfg.tol if cfg.tol is not None else 1e-3
    rep = hs.gauss_map_degree(surface)
    payload = {"surface": surface_id, "reversed": cfg.reverse_orientation, **rep.as_dict(), "tol": tol}
    return (EXIT_OK if rep.residual < tol else EXIT_FAIL), payload


def cmd_profile(cfg: RunConfig) -> tuple[int, qa.RadialProfile, str]:
    metric_id, w = _resolve_metric(cfg)
    if w.n != 4:
        raise ConfigError("profile needs n = 4")
    radii = cfg.radii or [1.0, 10.0, 100.0]
    prof = qa.isoperimetric_profile(w, radii)
    return (EXIT_OK if prof.converged else EXIT_QUADRATURE), prof, metric_id


# ---------------------------------------------------------------------------
# Verification suite

@dataclass
class CheckResult:
    name: str
    value: float
    tol: float
    passed: bool
    seconds: float = 0.0

    def line(self) -> str:
        return f"CHECK {self.name} {self.value:.6g} {self.tol:.6g} {'PASS' if self.passed else 'FAIL'}"


def _points(seed: int, count: int, scale: float = 1.5) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-scale, scale, size=(count, 4))


def _check_constants(cfg):
    dims = [cfg.n] if cfg.n else [4, 6, 8]
    worst = 0.0
    for n in dims:
        c = qa.dimensional_constants(n)
        gap = abs(c["A"] * tc.double_factorial(n - 1) * c["vol_Sn_pi_coeff"] - 2 * c["c_n_pi_coeff"])
        worst = max(worst, float(gap))
    return worst, 0.0


def _check_pfaffian(cfg):
    rng = np.random.default_rng(1)
    worst = 0.0
    for n in (2, 4, 6):
        for _ in range(25):
            L = rng.normal(size=(n, n))
            L = (L + L.T) / 2
            det = np.linalg.det(L)
            pf = tc.pfaffian_from_riemann(tc.riemann_from_L(L))
            worst = max(worst, abs(pf - tc.double_factorial(n - 1) * det) / (1 + abs(det)))
    return worst, 1e-9


_Q_METRICS = ("sphere", "cone:beta=-0.25", "bump:a=1,s=1")


def _check_dual_q(cfg):
    worst = 0.0
    for mid in _Q_METRICS:
        worst = max(worst, float(np.max(q_curvature_4d(field_from_id(mid), _points(2, 5)).residual)))
    return worst, 1e-8


def _check_paneitz(cfg):
    from .curvature import flat_bilaplacian

    worst = 0.0
    for mid in _Q_METRICS:
        w = field_from_id(mid)
        x = _points(3, 4)
        worst = max(worst, float(np.max(paneitz_law_residual(w, x) / (1 + np.abs(flat_bilaplacian(w, x))))))
    return worst, 1e-4


def _check_normality(cfg):
    probes = np.array([[0.3, 0.1, 0.0, 0.0], [1.0, -0.5, 0.2, 0.0], [2.5, 0.0, 0.0, 1.0]])
    return nm.normality_residual(field_from_id("sphere"), probes), 1e-2


def _check_flux_sphere(cfg):
    return abs(qa.flux_decay_profile(field_from_id("sphere"), [80.0])[0]), 1e-3


def _check_flux_cone_limit(cfg):
    w = field_from_id("cone:beta=-0.25")
    F = qa.flux_decay_profile(w, [80.0])[0]
    limit = qa.flux_limit_radial(w, 1e6)
    return abs(F - limit) / abs(limit), 1e-3


def _check_flux_split(cfg):
    worst = 0.0
    for mid in ("sphere", "cone:beta=-0.25"):
        w = field_from_id(mid)
        for rho in (10.0, 40.0):
            one, two = qa.term_split_I_II(w, rho)
            worst = max(worst, abs(one + two - qa.flux_decay_profile(w, [rho])[0]))
    return worst, 1e-8


def _check_deficit(cfg):
    worst = 0.0
    for beta in (-0.5, -0.25, -0.125):
        d = qa.deficit_consistency(field_from_id(f"cone:beta={beta}"))
        worst = max(worst, d["relative_gap"])
    return worst, 2e-2


def _check_holder(cfg):
    rng = np.random.default_rng(4)
    failures = 0
    for _ in range(100):
        n = int(rng.choice([6, 8]))
        a = int(rng.integers(1, n - 4 + 1))
        total = n - 2 - a
        p = int(rng.integers(2, total + 1))
        cuts = sorted(rng.choice(np.arange(1, total), size=p - 1, replace=False).tolist())
        norms = [b - c for c, b in zip([0] + cuts, cuts + [total])]
        failures += not nm.holder_exponents(norms, n, a).valid
    try:
        nm.holder_exponents([2], 6, 2)
        failures += 1
    except ValueError:
        pass
    return float(failures), 0.5


def _check_degree(cfg):
    sphere = hs.sphere_surface()
    reps = [(hs.gauss_map_degree(sphere), 1), (hs.gauss_map_degree(sphere.reversed()), -1),
            (hs.gauss_map_degree(hs.graph_bump(), radius=8.0), 0)]
    return max(r.residual + abs(r.m - m) for r, m in reps), 1e-3


def _check_gbc(cfg):
    return abs(qa.gbc_check(qa.total_q_integral(field_from_id("sphere")).value) - 2), 1e-4


def _check_sphere_quantization(cfg):
    return qa.quantization_report(qa.total_q_integral(field_from_id("sphere")).value).relative_residual, 1e-4


VERIFY_CHECKS: dict[str, Callable] = {
    "constants": _check_constants,
    "pfaffian": _check_pfaffian,
    "dual_q": _check_dual_q,
    "paneitz": _check_paneitz,
    "normality": _check_normality,
    "flux_sphere": _check_flux_sphere,
    "flux_cone_limit": _check_flux_cone_limit,
    "flux_split": _check_flux_split,
    "deficit": _check_deficit,
    "holder": _check_holder,
    "degree": _check_degree,
    "gbc": _check_gbc,
    "quantization": _check_sphere_quantization,
}


def run_checks(cfg: RunConfig) -> list[CheckResult]:
    names = cfg.only or list(VERIFY_CHECKS)

    def one(name):
        t0 = time.perf_counter()
        value, tol = VERIFY_CHECKS[name](cfg)
        if cfg.tol is not None:
            tol = cfg.tol
        value = float(value)
        return CheckResult(name, value, tol, bool(value <= tol), time.perf_counter() - t0)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            return list(pool.map(one, names))
    return [one(name) for name in names]


def cmd_verify(cfg: RunConfig) -> tuple[int, list[CheckResult]]:
    results = run_checks(cfg)
    return (EXIT_OK if all(r.passed for r in results) else EXIT_FAIL), results


# ---------------------------------------------------------------------------
# Rendering and dispatch

def _render_dict(payload: dict, fmt: str) -> str:
    if fmt == "json":
        return to_json(payload)
    flat = []

    def walk(prefix, obj):
        if isinstance(obj, dict):
            for k, v in obj.items():
                walk(f"{prefix}{k}.", v)
        else:
            flat.append((prefix[:-1], obj))

    walk("", payload)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("key", "value"))
        for k, v in flat:
            writer.writerow((k, _float_token(v) if isinstance(v, float) else v))
        return buf.getvalue()
    return _text_table(("key", "value"), flat)


def _render_checks(results: list[CheckResult], fmt: str) -> str:
    if fmt == "json":
        return to_json({"checks": [r.__dict__ for r in results], "passed": all(r.passed for r in results)})
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("name", "value", "tol", "status"))
        for r in results:
            writer.writerow((r.name, _float_token(r.value), _float_token(r.tol), "PASS" if r.passed else "FAIL"))
        return buf.getvalue()
    return "\n".join(r.line() for r in results)


def _render_profile(prof: qa.RadialProfile, metric_id: str, fmt: str) -> str:
    if fmt == "csv":
        return _profile_csv(prof)
    if fmt == "json":
        return to_json({"metric": metric_id, **prof.as_dict()})
    return _text_table(PROFILE_HEADER, prof.rows())


def main(argv=None) -> int:
    try:
        cfg = make_config(argv)
    except ConfigError as exc:
        print(f"qflat: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # argparse usage errors
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if cfg.command == "qcheck":
            code, payload = cmd_qcheck(cfg)
            _emit(_render_dict(payload, cfg.format), cfg.out)
            if code == EXIT_OK and "note" in payload and cfg.format == "text":
                print(f"note: {payload['note']}", file=sys.stderr)
        elif cfg.command == "degree":
            code, payload = cmd_degree(cfg)
            _emit(_render_dict(payload, cfg.format), cfg.out)
        elif cfg.command == "profile":
            code, prof, metric_id = cmd_profile(cfg)
            _emit(_render_profile(prof, metric_id, cfg.format), cfg.out)
        else:
            code, results = cmd_verify(cfg)
            if cfg.out and cfg.format != "text":
                print("\n".join(r.line() for r in results))
            _emit(_render_checks(results, cfg.format), cfg.out)
        return code
    except ConfigError as exc:
        print(f"qflat: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except hs.DegenerateImmersionError as exc:
        print(f"qflat: degenerate immersion: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (ToleranceNotMet, IntegrandError) as exc:
        print(f"qflat: quadrature failure: {exc}", file=sys.stderr)
        return EXIT_QUADRATURE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
