"""Command-line front end: strict JSON configuration, pipelines and artifacts.

Every run writes ``resolved_config.json`` (all defaults filled in),
``report.json`` and the pipeline's CSV files into the output directory.
Exit status: 0 on success, 1 on domain errors (including configuration
errors), 2 on numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import lifespan as L
from . import radiation as R
from . import simulator as S
from .data import InitialDataSet
from .nullform import (
    CoefficientSet,
    DomainError,
    SpeedVector,
    check_null,
    check_smallness,
    check_structure,
    check_symmetry,
    coefficients_from_records,
    load_coefficients,
)

FORM_KINDS = ("Phi", "Psi", "Theta", "Xi")
SUBCOMMANDS = ("check-null", "radiation", "lifespan", "riccati", "simulate", "scaling-study")
THREADS_ENV = "QWLIFESPAN_THREADS"


class ConfigError(DomainError):
    """Base class for configuration problems."""


class ConfigFileMissing(ConfigError):
    pass


class ConfigSyntaxError(ConfigError):
    pass


class UnknownConfigKey(ConfigError):
    pass


class ConfigInvariantError(ConfigError):
    pass


def fmt(x: float) -> str:
    """17 significant digits; round-trips every double."""
    return f"{x:.17g}"


# ---------------------------------------------------------------------------
# configuration schema


@dataclass
class RadiationSettings:
    rho_min: float = -8.0
    n_rho: int = 321
    n_omega: int = 1
    n_line: int = R.N_LINE
    n_abel: int = R.N_ABEL


@dataclass
class LifespanSettings:
    epsilons: list[float] = field(default_factory=lambda: [0.4, 0.3, 0.2])
    refine: bool = True
    empirical_T: list[float] | None = None


@dataclass
class ForcingSettings:
    """``q(t) = amplitude * (1 + t)^exponent``."""

    amplitude: float = 0.0
    exponent: float = -1.25


@dataclass
class RiccatiSettings:
    alpha: float = 1.0
    w0: float = 1.0
    T0: float = 0.0
    T1: float = 10.0
    tolerance: float = 1e-10
    forcing: ForcingSettings = field(default_factory=ForcingSettings)
    n_samples: int = 201


@dataclass
class SimulationSettings:
    epsilon: float = 1.0
    geometry: str = "cartesian"
    extent: float = 4.0
    nx: int = 161
    cfl: float = 0.45
    t_max: float = 1.0
    blowup_threshold: float = 1e3
    curvature_threshold: float | None = None
    output_every: float = 0.1
    window: float | None = None
    probes: list[float] = field(default_factory=list)
    sensitivity: list[float] = field(default_factory=lambda: [1e2, 1e4])
    order: int = 2
    band: list[float] | None = None
    baseline_time: float = 0.0
    extrapolate: bool = False
    log_cadence: bool = False


@dataclass
class ScalingSettings:
    epsilons: list[float] = field(default_factory=lambda: [0.4, 0.3, 0.2])
    tol_scaling: float = 0.35


@dataclass
class ProblemConfig:
    """Everything one invocation needs; see the README for the schema."""

    speeds: list[float]
    coefficients: str | list[dict]
    data: dict[str, Any]
    output_dir: str = "out"
    allow_unstructured: bool = False
    gradient_bound: float = 0.0
    radiation: RadiationSettings = field(default_factory=RadiationSettings)
    lifespan: LifespanSettings = field(default_factory=LifespanSettings)
    riccati: RiccatiSettings = field(default_factory=RiccatiSettings)
    simulation: SimulationSettings = field(default_factory=SimulationSettings)
    scaling: ScalingSettings = field(default_factory=ScalingSettings)

    # resolved objects, not part of the schema
    def speed_vector(self) -> SpeedVector:
        return SpeedVector(self.speeds)

    def coefficient_set(self) -> CoefficientSet:
        m = len(self.speeds)
        if isinstance(self.coefficients, str):
            return load_coefficients(self.coefficients, m)
        return coefficients_from_records(self.coefficients, m)

    def initial_data(self) -> InitialDataSet:
        return InitialDataSet.from_spec(self.data)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


_REQUIRED = {"speeds", "coefficients", "data"}


def _typed(value, tp, path: str):
    """Check ``value`` against a (simple) annotation and convert numbers."""
    text = str(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigInvariantError(f"{path}: expected an object")
        return _build(tp, value, path)
    if value is None:
        if "None" in text:
            return None
        raise ConfigInvariantError(f"{path}: null is not allowed")
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigInvariantError(f"{path}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigInvariantError(f"{path}: expected an integer")
        return value
    if tp is float or text.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigInvariantError(f"{path}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigInvariantError(f"{path}: expected a string")
        return value
    if text.startswith("list[float]"):
        if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
            raise ConfigInvariantError(f"{path}: expected a list of numbers")
        return [float(v) for v in value]
    return value


def _build(cls, raw: dict, path: str):
    hints = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(hints))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise UnknownConfigKey(f"unknown configuration key '{where}'")
    kwargs = {}
    types = _annotations(cls)
    for name in raw:
        kwargs[name] = _typed(raw[name], types[name], f"{path}.{name}" if path else name)
    return cls(**kwargs)


def _annotations(cls) -> dict[str, Any]:
    return typing.get_type_hints(cls)


def parse_config(path: str | Path, overrides: dict[str, Any] | None = None) -> ProblemConfig:
    """Strict parse of a JSON problem file.

    Relative file references are resolved against the file's directory so
    the echoed configuration is self-contained.  Raises a distinct
    :class:`ConfigError` subclass for each failure kind.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigFileMissing(f"configuration file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigSyntaxError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigSyntaxError(f"{path}: top level must be an object")
    raw.update(overrides or {})
    missing = sorted(_REQUIRED - set(raw))
    if missing:
        raise ConfigInvariantError(f"missing required key '{missing[0]}'")
    coeffs = raw.get("coefficients")
    if not isinstance(coeffs, (str, list)):
        raise ConfigInvariantError("coefficients: expected a file name or a list of records")
    if not isinstance(raw.get("data"), dict):
        raise ConfigInvariantError("data: expected an object")
    cfg = _build(ProblemConfig, raw, "")
    base = path.resolve().parent
    if isinstance(cfg.coefficients, str):
        ref = Path(cfg.coefficients)
        ref = ref if ref.is_absolute() else base / ref
        if not ref.is_file():
            raise ConfigFileMissing(f"coefficients: referenced file not found: {ref}")
        cfg.coefficients = str(ref)
    out = Path(cfg.output_dir)
    cfg.output_dir = str(out if out.is_absolute() else base / out)
    validate(cfg)
    return cfg


def validate(cfg: ProblemConfig) -> None:
    c = cfg.speeds
    if not c:
        raise ConfigInvariantError("speeds: at least one component is required")
    if any(not x > 0 for x in c):
        raise ConfigInvariantError("speeds: wave speeds must be positive")
    if any(b <= a for a, b in zip(c, c[1:])):
        raise ConfigInvariantError(
            f"speeds: must be strictly increasing, 0 < c_1 < c_2 < ... < c_m (got {c})"
        )
    try:
        coeffs = cfg.coefficient_set()
        data = cfg.initial_data()
    except (KeyError, TypeError) as exc:
        raise ConfigInvariantError(f"invalid coefficients or data: {exc}") from exc
    if data.m != len(c):
        raise ConfigInvariantError(f"data: {data.m} components given for {len(c)} speeds")
    if not cfg.allow_unstructured:
        if not check_symmetry(coeffs):
            raise ConfigInvariantError(
                "coefficients violate the symmetry A_l^{i,ab} = A_i^{l,ab} = A_i^{l,ba}; "
                "set allow_unstructured to override"
            )
        if not check_structure(coeffs):
            raise ConfigInvariantError(
                "coefficients couple other components into the quadratic terms; "
                "set allow_unstructured to override"
            )


def write_resolved(cfg: ProblemConfig, out: Path) -> Path:
    path = out / "resolved_config.json"
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# pipelines


def _tables(cfg: ProblemConfig, data: InitialDataSet, speeds: SpeedVector) -> list[R.RadiationTable]:
    rs = cfg.radiation
    return [
        R.build_radiation_table(data, i, rs.rho_min, rs.n_rho, rs.n_omega, speeds[i],
                                n_line=rs.n_line, n_abel=rs.n_abel)
        for i in range(1, speeds.m + 1)
    ]


def run_check_null(cfg: ProblemConfig, out: Path) -> dict:
    coeffs, speeds = cfg.coefficient_set(), cfg.speed_vector()
    report: dict[str, Any] = {"forms": {}}
    lines = []
    with open(out / "null_witnesses.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["form", "mode", "i", "l", "theta", "sign", "value"])
        for kind in FORM_KINDS:
            entry = {}
            for mode in ("strong", "standard"):
                rep = check_null(coeffs, speeds, kind, mode)
                entry[mode] = {"holds": rep.holds, "witnesses": len(rep.witnesses)}
                for (i, l, th, sg, val) in rep.witnesses:
                    wr.writerow([kind, mode, i, l, fmt(th), sg, fmt(val)])
                lines.append(f"{kind} {mode}: {'holds' if rep.holds else 'fails'}")
            report["forms"][kind] = entry
    report["symmetric"] = check_symmetry(coeffs)
    report["structured"] = check_structure(coeffs)
    report["small"] = check_smallness(coeffs, speeds, cfg.gradient_bound)
    report["summary"] = lines
    return report


def run_radiation(cfg: ProblemConfig, out: Path) -> dict:
    speeds, data = cfg.speed_vector(), cfg.initial_data()
    report = {"tables": []}
    for tab in _tables(cfg, data, speeds):
        name = f"radiation_{tab.i}.csv"
        tab.to_csv(out / name)
        report["tables"].append({"component": tab.i, "file": name,
                                 "decay_constants": [fmt(c) for c in tab.decay_constants]})
    return report


def run_lifespan(cfg: ProblemConfig, out: Path) -> dict:
    coeffs, speeds, data = cfg.coefficient_set(), cfg.speed_vector(), cfg.initial_data()
    est = L.compute_H(coeffs, speeds, _tables(cfg, data, speeds), refine=cfg.lifespan.refine)
    emp = cfg.lifespan.empirical_T or []
    rows = []
    with open(out / "lifespan.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["epsilon", "H", "predicted_T", "empirical_T", "eps2_log1pT", "status"])
        for k, eps in enumerate(cfg.lifespan.epsilons):
            pred = L.predict_lifespan(est.H, eps)
            T_e = emp[k] if k < len(emp) else math.nan
            e2 = eps * eps * math.log1p(T_e) if math.isfinite(T_e) else math.nan
            status = "unbounded" if pred.unbounded else "bounded"
            wr.writerow([fmt(eps), fmt(est.H), fmt(pred.predicted_T), fmt(T_e), fmt(e2), status])
            rows.append({"epsilon": eps, "predicted_T": fmt(pred.predicted_T), "status": status})
    return {"H": fmt(est.H), "per_component": [fmt(h) for h in est.per_component],
            "argmax": [[fmt(a), fmt(b)] for a, b in est.argmax], "on_boundary": est.on_boundary,
            "rows": rows}


def run_riccati(cfg: ProblemConfig, out: Path) -> dict:
    rc = cfg.riccati
    amp, ex = rc.forcing.amplitude, rc.forcing.exponent
    q = (lambda t: amp * (1.0 + t) ** ex) if amp != 0 else None
    p = L.RiccatiProblem(rc.alpha, q, rc.T0, rc.w0, rc.T1)
    res = L.riccati_integrate(p, tol=rc.tolerance)
    ts = np.linspace(p.T0, float(res.t[-1]), rc.n_samples)
    ws = np.interp(ts, res.t, res.w)
    qs = p.q_star()
    with open(out / "riccati.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "w", "bound"])
        for t, w in zip(ts, ws):
            try:
                b = L.riccati_bound(p, float(t), qs)
            except DomainError:
                b = math.nan
            wr.writerow([fmt(t), fmt(w), fmt(b)])
    rep = {"blowup": res.blowup, "T_blowup": None if res.T_blowup is None else fmt(res.T_blowup),
           "flagged": res.flagged, "q_star": fmt(qs)}
    if q is None:
        rep["closed_form_T"] = fmt(L.riccati_blowup_time(p.alpha, p.w0, p.T0))
    return rep


def _sim_config(cfg: ProblemConfig, epsilon: float | None = None) -> S.SimConfig:
    s = cfg.simulation
    return S.SimConfig(
        cfg.coefficient_set(), cfg.speed_vector(), cfg.initial_data(),
        epsilon=s.epsilon if epsilon is None else epsilon, extent=s.extent, nx=s.nx, cfl=s.cfl,
        t_max=s.t_max, blowup_threshold=s.blowup_threshold, curvature_threshold=s.curvature_threshold,
        output_every=s.output_every, geometry=s.geometry, window=s.window, probes=tuple(s.probes),
        sensitivity=tuple(s.sensitivity), order=s.order,
        band=None if s.band is None else tuple(s.band), baseline_time=s.baseline_time,
        extrapolate=s.extrapolate, log_cadence=s.log_cadence,
    )


def run_simulate(cfg: ProblemConfig, out: Path) -> dict:
    sc = _sim_config(cfg)
    res = S.run(sc)
    res.write_diagnostics(out / "diagnostics.csv")
    st = res.final_state
    if sc.geometry == "cartesian":
        for i in range(1, sc.speeds.m + 1):
            S.snapshot(st, sc, i).write(out / f"snapshot_{i}.bin")
    else:
        r = sc.h * (np.arange(sc.nx) + 0.5) + st.r0
        with open(out / "profile.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["r"] + [f"u{i}" for i in range(1, sc.speeds.m + 1)]
                        + [f"u{i}_t" for i in range(1, sc.speeds.m + 1)])
            for k in range(sc.nx):
                wr.writerow([fmt(r[k])] + [fmt(x) for x in st.u[:, k]] + [fmt(x) for x in st.v[:, k]])
    if res.outcome == "unstable":
        raise S.SingularSystem(res.message)
    return {"outcome": res.outcome, "T_emp": fmt(res.T_emp),
            "T_blowup": None if res.T_blowup is None else fmt(res.T_blowup),
            "threshold_times": {fmt(k): fmt(v) for k, v in res.threshold_times.items()},
            "region_max": {str(k): fmt(v) for k, v in res.region_max.items()}, "message": res.message}


def run_scaling(cfg: ProblemConfig, out: Path) -> dict:
    coeffs, speeds, data = cfg.coefficient_set(), cfg.speed_vector(), cfg.initial_data()
    est = L.compute_H(coeffs, speeds, _tables(cfg, data, speeds), refine=cfg.lifespan.refine)
    rows = S.scaling_study(_sim_config(cfg), cfg.scaling.epsilons, est.H, cfg.scaling.tol_scaling,
                           workers=thread_count())
    S.write_scaling_csv(rows, out / "scaling.csv")
    return {"H": fmt(est.H), "rows": len(rows), "flagged": [r.epsilon for r in rows if r.flagged],
            "invalid": [r.epsilon for r in rows if not r.valid]}


PIPELINES = {
    "check-null": run_check_null,
    "radiation": run_radiation,
    "lifespan": run_lifespan,
    "riccati": run_riccati,
    "simulate": run_simulate,
    "scaling-study": run_scaling,
}


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise ConfigInvariantError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc


def dispatch(subcommand: str, cfg: ProblemConfig) -> tuple[int, dict]:
    """Run one pipeline; returns the exit status and the report written to ``report.json``."""
    if subcommand not in PIPELINES:
        raise DomainError(f"unknown subcommand {subcommand!r}")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out)
    try:
        body = PIPELINES[subcommand](cfg, out)
        status, report = 0, {"status": "ok", **body}
    except (R.NumericalError, S.SingularSystem, FloatingPointError) as exc:
        status, report = 2, {"status": "numerical-error", "error": str(exc)}
    except DomainError as exc:
        status, report = 1, {"status": "domain-error", "error": str(exc)}
    report["subcommand"] = subcommand
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return status, report


def main(argv: Sequence[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="qwlifespan", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("config", help="JSON problem file")
    ap.add_argument("--output-dir", help="override output_dir from the file")
    ap.add_argument("--allow-unstructured", action="store_true",
                    help="run even if the symmetry or structure checks fail")
    args = ap.parse_args(argv)
    overrides: dict[str, Any] = {}
    if args.allow_unstructured:
        overrides["allow_unstructured"] = True
    if args.output_dir:
        overrides["output_dir"] = str(Path(args.output_dir).resolve())
    try:
        cfg = parse_config(args.config, overrides)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    status, report = dispatch(args.subcommand, cfg)
    for line in report.get("summary", []):
        print(line)
    if status:
        print(f"error: {report.get('error')}", file=sys.stderr)
    else:
        print(f"{args.subcommand}: ok ({cfg.output_dir})")
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
