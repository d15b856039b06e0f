"""Sweeps, convention audit and deterministic CSV/JSON output, plus the ``qicli`` command."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import photonsim, protocol
from .photonsim import CONFIG_FIELDS, Denominator, ErrorModel, ExperimentConfig
from .protocol import (
    QUOTED_QUAD,
    AngleQuad,
    Convention,
    Normalization,
    Scheme,
    SchemeConfig,
)
from .qcore import DomainError, make_classical_state

SWEEP_KINDS = ("eta", "noise", "visibility", "angle_audit")
ENGINES = ("analytic", "montecarlo", "both")
AUDIT_ETAS = (1.0, 0.7, 0.3)
CSV_HEADER = (
    "sweep_kind,sweep_value,scheme,convention,normalization,S,S_sigma,"
    "theta,delta,theta_p,delta_p,E1,E2,E3,E4,seed"
)
DEFAULT_GRIDS = {
    "eta": tuple(round(0.1 * i, 10) for i in range(11)),
    "noise": (1.0, 0.5, 0.1, 0.05, 0.03, 0.02),
    "visibility": (1.0, 0.8, 0.6, 0.4, 0.2),
}


@dataclass(frozen=True)
class SweepSpec:
    kind: str
    grid: tuple[float, ...]
    base: ExperimentConfig = field(default_factory=ExperimentConfig)
    engines: str = "analytic"
    repeats: int = 1
    resolution: float = protocol.DEFAULT_RESOLUTION
    fixed_quad: Optional[AngleQuad] = None

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(float(v) for v in self.grid))


@dataclass
class SweepRow:
    sweep_kind: str
    sweep_value: float
    engine: str
    scheme: str
    convention: str
    normalization: str
    S: Optional[float]
    S_sigma: Optional[float]
    quad: AngleQuad
    E: tuple[float, ...]
    seed: Optional[int] = None
    extras: dict = field(default_factory=dict)

    def csv_fields(self) -> list[str]:
        e = list(self.E) + [None] * (4 - len(self.E))
        values = [
            self.sweep_kind,
            _fmt(self.sweep_value),
            self.scheme,
            self.convention,
            self.normalization,
            _fmt(self.S),
            _fmt(self.S_sigma),
            *(_fmt(a) for a in self.quad.as_tuple()),
            *(_fmt(x) for x in e),
            "" if self.seed is None else str(self.seed),
        ]
        return values

    def to_json(self) -> dict:
        out = {
            "sweep_kind": self.sweep_kind,
            "sweep_value": _round12(self.sweep_value),
            "engine": self.engine,
            "scheme": self.scheme,
            "convention": self.convention,
            "normalization": self.normalization,
            "S": _round12(self.S),
            "S_sigma": _round12(self.S_sigma),
            "theta": _round12(self.quad.theta),
            "delta": _round12(self.quad.delta),
            "theta_p": _round12(self.quad.theta_p),
            "delta_p": _round12(self.quad.delta_p),
            "E": [_round12(x) for x in self.E],
            "seed": self.seed,
        }
        out.update({k: _round12(v) if isinstance(v, float) else v for k, v in sorted(self.extras.items())})
        return out


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return f"{float(x):.12g}"


def _round12(x):
    if x is None:
        return None
    x = float(x)
    if not math.isfinite(x):
        return str(x)
    return float(f"{x:.12g}")


# --- sweeps -----------------------------------------------------------------


def validate_spec(spec: SweepSpec) -> None:
    """Reject a bad spec before any computation starts."""
    if spec.kind not in SWEEP_KINDS:
        raise DomainError(f"unknown sweep kind {spec.kind!r}; choose from {SWEEP_KINDS}")
    if spec.engines not in ENGINES:
        raise DomainError(f"unknown engine {spec.engines!r}; choose from {ENGINES}")
    if spec.repeats < 1:
        raise DomainError(f"repeats must be >= 1, got {spec.repeats}")
    if spec.kind == "angle_audit":
        return
    grid = np.array(spec.grid)
    if grid.size == 0:
        raise DomainError("sweep grid is empty")
    if not np.all(np.isfinite(grid)):
        raise DomainError("sweep grid contains non-finite values")
    if spec.kind == "noise":
        bad = grid[(grid <= 0) | (grid > 1)]
        domain = "(0, 1]"
    else:
        bad = grid[(grid < 0) | (grid > 1)]
        domain = "[0, 1]"
    if bad.size:
        raise DomainError(f"{spec.kind} sweep values must lie in {domain}; offending: {bad.tolist()}")
    d = np.diff(grid)
    if d.size and not (np.all(d > 0) or np.all(d < 0)):
        raise DomainError(f"{spec.kind} sweep grid must be strictly monotone")


def _analytic_scene(kind: str, value: float, base: ExperimentConfig):
    """(scene for the analytic engine, noiseless scene, extras) at one grid value."""
    eta, p, q = base.eta, base.depolarization_p, 0.0
    extras = {}
    if kind == "eta":
        eta = value
    elif kind == "noise":
        q = 1.0 - value
        ratio, db = photonsim.snr(value)
        extras.update(signal_fraction=value, snr=ratio, snr_db=db)
    elif kind == "visibility":
        p = protocol.p_for_visibility(value)
        extras.update(visibility=value, depolarization_p=p)
    clean = protocol.scene_state(eta, p, 0.0, base.scheme)
    scene = protocol.scene_state(eta, p, q, base.scheme) if q else clean
    return scene, clean, extras


def _mc_config(kind: str, value: float, base: ExperimentConfig, quad: AngleQuad) -> ExperimentConfig:
    cfg = base.with_quad(quad)
    if kind == "eta":
        return replace(cfg, eta=value)
    if kind == "noise":
        return replace(cfg, noise_rate=photonsim.signal_fraction_to_noise_rate(cfg, value))
    if kind == "visibility":
        return replace(cfg, depolarization_p=protocol.p_for_visibility(value))
    raise DomainError(f"no Monte Carlo engine for sweep kind {kind!r}")


def run_sweep(spec: SweepSpec) -> list[SweepRow]:
    """One row per grid value and engine, in grid order."""
    validate_spec(spec)
    if spec.kind == "angle_audit":
        return angle_audit(spec.base.scheme_config, spec.resolution).rows
    base = spec.base
    scfg = base.scheme_config
    rows = []
    for value in spec.grid:
        scene, clean, extras = _analytic_scene(spec.kind, value, base)
        if spec.fixed_quad is not None:
            quad = spec.fixed_quad
        else:
            quad = protocol.optimize_angles(clean, scfg, spec.resolution).quad
        if spec.engines in ("analytic", "both"):
            if spec.fixed_quad is None and scene is not clean:
                opt = protocol.optimize_angles(scene, scfg, spec.resolution)
                a_quad, s_val = opt.quad, opt.S
            else:
                a_quad, s_val = quad, protocol.chsh_S(scene, quad, scfg)
            es = protocol.correlations(scene, a_quad, scfg)
            rows.append(
                SweepRow(
                    spec.kind, value, "analytic", scfg.scheme.value, scfg.convention.value,
                    scfg.normalization.value, s_val, None, a_quad, tuple(es), None, dict(extras),
                )
            )
        if spec.engines in ("montecarlo", "both"):
            cfg = _mc_config(spec.kind, value, base, quad)
            est = photonsim.estimate_S(cfg, spec.repeats)
            mc_extras = dict(extras, noise_rate=cfg.noise_rate, repeats=spec.repeats,
                             sigma_flagged=est.sigma_flagged, error_model=cfg.error_model.value)
            rows.append(
                SweepRow(
                    spec.kind, value, "montecarlo", cfg.scheme.value, cfg.convention.value,
                    cfg.denominator.value, est.S_hat, est.sigma, est.quad, est.E_hat, cfg.seed, mc_extras,
                )
            )
    return rows


# --- angle audit ------------------------------------------------------------


@dataclass
class AuditReport:
    rows: list[SweepRow]

    def table(self) -> str:
        lines = [
            f"{'state':<10} {'eta':>4} {'convention':<15} {'normalization':<14} "
            f"{'S(quoted quad)':>14} {'S(optimizer)':>13}  quoted quad optimal?"
        ]
        quoted = [r for r in self.rows if r.sweep_kind == "angle_audit:quoted_quad"]
        opt = {(r.sweep_value, r.convention, r.normalization): r for r in self.rows
               if r.sweep_kind == "angle_audit:optimizer"}
        for r in quoted:
            o = opt[(r.sweep_value, r.convention, r.normalization)]
            flag = "yes" if r.extras["quoted_quad_optimal"] else "NO"
            lines.append(
                f"{'entangled':<10} {r.sweep_value:>4.2g} {r.convention:<15} {r.normalization:<14} "
                f"{r.S:>14.6f} {o.S:>13.6f}  {flag}"
            )
        for r in self.rows:
            if r.sweep_kind == "angle_audit:classical":
                lines.append(
                    f"{'classical':<10} {r.sweep_value:>4.2g} {r.convention:<15} {r.normalization:<14} "
                    f"{'':>14} {r.S:>13.6f}  (at entangled-optimal quad)"
                )
        q = QUOTED_QUAD.as_tuple()
        lines.append("quoted quad (theta, delta, theta', delta') = " + ", ".join(f"{a / math.pi:.4f}pi" for a in q))
        return "\n".join(lines)


def angle_audit(cfg: SchemeConfig | None = None, resolution: float = protocol.DEFAULT_RESOLUTION) -> AuditReport:
    """S at the quoted quad vs the optimizer quad, for every convention x normalization."""
    cfg = cfg or SchemeConfig()
    rows = []
    for eta in AUDIT_ETAS:
        scene = protocol.lossy_state(eta)
        for conv in Convention:
            for norm in Normalization:
                c = SchemeConfig(cfg.scheme, conv, norm)
                opt = protocol.optimize_angles(scene, c, resolution)
                s_quoted = protocol.chsh_S(scene, QUOTED_QUAD, c)
                common = (cfg.scheme.value, conv.value, norm.value)
                rows.append(SweepRow(
                    "angle_audit:quoted_quad", eta, "analytic", *common, s_quoted, None, QUOTED_QUAD,
                    tuple(protocol.correlations(scene, QUOTED_QUAD, c)), None,
                    {"quoted_quad_optimal": bool(s_quoted >= opt.S - 1e-6), "S_optimizer": opt.S},
                ))
                rows.append(SweepRow(
                    "angle_audit:optimizer", eta, "analytic", *common, opt.S, None, opt.quad,
                    tuple(protocol.correlations(scene, opt.quad, c)), None, {},
                ))
    classical = protocol.scene_state(1.0, probe=make_classical_state())
    for conv in Convention:
        for norm in Normalization:
            c = SchemeConfig(cfg.scheme, conv, norm)
            quad = protocol.optimize_angles(protocol.lossy_state(1.0), c, resolution).quad
            rows.append(SweepRow(
                "angle_audit:classical", 1.0, "analytic", cfg.scheme.value, conv.value, norm.value,
                protocol.chsh_S(classical, quad, c), None, quad,
                tuple(protocol.correlations(classical, quad, c)), None, {},
            ))
    return AuditReport(rows)


# --- output -----------------------------------------------------------------


def render(rows: Sequence[SweepRow], fmt: str = "csv") -> str:
    if not rows:
        raise ValueError("nothing to emit: no rows")
    if fmt == "csv":
        return "\n".join([CSV_HEADER] + [",".join(r.csv_fields()) for r in rows]) + "\n"
    if fmt == "json":
        return json.dumps({"rows": [r.to_json() for r in rows]}, indent=2) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def emit(rows: Sequence[SweepRow], fmt: str = "csv", path=None) -> None:
    """Write rows atomically (temp file + rename); ``path=None`` writes to stdout."""
    text = render(rows, fmt)
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        return
    path = Path(path)
    tmp = None
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent if str(path.parent) else ".")
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
        tmp = None
    except OSError as exc:
        raise OSError(f"cannot write output file {str(path)!r}: {exc.strerror or exc}") from exc
    finally:
        if tmp is not None and os.path.exists(tmp):
            os.unlink(tmp)


# --- configuration ----------------------------------------------------------

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_ENUM_FIELDS = {
    "scheme": Scheme,
    "convention": Convention,
    "normalization": Normalization,
    "denominator": Denominator,
    "error_model": ErrorModel,
}
_ANGLE_FIELDS = ("theta", "delta", "theta_p", "delta_p")


def parse_field(name: str, raw: str):
    raw = raw.strip()
    if name in _ENUM_FIELDS:
        return _ENUM_FIELDS[name].parse(raw)
    if name in _ANGLE_FIELDS:
        return None if raw.lower() == "none" else _parse_angle(raw)
    if name == "seed":
        return int(raw, 0)
    return float(raw)


def _parse_angle(raw: str) -> float:
    """Float radians, optionally written as a multiple of pi: ``3pi/16``, ``pi/8``."""
    s = raw.replace(" ", "").lower()
    if "pi" not in s:
        return float(s)
    num, _, den = s.partition("/")
    coef = num.replace("*", "").replace("pi", "")
    coef = 1.0 if coef in ("", "+") else -1.0 if coef == "-" else float(coef)
    return coef * math.pi / (float(den) if den else 1.0)


def read_config(path) -> dict:
    """Flat ``key = value`` file; keys must be ExperimentConfig field names."""
    values = {}
    path = Path(path)
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DomainError(f"{path}:{lineno}: expected key=value")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in CONFIG_FIELDS:
                raise DomainError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = parse_field(key, raw)
            except ValueError as exc:
                raise DomainError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


# --- command line -----------------------------------------------------------


def _shared_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("shared options")
    g.add_argument("--scheme", choices=["ni", "int"], help="receiver: non-interferometric or interferometric")
    g.add_argument("--convention", choices=["rotation", "hwp"], help="waveplate matrix convention")
    g.add_argument("--normalization", choices=["per-trial", "post-selected"], help="analytic probability normalization")
    g.add_argument("--denominator", choices=["heralds", "detected", "quoted-sum"], help="Monte Carlo estimator denominator")
    g.add_argument("--seed", type=lambda s: int(s, 0), help="64-bit seed")
    g.add_argument("--out", help="output path (default: stdout)")
    g.add_argument("--format", choices=["csv", "json"], default="csv")
    g.add_argument("--config", help="key=value file with ExperimentConfig fields; flags override it")
    g.add_argument("--engine", choices=list(ENGINES), default="analytic")
    g.add_argument("--repeats", type=int, default=1, help="Monte Carlo repeats per row")
    g.add_argument("--resolution", type=float, default=protocol.DEFAULT_RESOLUTION,
                   help="optimizer grid spacing in radians (default pi/64)")
    e = p.add_argument_group("experiment fields")
    for name in CONFIG_FIELDS:
        if name in ("scheme", "convention", "normalization", "denominator", "seed"):
            continue
        flag = "--" + name.replace("_", "-")
        if name == "error_model":
            e.add_argument(flag, choices=["repeats", "poisson"])
        else:
            e.add_argument(flag, help=f"ExperimentConfig.{name}")
    return p


def build_parser() -> argparse.ArgumentParser:
    shared = _shared_parser()
    parser = argparse.ArgumentParser(
        prog="qicli",
        description="Quantum illumination with polarization-path entangled single photons.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, kind, helptext in (
        ("sweep-eta", "eta", "S versus object reflectivity"),
        ("sweep-noise", "noise", "S versus signal fraction at fixed reflectivity"),
        ("sweep-visibility", "visibility", "S versus signal-path polarization visibility"),
    ):
        sp = sub.add_parser(name, parents=[shared], help=helptext)
        sp.add_argument("--grid", help=f"comma-separated values (default {','.join(map(str, DEFAULT_GRIDS[kind]))})")
        sp.set_defaults(kind=kind)
    sub.add_parser("angle-audit", parents=[shared], help="quoted angle quad vs optimizer, all conventions")
    sub.add_parser("mc-run", parents=[shared], help="one Monte Carlo CHSH estimate")
    rp = sub.add_parser("replay", parents=[shared], help="coincidences and S from time-tag files")
    rp.add_argument("files", nargs="+", help="one file per setting, in CHSH order (4 for an S estimate)")
    return parser


def config_from_args(args) -> ExperimentConfig:
    values = read_config(args.config) if args.config else {}
    for name in CONFIG_FIELDS:
        raw = getattr(args, name, None)
        if raw is None:
            continue
        values[name] = parse_field(name, str(raw))
    return ExperimentConfig(**values)


def _fixed_quad(cfg: ExperimentConfig) -> Optional[AngleQuad]:
    return None if cfg.theta is None else cfg.quad


def _run(args) -> tuple[list[SweepRow], str]:
    cfg = config_from_args(args)
    if args.command.startswith("sweep-"):
        grid = DEFAULT_GRIDS[args.kind] if not args.grid else tuple(float(v) for v in args.grid.split(","))
        spec = SweepSpec(args.kind, grid, cfg, args.engine, args.repeats, args.resolution, _fixed_quad(cfg))
        rows = run_sweep(spec)
        return rows, _summary(rows)
    if args.command == "angle-audit":
        report = angle_audit(cfg.scheme_config, args.resolution)
        return report.rows, report.table()
    if args.command == "mc-run":
        est = photonsim.estimate_S(cfg, args.repeats)
        row = SweepRow("mc_run", cfg.eta, "montecarlo", cfg.scheme.value, cfg.convention.value,
                       cfg.denominator.value, est.S_hat, est.sigma, est.quad, est.E_hat, cfg.seed,
                       {"noise_rate": cfg.noise_rate, "repeats": args.repeats, "sigma_flagged": est.sigma_flagged})
        return [row], _summary([row])
    if args.command == "replay":
        return _replay(args, cfg)
    raise DomainError(f"unknown command {args.command}")


def _replay(args, cfg: ExperimentConfig) -> tuple[list[SweepRow], str]:
    if len(args.files) not in (1, 4):
        raise DomainError(f"replay needs 1 file or 4 files (one per CHSH setting), got {len(args.files)}")
    tables = [photonsim.replay_table(f, cfg.coincidence_window) for f in args.files]
    quad = cfg.quad
    if len(tables) == 4:
        est = photonsim.estimate_S_from_tables(tables, quad, cfg.denominator)
        s, sigma, es = est.S_hat, est.sigma, est.E_hat
    else:
        e, err = photonsim.estimate_E(tables[0], cfg.denominator)
        s, sigma, es = None, None, (e,)
    extras = {"coincidences": [list(t.coincidences) for t in tables], "singles": [list(t.singles) for t in tables]}
    row = SweepRow("replay", 0.0, "replay", cfg.scheme.value, cfg.convention.value, cfg.denominator.value,
                   s, sigma, quad, tuple(es), None, extras)
    lines = [f"{Path(f).name}: C(j,5)={t.coincidences} N5={t.heralds}" for f, t in zip(args.files, tables)]
    return [row], "\n".join(lines + [_summary([row])])


def _summary(rows: Sequence[SweepRow]) -> str:
    out = []
    for r in rows:
        s = "n/a" if r.S is None else f"{r.S:.6f}"
        if r.S_sigma is not None:
            s += f" +- {r.S_sigma:.6f}"
        extra = ""
        if "snr_db" in r.extras:
            extra = f"  SNR={r.extras['snr']:.4g} ({r.extras['snr_db']:.2f} dB)"
        out.append(f"{r.sweep_kind:<11} {r.sweep_value:<8.4g} {r.engine:<10} S={s}{extra}")
    return "\n".join(out)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        rows, summary = _run(args)
        emit(rows, args.format, args.out)
    except OSError as exc:
        print(f"qicli: error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"qicli: error: {exc}", file=sys.stderr)
        return 2
    if args.out and summary:
        print(summary, file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
