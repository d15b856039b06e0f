"""Regenerate the reflectivity, noise and visibility sweeps plus the angle audit as CSV files.

    python3 scripts/reproduce_figures.py --out results/
"""

import argparse
from dataclasses import dataclass, replace
from pathlib import Path

from polpath_qi import qicli
from polpath_qi.photonsim import ExperimentConfig


@dataclass(frozen=True)
class FigureRun:
    out: Path = Path("results")
    engine: str = "both"
    repeats: int = 5
    duration: float = 0.25
    seed: int = 0


def run(settings: FigureRun) -> list[Path]:
    settings.out.mkdir(parents=True, exist_ok=True)
    base = ExperimentConfig(duration=settings.duration, seed=settings.seed)
    jobs = {
        "sweep_eta": ("eta", base),
        "sweep_noise": ("noise", replace(base, eta=0.7)),
        "sweep_visibility": ("visibility", replace(base, eta=0.7)),
    }
    written = []
    for name, (kind, cfg) in jobs.items():
        spec = qicli.SweepSpec(kind, qicli.DEFAULT_GRIDS[kind], cfg, settings.engine, settings.repeats)
        path = settings.out / f"{name}.csv"
        qicli.emit(qicli.run_sweep(spec), "csv", path)
        written.append(path)
    report = qicli.angle_audit()
    path = settings.out / "angle_audit.csv"
    qicli.emit(report.rows, "csv", path)
    (settings.out / "angle_audit.txt").write_text(report.table() + "\n")
    written += [path, settings.out / "angle_audit.txt"]
    return written


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=FigureRun.out)
    p.add_argument("--engine", choices=qicli.ENGINES, default=FigureRun.engine)
    p.add_argument("--repeats", type=int, default=FigureRun.repeats)
    p.add_argument("--duration", type=float, default=FigureRun.duration)
    p.add_argument("--seed", type=int, default=FigureRun.seed)
    for path in run(FigureRun(**vars(p.parse_args()))):
        print(path)


if __name__ == "__main__":
    main()
