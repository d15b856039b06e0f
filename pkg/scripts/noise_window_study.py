"""Mean Monte Carlo S versus signal fraction for several coincidence windows and estimator denominators.

Unpolarized background cancels in E under the herald denominator; what remains is the share of
heralds whose coincidence slot is taken by a background hit, roughly noise rate x window.
This script makes that dependence visible.

    python3 scripts/noise_window_study.py --windows 2e-9 10e-9 50e-9
"""

import argparse
from dataclasses import dataclass, replace

import numpy as np

from polpath_qi import photonsim


@dataclass(frozen=True)
class Study:
    eta: float = 0.7
    fractions: tuple = (1.0, 0.10, 0.05, 0.03, 0.02)
    windows: tuple = (2e-9,)
    denominators: tuple = ("heralds", "detected", "paper_sum")
    seeds: int = 5
    duration: float = 0.25


def run(study: Study):
    base = photonsim.ExperimentConfig(eta=study.eta, duration=study.duration)
    for window in study.windows:
        for denom in study.denominators:
            cfg = replace(base, coincidence_window=window, denominator=denom)
            for f in study.fractions:
                noisy = replace(cfg, noise_rate=photonsim.signal_fraction_to_noise_rate(cfg, f))
                s = [photonsim.estimate_S(replace(noisy, seed=k)).S_hat for k in range(study.seeds)]
                yield window, denom, f, float(np.mean(s)), float(np.std(s, ddof=1) / np.sqrt(len(s)))


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--eta", type=float, default=Study.eta)
    p.add_argument("--windows", type=float, nargs="+", default=list(Study.windows))
    p.add_argument("--seeds", type=int, default=Study.seeds)
    p.add_argument("--duration", type=float, default=Study.duration)
    a = p.parse_args()
    study = Study(eta=a.eta, windows=tuple(a.windows), seeds=a.seeds, duration=a.duration)
    print("window_ns,denominator,signal_fraction,S_mean,S_sem")
    for window, denom, f, mean, sem in run(study):
        print(f"{window * 1e9:g},{denom},{f:g},{mean:.4f},{sem:.4f}")


if __name__ == "__main__":
    main()
