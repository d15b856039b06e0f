"""Event-level Monte Carlo of the heralded five-detector experiment.

Detector map (signal photon outcome -> SPCM):

    1: v1    2: h1    3: v0    4: h0    5: herald (idler)

Each (setting, repeat) cell draws its own generator from
``SeedSequence(seed, spawn_key=(repeat, setting))`` so cells are independent
and the result does not depend on evaluation order.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from numba import njit

from . import protocol
from .protocol import (
    CHSH_SIGNS,
    AngleQuad,
    Convention,
    Normalization,
    ProbVector,
    Scheme,
    SchemeConfig,
    _ParseEnum,
)
from .qcore import ContractViolation, DegenerateStateError, DomainError

N_DETECTORS = 5
HERALD = 5
# detector j (1..4) <- basis label
DETECTOR_LABELS = {1: "v1", 2: "h1", 3: "v0", 4: "h0"}
# sign of each detector's coincidences in E
DETECTOR_SIGNS = np.array([1.0, -1.0, -1.0, 1.0])


class Denominator(_ParseEnum):
    HERALDS = "heralds"
    DETECTED = "detected"
    PAPER_SUM = "paper_sum"


class ErrorModel(_ParseEnum):
    REPEATS = "repeats"
    POISSON = "poisson"


@dataclass(frozen=True)
class ExperimentConfig:
    """One simulated acquisition. Rates in events/s, times in seconds.

    The angle fields default to ``None``, meaning the optimizer quad for the
    lossless entangled probe under the chosen scheme and convention.
    """

    pair_rate: float = 4.45e5
    noise_rate: float = 0.0
    duration: float = 1.0
    coincidence_window: float = 2e-9
    optical_delay: float = 0.5e-9
    eta: float = 1.0
    depolarization_p: float = 0.0
    scheme: Scheme = Scheme.NON_INTERFEROMETRIC
    convention: Convention = Convention.ROTATION
    normalization: Normalization = Normalization.PER_TRIAL
    denominator: Denominator = Denominator.HERALDS
    error_model: ErrorModel = ErrorModel.REPEATS
    theta: Optional[float] = None
    delta: Optional[float] = None
    theta_p: Optional[float] = None
    delta_p: Optional[float] = None
    herald_efficiency: float = 0.25
    # scales every C(j,5) and hence E under the heralds denominator
    signal_efficiency: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name, enum_cls in (
            ("scheme", Scheme),
            ("convention", Convention),
            ("normalization", Normalization),
            ("denominator", Denominator),
            ("error_model", ErrorModel),
        ):
            object.__setattr__(self, name, enum_cls.parse(getattr(self, name)))
        for name in ("pair_rate", "noise_rate"):
            if not getattr(self, name) >= 0:
                raise DomainError(f"{name} must be >= 0, got {getattr(self, name)!r}")
        for name in ("duration", "coincidence_window"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be > 0, got {getattr(self, name)!r}")
        if not self.optical_delay >= 0:
            raise DomainError(f"optical_delay must be >= 0, got {self.optical_delay!r}")
        for name in ("eta", "depolarization_p", "herald_efficiency", "signal_efficiency"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"{name} must lie in [0, 1], got {v!r}")
        angles = [self.theta, self.delta, self.theta_p, self.delta_p]
        if any(a is None for a in angles) and not all(a is None for a in angles):
            raise DomainError("set all four of theta, delta, theta_p, delta_p or none of them")
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")

    @property
    def scheme_config(self) -> SchemeConfig:
        return SchemeConfig(self.scheme, self.convention, self.normalization)

    @property
    def quad(self) -> AngleQuad:
        if self.theta is None:
            return protocol.reference_quad(SchemeConfig(self.scheme, self.convention))
        return AngleQuad(self.theta, self.delta, self.theta_p, self.delta_p)

    def with_quad(self, quad: AngleQuad) -> "ExperimentConfig":
        return replace(self, theta=quad.theta, delta=quad.delta, theta_p=quad.theta_p, delta_p=quad.delta_p)

    def to_dict(self) -> dict:
        return {k: (str(v) if isinstance(v, enum.Enum) else v) for k, v in asdict(self).items()}


CONFIG_FIELDS = tuple(f.name for f in fields(ExperimentConfig))


@dataclass(frozen=True, eq=False)
class EventStream:
    """Sorted detector-hit timestamps (seconds) for one detector."""

    detector_id: int
    timestamps: np.ndarray

    def __init__(self, detector_id: int, timestamps, strict: bool = True):
        if not 1 <= detector_id <= N_DETECTORS:
            raise ValueError(f"detector_id must be in 1..{N_DETECTORS}, got {detector_id}")
        ts = np.array(timestamps, dtype=float).reshape(-1)
        ts.setflags(write=False)
        object.__setattr__(self, "detector_id", int(detector_id))
        object.__setattr__(self, "timestamps", ts)
        d = np.diff(ts)
        if np.any(d < 0) or (strict and np.any(d == 0)):
            raise ContractViolation(
                f"detector {detector_id} timestamps are not {'strictly ' if strict else ''}increasing"
            )

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass(frozen=True)
class CoincidenceTable:
    """C(j, 5) for j = 1..4 plus singles N1..N5 for one setting."""

    coincidences: tuple[int, int, int, int]
    singles: tuple[int, int, int, int, int]

    def __post_init__(self):
        c = tuple(int(x) for x in self.coincidences)
        n = tuple(int(x) for x in self.singles)
        if len(c) != 4 or len(n) != N_DETECTORS:
            raise ValueError("need 4 coincidence counts and 5 singles counts")
        if min(c + n) < 0:
            raise ValueError("counts must be non-negative")
        for j in range(4):
            if c[j] > min(n[j], n[4]):
                raise ValueError(f"C({j + 1},5) = {c[j]} exceeds min(N{j + 1}, N5)")
        object.__setattr__(self, "coincidences", c)
        object.__setattr__(self, "singles", n)

    @property
    def heralds(self) -> int:
        return self.singles[4]

    def C(self, j: int) -> int:
        return self.coincidences[j - 1]


@dataclass(frozen=True)
class SEstimate:
    S_hat: float
    sigma: float
    E_hat: tuple[float, float, float, float]
    E_sigma: tuple[float, float, float, float]
    S_samples: tuple[float, ...]
    tables: tuple[tuple[CoincidenceTable, ...], ...]  # [repeat][setting]
    quad: AngleQuad
    denominator: Denominator
    error_model: ErrorModel

    @property
    def repeats(self) -> int:
        return len(self.S_samples)

    @property
    def sigma_flagged(self) -> bool:
        """True when sigma carries no information (a single repeat without Poisson errors)."""
        return self.repeats == 1 and self.error_model is ErrorModel.REPEATS


# --- generation -------------------------------------------------------------


def cell_rng(seed: int, setting: int, repeat: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(repeat), int(setting))))


def analytic_probabilities(cfg: ExperimentConfig, theta: float, delta: float) -> ProbVector:
    """Per-trial outcome probabilities of the noiseless analytic pipeline."""
    rho = protocol.scene_state(cfg.eta, cfg.depolarization_p)
    out = protocol.receive(rho, theta, delta, SchemeConfig(cfg.scheme, cfg.convention))
    return protocol.probabilities(out, Normalization.PER_TRIAL)


def detector_probabilities(cfg: ExperimentConfig, theta: float, delta: float) -> np.ndarray:
    """Detection probabilities for detectors 1..4 of one emitted signal photon."""
    p = analytic_probabilities(cfg, theta, delta)
    return cfg.signal_efficiency * np.array([p.v1, p.h1, p.v0, p.h0])


def noise_detectors(scheme: Scheme) -> tuple[int, ...]:
    """Detectors reached by background light under each receiver."""
    return (1, 2) if Scheme.parse(scheme) is Scheme.NON_INTERFEROMETRIC else (1, 2, 3, 4)


def _make_strict(ts: np.ndarray) -> np.ndarray:
    # exact float ties are astronomically rare; nudge by one ulp when they occur
    ts = np.sort(ts)
    if ts.size > 1 and np.any(np.diff(ts) <= 0):
        for i in np.flatnonzero(np.diff(ts) <= 0) + 1:
            if ts[i] <= ts[i - 1]:
                ts[i] = np.nextafter(ts[i - 1], np.inf)
    return ts


def generate_events(cfg: ExperimentConfig, setting: int = 0, repeat: int = 0) -> tuple[EventStream, ...]:
    """Five event streams for one (setting, repeat) cell, detectors 1..5 in order."""
    if not 0 <= setting < 4:
        raise ValueError(f"setting index must be 0..3, got {setting}")
    rng = cell_rng(cfg.seed, setting, repeat)
    theta, delta = cfg.quad.settings[setting]
    probs = detector_probabilities(cfg, theta, delta)

    n_pairs = rng.poisson(cfg.pair_rate * cfg.duration)
    t_pairs = np.sort(rng.uniform(0.0, cfg.duration, n_pairs))
    heralded = rng.random(n_pairs) < cfg.herald_efficiency
    # outcome 0..3 -> detectors 1..4, 4 -> lost
    outcome = np.searchsorted(np.cumsum(probs), rng.random(n_pairs), side="right")

    routes = noise_detectors(cfg.scheme)
    n_noise = rng.poisson(cfg.noise_rate * cfg.duration)
    t_noise = rng.uniform(0.0, cfg.duration, n_noise)
    noise_det = np.asarray(routes)[rng.integers(0, len(routes), n_noise)]

    t_signal = t_pairs + cfg.optical_delay
    streams = []
    for det in range(1, 5):
        ts = np.concatenate([t_signal[outcome == det - 1], t_noise[noise_det == det]])
        streams.append(EventStream(det, _make_strict(ts)))
    streams.append(EventStream(HERALD, _make_strict(t_pairs[heralded])))
    return tuple(streams)


# --- coincidence counting ---------------------------------------------------


@njit(cache=True)
def _greedy_pairs(a, b, half):
    # both inputs sorted; each event used at most once
    i = 0
    j = 0
    count = 0
    na = a.shape[0]
    nb = b.shape[0]
    while i < na and j < nb:
        d = a[i] - b[j]
        if d < -half:
            i += 1
        elif d > half:
            j += 1
        else:
            count += 1
            i += 1
            j += 1
    return count


def count_pairs(a, b, window: float) -> int:
    """Greedy in-order matching of hits with |t_a - t_b| <= window/2."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    for name, arr in (("first", a), ("second", b)):
        if arr.size > 1 and np.any(np.diff(arr) < 0):
            raise ContractViolation(f"{name} stream is not sorted")
    return int(_greedy_pairs(a, b, window / 2))


def _by_detector(streams) -> dict[int, np.ndarray]:
    if isinstance(streams, Mapping):
        items = streams.items()
    else:
        items = ((s.detector_id, s) for s in streams)
    out = {}
    for det, s in items:
        out[int(det)] = s.timestamps if isinstance(s, EventStream) else np.asarray(s, float)
    missing = set(range(1, N_DETECTORS + 1)) - set(out)
    for det in missing:
        out[det] = np.empty(0)
    return out


def count_coincidences(streams: Sequence[EventStream] | Mapping, window: float) -> CoincidenceTable:
    """Count C(j, 5) for j = 1..4 with a two-pointer sweep per detector."""
    if not window > 0:
        raise DomainError(f"coincidence window must be > 0, got {window!r}")
    ts = _by_detector(streams)
    herald = ts[HERALD]
    coinc = tuple(count_pairs(ts[j], herald, window) for j in range(1, 5))
    singles = tuple(len(ts[j]) for j in range(1, N_DETECTORS + 1))
    return CoincidenceTable(coinc, singles)


# --- estimators -------------------------------------------------------------


def _denominator_weights(denominator: Denominator) -> tuple[float, float]:
    """(weight on sum of C(j,5), weight on N5)."""
    return {
        Denominator.HERALDS: (0.0, 1.0),
        Denominator.DETECTED: (1.0, 0.0),
        Denominator.PAPER_SUM: (1.0, 1.0),
    }[Denominator.parse(denominator)]


def _denominator(table: CoincidenceTable, denominator) -> float:
    wc, wn = _denominator_weights(denominator)
    d = wc * sum(table.coincidences) + wn * table.heralds
    if d <= 0:
        raise DegenerateStateError(f"zero {Denominator.parse(denominator).value} denominator")
    return float(d)


def estimate_probabilities(table: CoincidenceTable, denominator=Denominator.HERALDS) -> ProbVector:
    """Probabilities of the labelled outcomes from coincidence counts.

    ``heralds`` divides by N5 (per trial), ``detected`` by the sum of the
    four coincidence counts, ``paper_sum`` by that sum plus N5.
    """
    d = _denominator(table, denominator)
    c1, c2, c3, c4 = table.coincidences
    return ProbVector(h0=c4 / d, h1=c2 / d, v0=c3 / d, v1=c1 / d)


def estimate_E(table: CoincidenceTable, denominator=Denominator.HERALDS) -> tuple[float, float]:
    """Correlation estimate and its Poisson-propagated standard error."""
    d = _denominator(table, denominator)
    wc, wn = _denominator_weights(denominator)
    c = np.array(table.coincidences, dtype=float)
    e = float(DETECTOR_SIGNS @ c) / d
    grad_c = (DETECTOR_SIGNS - e * wc) / d
    grad_n = -e * wn / d
    var = float(grad_c**2 @ c + grad_n**2 * table.heralds)
    return e, math.sqrt(var)


def simulate_cell(cfg: ExperimentConfig, setting: int, repeat: int) -> CoincidenceTable:
    return count_coincidences(generate_events(cfg, setting, repeat), cfg.coincidence_window)


def estimate_S(cfg: ExperimentConfig, repeats: int = 1) -> SEstimate:
    """Run the four settings ``repeats`` times and estimate S with its spread.

    ``sigma`` is the sample standard deviation of S over repeats, or the
    RMS Poisson-propagated per-repeat error under ``error_model='poisson'``.
    """
    if repeats < 1:
        raise DomainError(f"repeats must be >= 1, got {repeats}")
    tables = tuple(tuple(simulate_cell(cfg, s, r) for s in range(4)) for r in range(repeats))
    e = np.empty((repeats, 4))
    e_err = np.empty((repeats, 4))
    for r, row in enumerate(tables):
        for s, table in enumerate(row):
            e[r, s], e_err[r, s] = estimate_E(table, cfg.denominator)
    s_samples = np.abs(e @ np.array(CHSH_SIGNS))

    if cfg.error_model is ErrorModel.POISSON:
        sigma = float(np.sqrt(np.mean((e_err**2).sum(axis=1))))
        e_sigma = np.sqrt(np.mean(e_err**2, axis=0))
    elif repeats > 1:
        sigma = float(np.std(s_samples, ddof=1))
        e_sigma = np.std(e, axis=0, ddof=1)
    else:
        sigma = 0.0
        e_sigma = np.zeros(4)
    return SEstimate(
        S_hat=float(s_samples.mean()),
        sigma=sigma,
        E_hat=tuple(float(x) for x in e.mean(axis=0)),
        E_sigma=tuple(float(x) for x in e_sigma),
        S_samples=tuple(float(x) for x in s_samples),
        tables=tables,
        quad=cfg.quad,
        denominator=cfg.denominator,
        error_model=cfg.error_model,
    )


def estimate_S_from_tables(tables: Sequence[CoincidenceTable], quad: AngleQuad, denominator=Denominator.HERALDS) -> SEstimate:
    """S from four externally measured tables; errors are Poisson-propagated."""
    if len(tables) != 4:
        raise ValueError(f"need one table per setting (4), got {len(tables)}")
    denominator = Denominator.parse(denominator)
    es, errs = zip(*(estimate_E(t, denominator) for t in tables))
    s = protocol.chsh_from_correlations(es)
    return SEstimate(
        S_hat=s,
        sigma=math.sqrt(sum(x**2 for x in errs)),
        E_hat=tuple(es),
        E_sigma=tuple(errs),
        S_samples=(s,),
        tables=(tuple(tables),),
        quad=quad,
        denominator=denominator,
        error_model=ErrorModel.POISSON,
    )


# --- noise level ------------------------------------------------------------


def expected_signal_rate_12(cfg: ExperimentConfig) -> float:
    """Mean rate of probe photons at detectors 1 and 2, averaged over the quad."""
    per_setting = [detector_probabilities(cfg, th, de)[:2].sum() for th, de in cfg.quad.settings]
    return cfg.pair_rate * float(np.mean(per_setting))


def signal_fraction_to_noise_rate(cfg: ExperimentConfig, fraction: float) -> float:
    """Background rate at which probe photons make up ``fraction`` of detector 1+2 hits."""
    if not 0.0 < fraction <= 1.0:
        raise DomainError(f"signal fraction must lie in (0, 1], got {fraction!r}")
    noise_12 = expected_signal_rate_12(cfg) * (1.0 - fraction) / fraction
    # background is split evenly over the detectors it reaches
    return noise_12 * len(noise_detectors(cfg.scheme)) / 2


def snr(fraction: float) -> tuple[float, float]:
    """(SNR, SNR in dB) for a signal fraction."""
    if not 0.0 < fraction <= 1.0:
        raise DomainError(f"signal fraction must lie in (0, 1], got {fraction!r}")
    if fraction == 1.0:
        return math.inf, math.inf
    ratio = fraction / (1.0 - fraction)
    return ratio, 10.0 * math.log10(ratio)


# --- time-tag files ---------------------------------------------------------


def write_event_file(streams: Sequence[EventStream], path) -> None:
    """Write ``detector_id<TAB>timestamp_ns`` lines sorted by time, then detector."""
    dets = np.concatenate([np.full(len(s), s.detector_id) for s in streams]).astype(np.int64)
    ns = np.concatenate([np.rint(s.timestamps * 1e9) for s in streams]).astype(np.int64)
    order = np.lexsort((dets, ns))
    path = Path(path)
    with path.open("w", newline="\n") as fh:
        for d, t in zip(dets[order], ns[order]):
            fh.write(f"{d}\t{t}\n")


def read_time_tags(path) -> dict[int, np.ndarray]:
    """Parse a ``detector_id<TAB>timestamp_ns`` dump into integer-ns arrays per detector."""
    path = Path(path)
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'detector_id<TAB>timestamp_ns'")
            det, t = int(parts[0]), int(parts[1])
            if not 1 <= det <= N_DETECTORS:
                raise ValueError(f"{path}:{lineno}: detector id {det} not in 1..{N_DETECTORS}")
            rows.append((det, t))
    arr = np.array(rows, dtype=np.int64).reshape(-1, 2)
    if arr.size and np.any(np.diff(arr[:, 1]) < 0):
        raise ContractViolation(f"{path}: records are not sorted by timestamp")
    return {det: arr[arr[:, 0] == det, 1] for det in range(1, N_DETECTORS + 1)}


def read_event_file(path) -> tuple[EventStream, ...]:
    """Time-tag dump as five streams in seconds.

    Integer-nanosecond stamps may repeat within a detector, so these streams
    are only required to be non-decreasing.
    """
    tags = read_time_tags(path)
    return tuple(EventStream(det, tags[det] * 1e-9, strict=False) for det in range(1, N_DETECTORS + 1))


def replay_table(path, window: float) -> CoincidenceTable:
    """Coincidence table of a time-tag dump, counted on the integer-ns grid."""
    tags = read_time_tags(path)
    ns = {det: t.astype(np.float64) for det, t in tags.items()}
    # window in ns keeps boundary comparisons exact for integer stamps
    return count_coincidences(ns, window * 1e9)
