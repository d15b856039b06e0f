"""Quantum-illumination physics on top of :mod:`polpath_qi.qcore`.

Pipeline for one scene: entangled (or classical) probe -> loss channel
``T(eta)`` -> optional signal-path depolarization -> optional thermal
background -> receiver at setting ``(theta, delta)`` -> basis-state
probabilities -> correlation ``E`` -> CHSH ``S``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .qcore import (
    PAULIS,
    DegenerateStateError,
    DomainError,
    PolPathState,
    conjugate,
    embed_pol,
    make_entangled_state,
)

TSIRELSON = 2 * math.sqrt(2)
DEGENERATE_TRACE = 1e-15
TIE_TOL = 1e-12
DEFAULT_RESOLUTION = math.pi / 64
REFINE_MIN_STEP = 1e-6


class _ParseEnum(str, enum.Enum):
    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        for member in cls:
            if key == member.value or key in member.aliases():
                return member
        raise ValueError(f"unknown {cls.__name__} {value!r}; choose from {[m.value for m in cls]}")

    def aliases(self) -> tuple[str, ...]:
        return ()

    def __str__(self) -> str:
        return self.value


class Scheme(_ParseEnum):
    INTERFEROMETRIC = "interferometric"
    NON_INTERFEROMETRIC = "non_interferometric"

    def aliases(self):
        return {"interferometric": ("int", "i"), "non_interferometric": ("ni",)}[self.value]

    @property
    def short(self) -> str:
        return "int" if self is Scheme.INTERFEROMETRIC else "ni"


class Convention(_ParseEnum):
    ROTATION = "rotation"
    HWP_REFLECTION = "hwp_reflection"

    def aliases(self):
        return {"rotation": ("rot",), "hwp_reflection": ("hwp",)}[self.value]


class Normalization(_ParseEnum):
    PER_TRIAL = "per_trial"
    POST_SELECTED = "post_selected"


@dataclass(frozen=True)
class SchemeConfig:
    scheme: Scheme = Scheme.NON_INTERFEROMETRIC
    convention: Convention = Convention.ROTATION
    normalization: Normalization = Normalization.PER_TRIAL

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme.parse(self.scheme))
        object.__setattr__(self, "convention", Convention.parse(self.convention))
        object.__setattr__(self, "normalization", Normalization.parse(self.normalization))


@dataclass(frozen=True)
class AngleQuad:
    """Measurement settings (theta, delta, theta', delta') in radians."""

    theta: float
    delta: float
    theta_p: float
    delta_p: float

    def __post_init__(self):
        if not all(math.isfinite(a) for a in self.as_tuple()):
            raise DomainError(f"non-finite angle in {self.as_tuple()}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.theta, self.delta, self.theta_p, self.delta_p)

    @property
    def settings(self) -> tuple[tuple[float, float], ...]:
        """The four (theta, delta) pairs in CHSH order."""
        return (
            (self.theta, self.delta),
            (self.theta, self.delta_p),
            (self.theta_p, self.delta),
            (self.theta_p, self.delta_p),
        )

    def canonical(self) -> "AngleQuad":
        """Reduce each angle into [0, pi); every prediction is pi-periodic."""
        return AngleQuad(*(float(np.mod(a, math.pi)) for a in self.as_tuple()))


CHSH_SIGNS = (1.0, -1.0, 1.0, 1.0)
QUOTED_QUAD = AngleQuad(0.0, math.pi / 16, 3 * math.pi / 16, 5 * math.pi / 16)


@dataclass(frozen=True)
class ProbVector:
    h0: float
    h1: float
    v0: float
    v1: float

    def as_array(self) -> np.ndarray:
        return np.array([self.h0, self.h1, self.v0, self.v1])

    @property
    def total(self) -> float:
        return self.h0 + self.h1 + self.v0 + self.v1

    @property
    def correlation(self) -> float:
        return self.h0 + self.v1 - self.h1 - self.v0


# --- channels ---------------------------------------------------------------


def _check_unit_interval(name: str, value: float) -> None:
    if not (0.0 <= value <= 1.0):
        raise DomainError(f"{name} must lie in [0, 1], got {value!r}")


def loss_operator(eta: float) -> np.ndarray:
    """T(eta) = |h><h| (x) |0><0| + sqrt(eta) |v><v| (x) |1><1|."""
    _check_unit_interval("eta", eta)
    return np.diag([1.0, 0.0, 0.0, math.sqrt(eta)]).astype(complex)


def reflectivity_channel(rho: PolPathState, eta: float) -> PolPathState:
    """Apply the object's loss operator; the trace drops and is not restored."""
    t = loss_operator(eta)
    return PolPathState(t @ rho.matrix @ t.conj().T, validate=False)


def lossy_state(eta: float) -> PolPathState:
    return reflectivity_channel(make_entangled_state(), eta)


_DEPOL_KRAUS = tuple(embed_pol(s, which_paths=(1,)) for s in PAULIS)


def depolarizing_channel(rho: PolPathState, p: float) -> PolPathState:
    """Depolarize the polarization of the signal path only, with strength ``p``."""
    _check_unit_interval("p", p)
    m = rho.matrix
    mixed = sum(f @ m @ f.conj().T for f in _DEPOL_KRAUS)
    return PolPathState((p / 3) * mixed + (1 - p) * m, validate=False)


_NOISE_NI = np.diag([0.0, 0.5, 0.0, 0.5]).astype(complex)
_NOISE_INT = np.eye(4, dtype=complex) / 4


def thermal_mixture(rho_signal: PolPathState, q: float, scheme: Scheme | str) -> PolPathState:
    """Convex mixture with unpolarized background at detected-photon fraction ``q``.

    The non-interferometric receiver only sees background on the signal path;
    the interferometric one spreads it over all four outputs.
    """
    _check_unit_interval("noise fraction", q)
    noise = _NOISE_NI if Scheme.parse(scheme) is Scheme.NON_INTERFEROMETRIC else _NOISE_INT
    return PolPathState((1 - q) * rho_signal.matrix + q * noise, validate=False)


def scene_state(
    eta: float = 1.0,
    p: float = 0.0,
    q: float = 0.0,
    scheme: Scheme | str = Scheme.NON_INTERFEROMETRIC,
    probe: PolPathState | None = None,
) -> PolPathState:
    """State arriving at the receiver for a given object/noise scenario."""
    rho = make_entangled_state() if probe is None else probe
    rho = reflectivity_channel(rho, eta)
    if p:
        rho = depolarizing_channel(rho, p)
    if q:
        rho = thermal_mixture(rho, q, scheme)
    return rho


# --- receivers --------------------------------------------------------------


def _pol_ops(angles, convention: Convention) -> np.ndarray:
    """Batched 2x2 waveplate matrices, shape angles.shape + (2, 2)."""
    a = np.asarray(angles, dtype=float)
    if convention is Convention.ROTATION:
        c, s = np.cos(a), np.sin(a)
        rows = [[c, -s], [s, c]]
    else:
        # H(a/2): same magnitudes as R(a), reflected second column
        c, s = np.cos(a), np.sin(a)
        rows = [[c, s], [s, -c]]
    return np.moveaxis(np.array(rows, dtype=complex), (0, 1), (-2, -1))


def receiver_unitaries(thetas, deltas, cfg: SchemeConfig) -> np.ndarray:
    """Receiver operators for broadcast arrays of settings, shape (..., 4, 4)."""
    thetas, deltas = np.broadcast_arrays(np.asarray(thetas, float), np.asarray(deltas, float))
    if cfg.scheme is Scheme.NON_INTERFEROMETRIC:
        pol = _pol_ops(thetas + deltas, cfg.convention)
        path = np.broadcast_to(np.eye(2, dtype=complex), pol.shape)
    else:
        pol = _pol_ops(thetas, cfg.convention)
        path = _pol_ops(deltas, cfg.convention)
    # (A (x) 1)(1 (x) B) = A (x) B
    u = np.einsum("...ij,...kl->...ikjl", pol, path)
    return u.reshape(thetas.shape + (4, 4))


def receiver_interferometric(rho: PolPathState, theta: float, delta: float, conv=Convention.ROTATION) -> PolPathState:
    """Waveplate at ``theta`` on polarization, then at ``delta`` on the path qubit."""
    cfg = SchemeConfig(Scheme.INTERFEROMETRIC, conv)
    return conjugate(receiver_unitaries(theta, delta, cfg), rho, validate=False)


def receiver_non_interferometric(rho: PolPathState, theta: float, delta: float, conv=Convention.ROTATION) -> PolPathState:
    """One waveplate at ``theta + delta`` applied identically on both paths."""
    cfg = SchemeConfig(Scheme.NON_INTERFEROMETRIC, conv)
    return conjugate(receiver_unitaries(theta, delta, cfg), rho, validate=False)


def receive(rho: PolPathState, theta: float, delta: float, cfg: SchemeConfig) -> PolPathState:
    return conjugate(receiver_unitaries(theta, delta, cfg), rho, validate=False)


# --- measurement statistics -------------------------------------------------


def probabilities(rho: PolPathState, normalization=Normalization.PER_TRIAL) -> ProbVector:
    """Labelled basis-state probabilities from the diagonal of ``rho``.

    ``per_trial`` keeps the missing trace as undetected photons;
    ``post_selected`` renormalises to the detected events.
    """
    normalization = Normalization.parse(normalization)
    diag = rho.diagonal
    if normalization is Normalization.POST_SELECTED:
        tr = diag.sum()
        if tr < DEGENERATE_TRACE:
            raise DegenerateStateError(f"cannot post-select a state with trace {tr:.3g}")
        diag = diag / tr
    return ProbVector(*(float(x) for x in diag))


def correlation_E(rho_measured: PolPathState, normalization=Normalization.PER_TRIAL) -> float:
    return probabilities(rho_measured, normalization).correlation


_E_WEIGHTS = np.array([1.0, -1.0, -1.0, 1.0])  # h0, h1, v0, v1


def correlation_grid(rho: PolPathState, thetas, deltas, cfg: SchemeConfig) -> np.ndarray:
    """E(theta, delta) for broadcast arrays of settings."""
    u = receiver_unitaries(thetas, deltas, cfg)
    diag = np.einsum("...ik,kl,...il->...i", u, rho.matrix, u.conj()).real
    if cfg.normalization is Normalization.POST_SELECTED:
        tr = diag.sum(axis=-1)
        if np.any(tr < DEGENERATE_TRACE):
            raise DegenerateStateError("cannot post-select a state with vanishing trace")
        diag = diag / tr[..., None]
    return diag @ _E_WEIGHTS


def correlations(rho_scene: PolPathState, quad: AngleQuad, cfg: SchemeConfig) -> np.ndarray:
    """The four E values of ``quad`` in CHSH order."""
    th, de = np.array(quad.settings).T
    return correlation_grid(rho_scene, th, de, cfg)


def chsh_from_correlations(es) -> float:
    return float(abs(np.dot(CHSH_SIGNS, es)))


def chsh_S(rho_scene: PolPathState, quad: AngleQuad, cfg: SchemeConfig | None = None) -> float:
    """|E(t,d) - E(t,d') + E(t',d) + E(t',d')| for the scene state."""
    cfg = cfg or SchemeConfig()
    return chsh_from_correlations(correlations(rho_scene, quad, cfg))


# --- optimizer --------------------------------------------------------------


@dataclass(frozen=True)
class Optimum:
    quad: AngleQuad
    S: float
    grid_S: float
    config: SchemeConfig = field(default_factory=SchemeConfig)

    def __iter__(self):
        # allows ``quad, s = optimize_angles(...)``
        return iter((self.quad, self.S))


def _grid_search(eg: np.ndarray) -> tuple[tuple[int, int, int, int], float]:
    """Best (i, j, k, l) for S = |E[i,j] - E[i,l] + E[k,j] + E[k,l]|.

    Ties within TIE_TOL resolve to the lexicographically smallest index,
    which is also the lexicographically smallest quad.
    """
    n_t, n_d = eg.shape
    # kl[j, k, l] = E[k, j] + E[k, l] - independent of the first theta
    kl = eg.T[:, :, None] + eg[None, :, :]

    def block(i):
        return np.abs(eg[i][:, None, None] - eg[i][None, None, :] + kl)

    best = np.array([block(i).max() for i in range(n_t)])
    top = best.max()
    i = int(np.argmax(best >= top - TIE_TOL))
    flat = int(np.argmax(block(i).ravel() >= top - TIE_TOL))
    j, k, l = np.unravel_index(flat, (n_d, n_t, n_d))
    return (i, int(j), int(k), int(l)), float(top)


def _refine(score, x0: np.ndarray, step: float, min_step: float = REFINE_MIN_STEP):
    """Coordinate ascent, halving the step when a full sweep makes no progress."""
    x = x0.copy()
    best = score(x)
    while step >= min_step:
        improved = False
        for axis in range(len(x)):
            for sign in (1.0, -1.0):
                trial = x.copy()
                trial[axis] += sign * step
                val = score(trial)
                if val > best:
                    x, best, improved = trial, val, True
                    break
        if not improved:
            step *= 0.5
    return x, best


def optimize_angles(
    rho_scene: PolPathState,
    cfg: SchemeConfig | None = None,
    resolution: float = DEFAULT_RESOLUTION,
) -> Optimum:
    """Maximise CHSH S over [0, pi)^4: grid search then coordinate refinement."""
    cfg = cfg or SchemeConfig()
    if not resolution > 0:
        raise DomainError(f"resolution must be positive, got {resolution!r}")
    n = max(1, int(math.ceil(math.pi / resolution - 1e-9)))
    grid = np.arange(n) * (math.pi / n)
    eg = correlation_grid(rho_scene, grid[:, None], grid[None, :], cfg)
    (i, j, k, l), grid_best = _grid_search(eg)
    x0 = np.array([grid[i], grid[j], grid[k], grid[l]])

    def score(x):
        return chsh_S(rho_scene, AngleQuad(*x), cfg)

    x, best = _refine(score, x0, step=math.pi / n / 2)
    if best <= grid_best:
        x, best = x0, grid_best
    return Optimum(AngleQuad(*x).canonical(), float(best), grid_best, cfg)


@lru_cache(maxsize=None)
def reference_quad(cfg: SchemeConfig = SchemeConfig()) -> AngleQuad:
    """Optimizer quad for the lossless entangled probe under ``cfg``."""
    return optimize_angles(lossy_state(1.0), cfg).quad


# --- visibility -------------------------------------------------------------


def _signal_fringe(rho: PolPathState) -> tuple[float, float]:
    """Mean and amplitude of C(a) = <h| R(a) M R(a)^T |h> on the signal block M."""
    m = rho.path_block(1)
    mean = float(np.real(m[0, 0] + m[1, 1])) / 2
    if mean * 2 < DEGENERATE_TRACE:
        raise DegenerateStateError("signal path carries no population")
    # C(a) = mean + b cos 2a + c sin 2a
    b = float(np.real(m[0, 0] - m[1, 1])) / 2
    c = -float(np.real(m[0, 1]))
    return mean, math.hypot(b, c)


def visibility_of(rho: PolPathState) -> float:
    """Polarization visibility (Cmax - Cmin) / (Cmax + Cmin) on the signal path."""
    mean, amp = _signal_fringe(rho)
    return min(1.0, amp / mean)


# depolarizing visibility falls to 0 at p = 3/4 and rises again beyond it
VISIBILITY_P_MAX = 0.75


@lru_cache(maxsize=4)
def visibility_table(n: int = 301) -> tuple[np.ndarray, np.ndarray]:
    """Tabulated (p, V) for the depolarized lossless probe, p in [0, 3/4]."""
    ps = np.linspace(0.0, VISIBILITY_P_MAX, n)
    vs = np.array([visibility_of(depolarizing_channel(lossy_state(1.0), p)) for p in ps])
    ps.setflags(write=False)
    vs.setflags(write=False)
    return ps, vs


def p_for_visibility(v: float) -> float:
    """Invert the tabulated p -> V map by monotone linear interpolation."""
    _check_unit_interval("visibility", v)
    ps, vs = visibility_table()
    return float(np.interp(v, vs[::-1], ps[::-1]))
