"""Dense linear algebra on the polarization (x) path space of a single photon.

The four basis states are ordered ``(h0, h1, v0, v1)``: polarization is the
slow index, path the fast one, so ``index = 2 * pol + path``. Path 0 is the
reference arm and path 1 the signal arm. Indices here are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

HERMITIAN_TOL = 1e-12
PSD_TOL = 1e-10
TRACE_TOL = 1e-12
UNITARY_TOL = 1e-12


class DomainError(ValueError):
    """A physical parameter lies outside its allowed range."""


class DegenerateStateError(ValueError):
    """A normalisation would divide by (numerically) zero."""


class ContractViolation(ValueError):
    """An input breaks a documented precondition (e.g. unsorted stream)."""


@dataclass(frozen=True)
class BasisLabel:
    polarization: str  # "h" or "v"
    path: int  # 0 = reference, 1 = signal

    def __post_init__(self):
        if self.polarization not in ("h", "v") or self.path not in (0, 1):
            raise ValueError(f"bad basis label {self.polarization}{self.path}")

    @property
    def index(self) -> int:
        return 2 * (self.polarization == "v") + self.path

    @classmethod
    def from_index(cls, index: int) -> "BasisLabel":
        if not 0 <= index < 4:
            raise ValueError(f"basis index out of range: {index}")
        return cls("hv"[index // 2], index % 2)

    @classmethod
    def parse(cls, name: str) -> "BasisLabel":
        return cls(name[0], int(name[1:]))

    def __str__(self) -> str:
        return f"{self.polarization}{self.path}"


BASIS = tuple(BasisLabel.from_index(i) for i in range(4))


def _as_matrix(m, shape) -> np.ndarray:
    arr = np.array(m, dtype=complex)
    if arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PolOperator:
    """A 2x2 operator on the polarization qubit."""

    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _as_matrix(self.matrix, (2, 2)))

    def __matmul__(self, other: "PolOperator") -> "PolOperator":
        return PolOperator(self.matrix @ other.matrix)

    @property
    def dagger(self) -> "PolOperator":
        return PolOperator(self.matrix.conj().T)

    def is_unitary(self, tol: float = UNITARY_TOL) -> bool:
        return bool(np.max(np.abs(self.matrix @ self.matrix.conj().T - np.eye(2))) <= tol)

    def allclose(self, other, atol: float = 1e-12) -> bool:
        other = other.matrix if isinstance(other, PolOperator) else np.asarray(other)
        return bool(np.allclose(self.matrix, other, atol=atol, rtol=0))


IDENTITY = PolOperator(np.eye(2))
SIGMA_X = PolOperator([[0, 1], [1, 0]])
SIGMA_Y = PolOperator([[0, -1j], [1j, 0]])
SIGMA_Z = PolOperator([[1, 0], [0, -1]])
PAULIS = (SIGMA_X, SIGMA_Y, SIGMA_Z)


@dataclass(frozen=True, eq=False)
class PolPathState:
    """Density operator (possibly sub-normalised) on polarization (x) path.

    Construction validates Hermiticity, positivity and ``0 < tr <= 1``;
    pass ``validate=False`` only for intermediate algebra.
    """

    matrix: np.ndarray

    def __init__(self, matrix, validate: bool = True):
        object.__setattr__(self, "matrix", _as_matrix(matrix, (4, 4)))
        if validate:
            self.validate()

    def validate(self) -> None:
        m = self.matrix
        herm_err = np.max(np.abs(m - m.conj().T))
        if herm_err > HERMITIAN_TOL:
            raise ValueError(f"state not Hermitian (max deviation {herm_err:.3g})")
        min_eig = np.linalg.eigvalsh((m + m.conj().T) / 2).min()
        if min_eig < -PSD_TOL:
            raise ValueError(f"state not positive semidefinite (min eigenvalue {min_eig:.3g})")
        tr = self.trace
        if not 0 < tr <= 1 + TRACE_TOL:
            raise ValueError(f"state trace {tr!r} outside (0, 1]")

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))

    @property
    def diagonal(self) -> np.ndarray:
        return np.real(np.diag(self.matrix)).copy()

    @property
    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    def element(self, row: str | BasisLabel, col: str | BasisLabel) -> complex:
        """Matrix element by label, e.g. ``state.element("h0", "v1")``."""
        if isinstance(row, str):
            row = BasisLabel.parse(row)
        if isinstance(col, str):
            col = BasisLabel.parse(col)
        return complex(self.matrix[row.index, col.index])

    def population(self, label: str | BasisLabel) -> float:
        return self.element(label, label).real

    def path_block(self, path: int) -> np.ndarray:
        """Unnormalised 2x2 polarization block living on one path."""
        idx = [path, 2 + path]
        return self.matrix[np.ix_(idx, idx)].copy()

    def trace_out_path(self) -> np.ndarray:
        return self.path_block(0) + self.path_block(1)

    def trace_out_polarization(self) -> np.ndarray:
        m = self.matrix
        return m[:2, :2] + m[2:, 2:]

    def allclose(self, other, atol: float = 1e-12) -> bool:
        other = other.matrix if isinstance(other, PolPathState) else np.asarray(other)
        return bool(np.allclose(self.matrix, other, atol=atol, rtol=0))

    def __add__(self, other: "PolPathState") -> "PolPathState":
        return PolPathState(self.matrix + other.matrix, validate=False)

    def __mul__(self, scalar: float) -> "PolPathState":
        return PolPathState(scalar * self.matrix, validate=False)

    __rmul__ = __mul__


def ket(*amplitudes: tuple[str, complex]) -> np.ndarray:
    vec = np.zeros(4, dtype=complex)
    for name, amp in amplitudes:
        vec[BasisLabel.parse(name).index] += amp
    return vec


def pure_state(vec: np.ndarray) -> PolPathState:
    vec = np.asarray(vec, dtype=complex)
    return PolPathState(np.outer(vec, vec.conj()))


def make_entangled_state() -> PolPathState:
    """(|h0> - |v1>)/sqrt(2): polarization maximally entangled with path."""
    s = 1 / np.sqrt(2)
    return pure_state(ket(("h0", s), ("v1", -s)))


def make_classical_state() -> PolPathState:
    """(|h> - |v>)/sqrt(2) confined to the signal path; no pol-path correlation."""
    s = 1 / np.sqrt(2)
    return pure_state(ket(("h1", s), ("v1", -s)))


def rotator(theta: float) -> PolOperator:
    c, s = np.cos(theta), np.sin(theta)
    return PolOperator([[c, -s], [s, c]])


def hwp(kappa: float) -> PolOperator:
    """Half-wave plate with fast axis at ``kappa``; a reflection, det = -1."""
    c, s = np.cos(2 * kappa), np.sin(2 * kappa)
    return PolOperator([[c, s], [s, -c]])


_PATH_PROJ = (np.diag([1.0, 0.0]), np.diag([0.0, 1.0]))


def embed_pol(op: PolOperator | np.ndarray, which_paths: Iterable[int] = (0, 1)) -> np.ndarray:
    """4x4 matrix of ``sum_k U_k (x) |k><k|`` with ``U_k = op`` on the chosen paths."""
    m = op.matrix if isinstance(op, PolOperator) else np.asarray(op)
    which = set(which_paths)
    if not which <= {0, 1}:
        raise ValueError(f"paths must be a subset of {{0, 1}}, got {sorted(which)}")
    out = np.zeros((4, 4), dtype=complex)
    for path in (0, 1):
        out += np.kron(m if path in which else np.eye(2), _PATH_PROJ[path])
    return out


def embed_path(op: PolOperator | np.ndarray) -> np.ndarray:
    """4x4 matrix of ``1 (x) op``, a 2x2 operator acting on the path qubit."""
    m = op.matrix if isinstance(op, PolOperator) else np.asarray(op)
    return np.kron(np.eye(2), m)


def conjugate(u: np.ndarray, rho: PolPathState, validate: bool = True) -> PolPathState:
    return PolPathState(u @ rho.matrix @ u.conj().T, validate=validate)


def apply_pol(op: PolOperator, rho: PolPathState, which_paths: Iterable[int] = (0, 1)) -> PolPathState:
    """Conjugate ``rho`` by ``op`` applied to the polarization of the given paths only."""
    return conjugate(embed_pol(op, which_paths), rho)


def apply_path(op: PolOperator, rho: PolPathState) -> PolPathState:
    return conjugate(embed_path(op), rho)


def negativity(rho: PolPathState) -> float:
    """Entanglement negativity across the polarization | path cut."""
    m = rho.matrix.reshape(2, 2, 2, 2)  # (pol, path, pol', path')
    pt = m.transpose(0, 3, 2, 1).reshape(4, 4)
    eigs = np.linalg.eigvalsh((pt + pt.conj().T) / 2)
    return float(-eigs[eigs < 0].sum())
