"""Expectation values, final-time objectives and entanglement measures."""

import math
from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import ConfigError, DimensionError, NumericalError
from .system import cos_matrix

KINDS = ("sum-of-orientations", "signed-orientations", "projection-onto-target")

# imaginary part tolerated in an expectation of a Hermitian operator
_IMAG_TOL = 1e-10
_HERMITIAN_TOL = 1e-12
# reduced-state eigenvalues below this are treated as exact zeros
_EIG_FLOOR = 1e-14


def _real(value):
    if abs(value.imag) > _IMAG_TOL * max(1.0, abs(value.real)):
        raise NumericalError(f"expectation has imaginary part {value.imag:.3g}", residual=abs(value.imag))
    return float(value.real)


def expectation(psi, op):
    """``<psi|op|psi>`` for a Hermitian ``op``."""
    op = linalg._as_square(op, "op")
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (op.shape[0],):
        raise DimensionError(f"state of shape {psi.shape} does not match operator {op.shape}")
    if linalg.hermiticity_defect(op) > _HERMITIAN_TOL:
        raise ConfigError("expectation needs a Hermitian operator")
    return _real(np.vdot(psi, op @ psi))


def local_expectation(psi, op, i, dims):
    """Expectation of a single-factor operator acting on factor ``i``."""
    op = linalg._as_square(op, "op")
    if linalg.hermiticity_defect(op) > _HERMITIAN_TOL:
        raise ConfigError("expectation needs a Hermitian operator")
    return _real(np.vdot(psi, linalg.apply_local(op, psi, i, dims)))


@dataclass(frozen=True, eq=False)
class ObjectiveSpec:
    """What the optimizer maximizes at the final time.

    The orientation kinds return ``sum_i w_i <cos phi_i>``; ``signed-orientations``
    differs from ``sum-of-orientations`` only in allowing negative weights.
    The projection kind returns ``|<target|psi>|^2``.
    """

    kind: str
    weights: tuple = ()
    target: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown objective kind {self.kind!r}; choose from {KINDS}")
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.kind == "projection-onto-target":
            if self.target is None:
                raise ConfigError("projection objective needs a target state")
            target = np.array(self.target, dtype=complex).reshape(-1)
            if abs(np.linalg.norm(target) - 1.0) > 1e-10:
                raise ConfigError("projection target must have unit norm")
            target.setflags(write=False)
            object.__setattr__(self, "target", target)
        else:
            if not self.weights:
                raise ConfigError(f"{self.kind} objective needs per-factor weights")
            if self.kind == "sum-of-orientations" and any(w < 0 for w in self.weights):
                raise ConfigError("sum-of-orientations weights must be non-negative; use signed-orientations")

    @classmethod
    def orientation(cls, weights):
        kind = "signed-orientations" if any(w < 0 for w in weights) else "sum-of-orientations"
        return cls(kind, tuple(weights))

    @classmethod
    def projection(cls, target):
        return cls("projection-onto-target", target=target)


def objective_value(obj, psi, dims):
    psi = np.asarray(psi, dtype=complex)
    if obj.kind == "projection-onto-target":
        if obj.target.shape != psi.shape:
            raise DimensionError(f"target of shape {obj.target.shape} does not match state {psi.shape}")
        return float(abs(np.vdot(obj.target, psi)) ** 2)
    if len(obj.weights) != len(dims):
        raise DimensionError(f"{len(obj.weights)} weights for {len(dims)} factors")
    total = 0.0
    for i, (w, d) in enumerate(zip(obj.weights, dims)):
        if w == 0.0:
            continue
        total += w * local_expectation(psi, cos_matrix((d - 1) // 2), i, dims)
    return total


def mes_state(M):
    """``(2M+1)^(-1/2) sum_m |m> (x) |m>``."""
    if M < 0:
        raise ConfigError("truncation M must be non-negative")
    D = 2 * M + 1
    return np.eye(D, dtype=complex).reshape(-1) / math.sqrt(D)


def von_neumann_entropy(psi, keep, dims):
    """Entanglement entropy ``-sum lambda ln lambda`` of the factors in ``keep``."""
    rho = linalg.partial_trace(psi, keep, dims)
    try:
        lam = np.linalg.eigvalsh(rho)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    lam = lam[lam >= _EIG_FLOOR]
    return float(-np.sum(lam * np.log(lam)) + 0.0)
