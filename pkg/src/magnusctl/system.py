"""Controlled interacting systems and the planar dipolar rotor builder.

Everything in a :class:`SystemSpec` is expressed in internal units: energy in
units of the rotational constant ``B``, time in ``hbar/B`` and field strength
in ``B/mu``. With these units the rotor Hamiltonian reads

    H = sum_i (L_i^2 - eps(t) cos(phi_i)) + sum_{i<j} W_ij

and ``hbar = 1``. :class:`PhysicalConstants` converts to and from SI.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import ConfigError, DimensionError

HERMITIAN_TOL = 1e-12


@dataclass(frozen=True)
class PhysicalConstants:
    """SI constants for OCS rotors (B in J, mu in C m, hbar in J s, eps0 in F/m)."""

    B: float = 4.033e-24
    mu: float = 2.36496e-30
    hbar: float = 1.054571817e-34
    eps0: float = 8.8541878128e-12

    def __post_init__(self):
        for name in ("B", "mu", "hbar", "eps0"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"physical constant {name} must be positive, got {value}")

    @property
    def time_unit(self):
        """Seconds per internal time unit (hbar/B)."""
        return self.hbar / self.B

    @property
    def field_unit(self):
        """V/m per internal field unit (B/mu)."""
        return self.B / self.mu

    def coupling_strength(self, R):
        """mu^2 / (4 pi eps0 R^3) in units of B, for R in meters."""
        return self.mu**2 / (4.0 * math.pi * self.eps0 * R**3) / self.B


@dataclass(frozen=True)
class RotorGeometry:
    """Pairwise distances (meters) and angles (radians) for ``N`` rotors.

    ``R`` and ``theta`` map each pair ``(i, j)`` with ``i < j`` to its value;
    every pair must be present.
    """

    N: int
    R: dict
    theta: dict

    def __post_init__(self):
        if self.N < 1:
            raise ConfigError("rotor count must be at least 1")
        pairs = {(i, j) for i in range(self.N) for j in range(i + 1, self.N)}
        if set(self.R) != pairs or set(self.theta) != pairs:
            raise ConfigError(f"geometry must define R and theta for exactly the pairs {sorted(pairs)}")
        for p in pairs:
            if not (math.isfinite(self.R[p]) and self.R[p] > 0):
                raise ConfigError(f"R{p} must be positive, got {self.R[p]}")
            if not 0.0 <= self.theta[p] < 2.0 * math.pi:
                raise ConfigError(f"theta{p} must lie in [0, 2 pi), got {self.theta[p]}")

    @classmethod
    def two_rotor(cls, R, theta=math.pi / 2):
        return cls(2, {(0, 1): R}, {(0, 1): theta})

    @classmethod
    def equilateral(cls, R):
        """Three rotors on an equilateral triangle, field along the 1-3 edge."""
        return cls(
            3,
            {(0, 1): R, (0, 2): R, (1, 2): R},
            {(0, 1): math.pi / 3, (0, 2): 0.0, (1, 2): 5 * math.pi / 3},
        )

    def scaled(self, factor):
        return RotorGeometry(self.N, {p: r * factor for p, r in self.R.items()}, dict(self.theta))


def _frozen(a):
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Coupling:
    """Time-independent interaction between factors ``i < j``.

    ``matrix`` is the ``D_i D_j`` square operator on the pair. ``terms``
    optionally records a separable form ``sum_t c_t A_t (x) B_t`` of the same
    operator, which lets the pair-space integrals avoid ``D^6`` products.
    """

    i: int
    j: int
    matrix: np.ndarray
    terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen(self.matrix))
        object.__setattr__(
            self, "terms", tuple((complex(c), _frozen(a), _frozen(b)) for c, a, b in self.terms)
        )

    def scaled(self, lam):
        return Coupling(self.i, self.j, lam * self.matrix, tuple((lam * c, a, b) for c, a, b in self.terms))


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """Per-factor local Hamiltonian builders plus pairwise couplings.

    The local Hamiltonian of factor ``i`` at field value ``eps`` is
    ``kinetic[i] + eps * control[i]``. ``many_body`` is an optional
    full-space interaction that is not a sum of pair terms; only the exact
    propagator and the naive first-order Magnus path accept it.
    """

    dims: tuple
    kinetic: tuple
    control: tuple
    couplings: tuple = ()
    hbar: float = 1.0
    many_body: np.ndarray | None = None
    # carried for reporting; not used by the propagators
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "kinetic", tuple(_frozen(k) for k in self.kinetic))
        object.__setattr__(self, "control", tuple(_frozen(c) for c in self.control))
        object.__setattr__(self, "couplings", tuple(self.couplings))
        if not (len(self.kinetic) == len(self.control) == len(dims) >= 1):
            raise DimensionError("need one kinetic and one control matrix per factor")
        for i, d in enumerate(dims):
            for name, op in (("kinetic", self.kinetic[i]), ("control", self.control[i])):
                if op.shape != (d, d):
                    raise DimensionError(f"{name}[{i}] has shape {op.shape}, expected {(d, d)}")
                if linalg.hermiticity_defect(op) > HERMITIAN_TOL:
                    raise ConfigError(f"{name}[{i}] is not Hermitian")
        seen = set()
        for c in self.couplings:
            if not 0 <= c.i < c.j < len(dims):
                raise DimensionError(f"coupling indices ({c.i}, {c.j}) invalid for {len(dims)} factors")
            if (c.i, c.j) in seen:
                raise ConfigError(f"duplicate coupling ({c.i}, {c.j})")
            seen.add((c.i, c.j))
            d = dims[c.i] * dims[c.j]
            if c.matrix.shape != (d, d):
                raise DimensionError(f"coupling ({c.i}, {c.j}) has shape {c.matrix.shape}, expected {(d, d)}")
            if linalg.hermiticity_defect(c.matrix) > HERMITIAN_TOL:
                raise ConfigError(f"coupling ({c.i}, {c.j}) is not Hermitian")
        if not self.hbar > 0:
            raise ConfigError("hbar must be positive")
        if self.many_body is not None:
            mb = _frozen(self.many_body)
            if mb.shape != (self.dim, self.dim):
                raise DimensionError(f"many-body term has shape {mb.shape}, expected {(self.dim, self.dim)}")
            if linalg.hermiticity_defect(mb) > HERMITIAN_TOL:
                raise ConfigError("many-body term is not Hermitian")
            object.__setattr__(self, "many_body", mb)

    @property
    def N(self):
        return len(self.dims)

    @property
    def dim(self):
        return math.prod(self.dims)

    def with_coupling_scale(self, lam):
        """Copy with every coupling multiplied by ``lam``."""
        return SystemSpec(
            self.dims,
            self.kinetic,
            self.control,
            tuple(c.scaled(lam) for c in self.couplings),
            self.hbar,
            None if self.many_body is None else lam * self.many_body,
            dict(self.meta),
        )

    def interaction(self, max_dim=linalg.MAX_DIM):
        """Full-space coupling operator W."""
        linalg._check_dim(self.dim, max_dim)
        W = np.zeros((self.dim, self.dim), dtype=complex)
        for c in self.couplings:
            W += linalg.embed_pair(c.matrix, c.i, c.j, self.dims)
        if self.many_body is not None:
            W += self.many_body
        return W


def cos_matrix(M):
    """<m|cos phi|m'> in the basis m = -M..M."""
    D = 2 * M + 1
    return 0.5 * (np.eye(D, k=1) + np.eye(D, k=-1)).astype(complex)


def sin_matrix(M):
    """<m|sin phi|m'> = -(i/2)(delta_{m,m'+1} - delta_{m,m'-1})."""
    D = 2 * M + 1
    # row m, column m-1 sits on the first subdiagonal
    return (-0.5j) * (np.eye(D, k=-1) - np.eye(D, k=1))


def lsq_matrix(M):
    m = np.arange(-M, M + 1)
    return np.diag(m.astype(float) ** 2).astype(complex)


def dipole_coupling(M_i, M_j, strength, theta):
    """Planar dipole-dipole interaction on a rotor pair.

    ``strength * (cos(phi_i - phi_j) - 3 cos(phi_i - theta) cos(phi_j - theta))``
    expanded by angle addition into products of single-rotor cos/sin.
    """
    ci, si = cos_matrix(M_i), sin_matrix(M_i)
    cj, sj = cos_matrix(M_j), sin_matrix(M_j)
    ct, st = math.cos(theta), math.sin(theta)
    terms = (
        (strength * (1.0 - 3.0 * ct * ct), ci, cj),
        (strength * (1.0 - 3.0 * st * st), si, sj),
        (strength * (-3.0 * ct * st), ci, sj),
        (strength * (-3.0 * ct * st), si, cj),
    )
    matrix = sum(c * np.kron(a, b) for c, a, b in terms)
    return matrix, terms


def build_rotor_system(geom, M, consts=None):
    """Planar dipole-coupled rotors in internal units."""
    consts = consts or PhysicalConstants()
    if M < 0:
        raise ConfigError("truncation M must be non-negative")
    D = 2 * M + 1
    couplings = []
    for (i, j), R in sorted(geom.R.items()):
        kappa = consts.coupling_strength(R)
        matrix, terms = dipole_coupling(M, M, kappa, geom.theta[(i, j)])
        couplings.append(Coupling(i, j, matrix, terms))
    return SystemSpec(
        dims=(D,) * geom.N,
        kinetic=(lsq_matrix(M),) * geom.N,
        control=(-cos_matrix(M),) * geom.N,
        couplings=tuple(couplings),
        meta={"M": M, "geometry": geom, "constants": consts},
    )


def local_hamiltonian(spec, i, eps):
    if not 0 <= i < spec.N:
        raise DimensionError(f"factor {i} out of range")
    return spec.kinetic[i] + eps * spec.control[i]


def static_hamiltonian(spec, max_dim=linalg.MAX_DIM):
    """Field-free part: embedded kinetic terms plus all couplings."""
    linalg._check_dim(spec.dim, max_dim)
    H = spec.interaction(max_dim)
    for i in range(spec.N):
        H += linalg.embed_local(spec.kinetic[i], i, spec.dims)
    return H


def control_operator(spec, max_dim=linalg.MAX_DIM):
    """Full-space operator multiplying eps(t)."""
    linalg._check_dim(spec.dim, max_dim)
    C = np.zeros((spec.dim, spec.dim), dtype=complex)
    for i in range(spec.N):
        C += linalg.embed_local(spec.control[i], i, spec.dims)
    return C


def full_hamiltonian(spec, eps, max_dim=linalg.MAX_DIM):
    H = spec.interaction(max_dim)
    for i in range(spec.N):
        H += linalg.embed_local(local_hamiltonian(spec, i, eps), i, spec.dims)
    return H


def ground_product_state(spec):
    """Per-factor |m=0> vectors (assumes the symmetric rotor basis)."""
    factors = []
    for d in spec.dims:
        v = np.zeros(d, dtype=complex)
        v[d // 2] = 1.0
        factors.append(v)
    return factors
