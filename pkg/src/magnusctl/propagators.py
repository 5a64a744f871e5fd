"""Time-evolution engines.

Four propagators share one discretization: ``n`` steps of size ``dt`` with
the Hamiltonian sampled at the right endpoint ``t_k = k dt``.

* :func:`propagate_exact` -- product of short-time exponentials in the full
  space, one exp-action per step.
* :func:`propagate_zeroth` -- couplings dropped, each factor evolved alone.
* :func:`propagate_magnus1` -- interaction-picture first-order Magnus: the
  coupling integrated against the separable zeroth-order frame, then a
  single full-space exp-action.
* :func:`propagate_magnus2` -- as above with the second-order commutator
  term added to the exponent.

All four reuse the per-factor histories ``U_i(k dt)`` from
:func:`compute_local_histories`.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse

from . import linalg
from .errors import ConfigError, DimensionError, UnsupportedStructureError
from .instrument import bump
from .system import static_hamiltonian, control_operator

#: Default ceiling on ``dt * ||H|| / hbar`` (radians of phase per step).
MAX_STEP_PHASE = 2.0 * math.pi

# Time steps per batch when building pair-space integrands; bounds memory
# to about CHUNK * D^4 complex numbers per coupling.
_CHUNK = 256

METHODS = ("exact", "zeroth", "magnus1", "magnus2")


@dataclass(frozen=True, eq=False)
class LocalPropagatorHistory:
    """``U[i][k]`` is the coupling-free propagator of factor ``i`` at ``k dt``.

    Index 0 holds the identity, so each array has shape ``(n + 1, D_i, D_i)``.
    Factors with identical local Hamiltonians share one array.
    """

    dt: float
    U: tuple

    @property
    def n(self):
        return self.U[0].shape[0] - 1

    def final(self, i):
        return self.U[i][-1]


def step_phase(spec, field):
    """Upper bound on ``dt * max_k ||H(k dt)||_2 / hbar``.

    The local norm is convex in the field value, so its maximum over the
    samples is attained at the smallest or largest sample.
    """
    lo, hi = float(np.min(field.values)), float(np.max(field.values))
    total = 0.0
    for K, C in zip(spec.kinetic, spec.control):
        total += max(np.linalg.norm(K + lo * C, 2), np.linalg.norm(K + hi * C, 2))
    for c in spec.couplings:
        total += np.linalg.norm(c.matrix, 2)
    if spec.many_body is not None:
        total += np.linalg.norm(spec.many_body, 2)
    return field.dt * total / spec.hbar


def check_step_size(spec, field, max_step_phase=MAX_STEP_PHASE):
    if max_step_phase is None:
        return
    phase = step_phase(spec, field)
    if phase > max_step_phase:
        raise ConfigError(
            f"time step too coarse: dt*||H||/hbar = {phase:.3g} exceeds {max_step_phase:.3g}; "
            f"increase n to at least {math.ceil(field.n * phase / max_step_phase)}"
        )


def _as_state(psi0, spec):
    if isinstance(psi0, (list, tuple)):
        if len(psi0) != spec.N:
            raise DimensionError(f"expected {spec.N} factors, got {len(psi0)}")
        psi0 = linalg.kron_vectors(psi0)
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (spec.dim,):
        raise DimensionError(f"state of shape {psi0.shape} does not match dimension {spec.dim}")
    return psi0


def sparse_operators(spec, max_dim=linalg.MAX_DIM):
    """Full-space ``(H_static, C)`` as sparse matrices, ``H(t) = H_static + eps(t) C``."""
    linalg._check_dim(spec.dim, max_dim)
    dims = spec.dims
    H = sum(linalg.sparse_product({i: K}, dims) for i, K in enumerate(spec.kinetic))
    C = sum(linalg.sparse_product({i: c}, dims) for i, c in enumerate(spec.control))
    for c in spec.couplings:
        if c.terms:
            H = H + sum(coef * linalg.sparse_product({c.i: A, c.j: B}, dims) for coef, A, B in c.terms)
        else:
            H = H + scipy.sparse.csr_array(linalg.embed_pair(c.matrix, c.i, c.j, dims))
    if spec.many_body is not None:
        H = H + scipy.sparse.csr_array(spec.many_body)
    return scipy.sparse.csr_array(H), scipy.sparse.csr_array(C)


def propagate_exact(spec, field, psi0, tol=1e-10, observe=None, max_step_phase=MAX_STEP_PHASE, sparse=True):
    """Time-ordered product of ``exp(-i H(k dt) dt / hbar)`` applied to ``psi0``.

    ``observe(k, psi)`` is called with the initial state (``k = 0``) and after
    every step. ``sparse=False`` uses dense full-space matrices instead.
    ``tol`` bounds the error of the whole propagation, so each step gets
    ``tol / n``; truncation losses would otherwise add up over the steps.
    """
    check_step_size(spec, field, max_step_phase)
    psi = _as_state(psi0, spec)
    step_tol = tol / field.n
    scale = -1j * field.dt / spec.hbar
    if sparse:
        H, C = sparse_operators(spec)
        a_static, a_ctrl = scale * H, scale * C
    else:
        a_static = scale * static_hamiltonian(spec)
        a_ctrl = scale * control_operator(spec)
    if observe is not None:
        observe(0, psi)
    for k, eps in enumerate(field.values, start=1):
        psi = linalg.expm_multiply(a_static + eps * a_ctrl, psi, step_tol)
        if observe is not None:
            observe(k, psi)
    return psi


def _same_local(spec, i, j):
    return np.array_equal(spec.kinetic[i], spec.kinetic[j]) and np.array_equal(spec.control[i], spec.control[j])


def compute_local_histories(spec, field, max_step_phase=MAX_STEP_PHASE):
    """Coupling-free propagators ``U_i(k dt) = exp(-i H_i(k dt) dt/hbar) U_i((k-1) dt)``."""
    check_step_size(spec, field, max_step_phase)
    eps = field.values
    scale = -1j * field.dt / spec.hbar
    hist = []
    for i in range(spec.N):
        twin = next((j for j in range(i) if _same_local(spec, i, j)), None)
        if twin is not None:
            hist.append(hist[twin])
            continue
        K, C = spec.kinetic[i], spec.control[i]
        steps = linalg.expm(scale * (K[None] + eps[:, None, None] * C[None]))
        U = np.empty((field.n + 1,) + K.shape, dtype=complex)
        U[0] = np.eye(K.shape[0])
        for k in range(field.n):
            U[k + 1] = steps[k] @ U[k]
        U.setflags(write=False)
        hist.append(U)
    return LocalPropagatorHistory(field.dt, tuple(hist))


def zeroth_factors(spec, field, factors, hist=None):
    hist = hist or compute_local_histories(spec, field)
    return [hist.final(i) @ np.asarray(f, dtype=complex) for i, f in enumerate(factors)]


def propagate_zeroth(spec, field, factors, hist=None):
    """Product state ``(x)_i U_i(T) |psi_i(0)>``; ``factors`` are per-factor vectors."""
    if not isinstance(factors, (list, tuple)):
        raise DimensionError("zeroth-order propagation needs the initial state as per-factor vectors")
    if len(factors) != spec.N:
        raise DimensionError(f"expected {spec.N} factors, got {len(factors)}")
    for i, f in enumerate(factors):
        if np.shape(f) != (spec.dims[i],):
            raise DimensionError(f"factor {i} has shape {np.shape(f)}, expected {(spec.dims[i],)}")
    return linalg.kron_vectors(zeroth_factors(spec, field, factors, hist))


def compute_omega1_naive(hist, spec):
    """First-order Magnus exponent assembled directly in the full space."""
    W = spec.interaction()
    acc = np.zeros_like(W)
    for k in range(1, hist.n + 1):
        U = linalg.kron_all([hist.U[i][k] for i in range(spec.N)])
        acc += U.conj().T @ W @ U
    return (-1j * hist.dt / spec.hbar) * acc


def _conjugate_local(U, A):
    """Stack of ``U_k^dagger A U_k``."""
    return np.matmul(U.conj().transpose(0, 2, 1), A[None] @ U)


def pair_integrands(hist, coupling, start=1, stop=None, use_terms=True):
    """``(U_i(k dt) (x) U_j(k dt))^dagger W_ij (U_i (x) U_j)`` for ``k`` in ``[start, stop)``.

    Returns an array of shape ``(stop - start, D_i D_j, D_i D_j)``.
    """
    stop = hist.n + 1 if stop is None else stop
    Ui = hist.U[coupling.i][start:stop]
    Uj = hist.U[coupling.j][start:stop]
    di, dj = Ui.shape[1], Uj.shape[1]
    m = Ui.shape[0]
    if use_terms and coupling.terms:
        out = np.zeros((m, di * dj, di * dj), dtype=complex)
        for c, A, B in coupling.terms:
            a = _conjugate_local(Ui, A)
            b = _conjugate_local(Uj, B)
            out += c * np.einsum("kac,kbd->kabcd", a, b).reshape(m, di * dj, di * dj)
        return out
    P = np.einsum("kac,kbd->kabcd", Ui, Uj).reshape(m, di * dj, di * dj)
    return np.matmul(P.conj().transpose(0, 2, 1), coupling.matrix[None] @ P)


def _conjugated(hist, i, A, memo):
    # couplings on the same factor usually share cos/sin operators
    key = (id(hist.U[i]), A.tobytes())
    if key not in memo:
        memo[key] = _conjugate_local(hist.U[i][1:], A)
    return memo[key]


def _pair_integral(hist, coupling, use_terms, memo=None):
    """``sum_k`` of the pair integrands without keeping them all in memory."""
    memo = {} if memo is None else memo
    di, dj = hist.U[coupling.i].shape[1], hist.U[coupling.j].shape[1]
    if use_terms and coupling.terms:
        acc = np.zeros((di, dj, di, dj), dtype=complex)
        m = hist.n
        for c, A, B in coupling.terms:
            a = _conjugated(hist, coupling.i, A, memo).reshape(m, di * di)
            b = _conjugated(hist, coupling.j, B, memo).reshape(m, dj * dj)
            # sum_k a_k[a, c] b_k[b, d] as one matrix product, axes (a, c, b, d)
            acc += c * (a.T @ b).reshape(di, di, dj, dj).transpose(0, 2, 1, 3)
        return acc.reshape(di * dj, di * dj)
    acc = np.zeros((di * dj, di * dj), dtype=complex)
    for start in range(1, hist.n + 1, _CHUNK):
        stop = min(start + _CHUNK, hist.n + 1)
        acc += pair_integrands(hist, coupling, start, stop, use_terms=False).sum(axis=0)
    return acc


def compute_gammas(hist, spec, use_terms=True):
    """Pair-space contributions ``gamma_ij`` keyed by ``(i, j)``."""
    if spec.many_body is not None:
        raise UnsupportedStructureError("pairwise path cannot integrate a non-pairwise coupling term")
    scale = -1j * hist.dt / spec.hbar
    memo = {}
    return {(c.i, c.j): scale * _pair_integral(hist, c, use_terms, memo) for c in spec.couplings}


def compute_omega1_pairwise(hist, spec, use_terms=True):
    """First-order Magnus exponent as the sum of embedded pair-space integrals."""
    omega = np.zeros((spec.dim, spec.dim), dtype=complex)
    linalg._check_dim(spec.dim, linalg.MAX_DIM)
    for (i, j), gamma in compute_gammas(hist, spec, use_terms).items():
        omega += linalg.embed_pair(gamma, i, j, spec.dims)
    return omega


class IntegrandCache:
    """Pair-space integrand stacks keyed by coupling ``(i, j)``.

    With ``recompute=True`` nothing is stored and each request rebuilds the
    stack, trading time for memory.
    """

    def __init__(self, hist, spec, use_terms=True, recompute=False):
        self.hist = hist
        self.couplings = {(c.i, c.j): c for c in spec.couplings}
        self.use_terms = use_terms
        self.recompute = recompute
        self._store = {}

    def __getitem__(self, pair):
        if pair in self._store:
            return self._store[pair]
        stack = pair_integrands(self.hist, self.couplings[pair], use_terms=self.use_terms)
        if not self.recompute:
            self._store[pair] = stack
        return stack


def compute_omega2(hist, spec, cache=None, use_terms=True, max_dim=linalg.MAX_DIM):
    """Second-order Magnus exponent from pair-of-pair commutator terms.

    For couplings ``p`` and ``q`` the term is
    ``-(dt^2 / 2 hbar^2) sum_k sum_{k'<=k} [X^p_k, X^q_k']``, where ``X`` are
    the pair-space integrands. The inner sum is a running prefix sum, so the
    double sum costs ``O(n)`` commutators. Terms whose pairs share no factor
    vanish and are skipped; terms sharing one factor are formed in the
    three-factor space.
    """
    if spec.many_body is not None:
        raise UnsupportedStructureError("second-order path needs pairwise couplings")
    d3 = max((math.prod(spec.dims[s] for s in trio) for trio in _trios(spec)), default=0)
    linalg._check_dim(max(spec.dim, d3), max_dim)
    cache = cache or IntegrandCache(hist, spec, use_terms)
    const = -(hist.dt**2) / (2.0 * spec.hbar**2)
    omega = np.zeros((spec.dim, spec.dim), dtype=complex)
    pairs = [(c.i, c.j) for c in spec.couplings]
    for p in pairs:
        for q in pairs:
            shared = set(p) & set(q)
            if not shared:
                bump("kappa_disjoint_skipped")
                continue
            X = cache[p]
            S = np.cumsum(cache[q], axis=0)
            if p == q:
                bump("kappa_pair")
                K = (X @ S - S @ X).sum(axis=0)
                omega += linalg.embed_pair(const * K, p[0], p[1], spec.dims)
                continue
            bump("kappa_triple")
            sites = sorted(set(p) | set(q))
            sub_dims = [spec.dims[s] for s in sites]
            Xt = linalg.embed(X, [sites.index(s) for s in p], sub_dims)
            St = linalg.embed(S, [sites.index(s) for s in q], sub_dims)
            K = (Xt @ St - St @ Xt).sum(axis=0)
            omega += linalg.embed(const * K, sites, spec.dims)
    return omega


def _trios(spec):
    pairs = [(c.i, c.j) for c in spec.couplings]
    for p in pairs:
        for q in pairs:
            if p != q and set(p) & set(q):
                yield tuple(sorted(set(p) | set(q)))


def propagate_magnus1(spec, field, psi0, hist=None, tol=1e-10, use_terms=True):
    """``(x)_i U_i(T) exp(Omega_1) psi0`` with one full-space exp-action."""
    psi = _as_state(psi0, spec)
    hist = hist or compute_local_histories(spec, field)
    omega = compute_omega1_pairwise(hist, spec, use_terms)
    psi = linalg.expm_multiply(omega, psi, tol)
    return linalg.apply_product([hist.final(i) for i in range(spec.N)], psi, spec.dims)


def propagate_magnus2(spec, field, psi0, hist=None, tol=1e-10, use_terms=True, recompute=False):
    """``(x)_i U_i(T) exp(Omega_1 + Omega_2) psi0``."""
    psi = _as_state(psi0, spec)
    hist = hist or compute_local_histories(spec, field)
    cache = IntegrandCache(hist, spec, use_terms, recompute)
    if recompute:
        omega = compute_omega1_pairwise(hist, spec, use_terms)
    else:
        # first-order term from the same cached integrands the commutators use
        omega = np.zeros((spec.dim, spec.dim), dtype=complex)
        for c in spec.couplings:
            gamma = (-1j * hist.dt / spec.hbar) * cache[(c.i, c.j)].sum(axis=0)
            omega += linalg.embed_pair(gamma, c.i, c.j, spec.dims)
    omega += compute_omega2(hist, spec, cache)
    psi = linalg.expm_multiply(omega, psi, tol)
    return linalg.apply_product([hist.final(i) for i in range(spec.N)], psi, spec.dims)


def propagate(method, spec, field, psi0, **kwargs):
    """Dispatch on ``method``; ``psi0`` may be a full vector or per-factor vectors."""
    if method == "exact":
        return propagate_exact(spec, field, psi0, **kwargs)
    if method == "zeroth":
        return propagate_zeroth(spec, field, psi0, **kwargs)
    if method == "magnus1":
        return propagate_magnus1(spec, field, psi0, **kwargs)
    if method == "magnus2":
        return propagate_magnus2(spec, field, psi0, **kwargs)
    raise ConfigError(f"unknown propagation method {method!r}; choose from {METHODS}")


def overlap(a, b):
    """``|<a|b>|``."""
    return float(abs(np.vdot(a, b)))
