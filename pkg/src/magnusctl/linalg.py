"""Dense complex linear algebra kernels.

Operators are square ``complex128`` numpy arrays and states are 1-D
``complex128`` arrays. Product-space indices are row-major over the degrees
of freedom in ascending order, so factor 0 is the slowest-varying index.
"""

import math

import numpy as np
import scipy.linalg
import scipy.sparse

from .errors import DimensionError, NumericalError
from .instrument import bump

#: Largest full-space dimension any kernel will build.
MAX_DIM = 4096

# Per-substep 2-norm target for the Taylor exp-action. Larger values mean
# fewer substeps but longer polynomials; 3 keeps cancellation below ~1e-14.
_TAYLOR_THETA = 3.0
_TAYLOR_MAX_TERMS = 120


def _as_square(a, name="matrix"):
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise DimensionError(f"{name} must be a non-empty square matrix, got shape {a.shape}")
    return a


def _check_dim(dim, max_dim):
    if max_dim is not None and dim > max_dim:
        raise DimensionError(f"dimension {dim} exceeds configured maximum {max_dim}")


def kron(a, b, max_dim=MAX_DIM):
    """Kronecker product with a dimension cap."""
    a = _as_square(a, "a")
    b = _as_square(b, "b")
    _check_dim(a.shape[0] * b.shape[0], max_dim)
    return np.kron(a, b)


def kron_all(ops, max_dim=MAX_DIM):
    """Kronecker product of a sequence of square matrices, left to right."""
    ops = list(ops)
    if not ops:
        raise DimensionError("kron_all needs at least one operator")
    _check_dim(math.prod(np.shape(op)[0] for op in ops), max_dim)
    out = _as_square(ops[0])
    for op in ops[1:]:
        out = np.kron(out, _as_square(op))
    return out


def kron_vectors(vectors):
    """Product-state amplitude vector from per-factor vectors."""
    out = np.ones(1, dtype=complex)
    for v in vectors:
        out = np.kron(out, np.asarray(v, dtype=complex))
    return out


def embed(op, sites, dims, max_dim=MAX_DIM):
    """Embed ``op`` acting on ``sites`` (in the given order) into the full space.

    The result acts as ``op`` on the listed factors and as the identity on
    all others. Entries are only placed (multiplied by exact 0 or 1), so the
    map is exactly linear in ``op``. A stack of operators with shape
    ``(..., d, d)`` is embedded elementwise.
    """
    dims = [int(d) for d in dims]
    sites = [int(s) for s in sites]
    nfac = len(dims)
    if len(set(sites)) != len(sites):
        raise DimensionError(f"repeated site in {sites}")
    for s in sites:
        if not 0 <= s < nfac:
            raise DimensionError(f"site {s} out of range for {nfac} factors")
    op = np.asarray(op, dtype=complex)
    sub = math.prod(dims[s] for s in sites)
    if op.ndim < 2 or op.shape[-2:] != (sub, sub):
        raise DimensionError(
            f"operator of shape {op.shape} does not match sites {sites} with dims {[dims[s] for s in sites]}"
        )
    full = math.prod(dims)
    _check_dim(full, max_dim)
    batch = op.shape[:-2]
    rest = [k for k in range(nfac) if k not in sites]
    rest_dim = math.prod(dims[k] for k in rest)
    eye = np.eye(rest_dim, dtype=complex)
    big = op[..., :, None, :, None] * eye[:, None, :]
    order = sites + rest
    shape = [dims[k] for k in order]
    tensor = big.reshape(batch + tuple(shape + shape))
    nb = len(batch)
    # axis position of each natural factor inside `order`
    where = [order.index(k) for k in range(nfac)]
    perm = list(range(nb)) + [nb + w for w in where] + [nb + nfac + w for w in where]
    return np.ascontiguousarray(tensor.transpose(perm)).reshape(batch + (full, full))


def embed_local(op, i, dims, max_dim=MAX_DIM):
    return embed(op, [i], dims, max_dim=max_dim)


def embed_pair(op, i, j, dims, max_dim=MAX_DIM):
    """Embed a two-factor operator on factors ``(i, j)``, ``i < j``."""
    if not i < j:
        raise DimensionError(f"embed_pair requires i < j, got ({i}, {j})")
    return embed(op, [i, j], dims, max_dim=max_dim)


def sparse_product(ops, dims):
    """Sparse ``(x)_k O_k`` where ``ops`` maps site index to a local matrix.

    Sites missing from ``ops`` carry the identity.
    """
    out = scipy.sparse.csr_array(np.ones((1, 1), dtype=complex))
    for k, d in enumerate(dims):
        op = ops.get(k)
        factor = scipy.sparse.eye_array(d, dtype=complex) if op is None else scipy.sparse.csr_array(op)
        out = scipy.sparse.kron(out, factor, format="csr")
    return out


def apply_local(op, psi, i, dims):
    """Apply a single-factor operator to factor ``i`` of a full-space vector."""
    dims = [int(d) for d in dims]
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (math.prod(dims),):
        raise DimensionError(f"state of shape {psi.shape} does not match dims {dims}")
    t = psi.reshape(dims)
    t = np.tensordot(op, t, axes=([1], [i]))
    return np.moveaxis(t, 0, i).reshape(-1)


def apply_product(ops, psi, dims):
    """Apply ``ops[0] (x) ops[1] (x) ...`` to ``psi`` without forming the product."""
    for i, op in enumerate(ops):
        psi = apply_local(op, psi, i, dims)
    return psi


def expm(a):
    """Matrix exponential.

    Scaling and squaring with a Pade core (scipy); diagonal input is
    exponentiated entrywise so the result is exact there. Accepts a stack of
    matrices with shape ``(..., d, d)``.
    """
    a = np.asarray(a, dtype=complex)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DimensionError(f"expm needs square matrices, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericalError("expm input has non-finite entries")
    diag = np.diagonal(a, axis1=-2, axis2=-1)
    if np.array_equal(a, diag[..., :, None] * np.eye(a.shape[-1])):
        out = np.zeros_like(a)
        idx = np.arange(a.shape[-1])
        out[..., idx, idx] = np.exp(diag)
        return out
    return scipy.linalg.expm(a)


def _two_norm_bound(a):
    return math.sqrt(np.linalg.norm(a, 1) * np.linalg.norm(a, np.inf))


def expm_multiply(a, v, tol=1e-10):
    """Compute ``expm(a) @ v`` without forming the exponential.

    Truncated Taylor series on ``s`` substeps after shifting ``a`` by its mean
    diagonal. The polynomial degree is chosen per substep from an
    a-posteriori bound on the series tail, so the total error is at most
    ``tol * ||v||`` (2-norm, up to rounding).

    ``a`` may be a dense array or a scipy sparse matrix.

    Raises
    ------
    NumericalError
        If a substep fails to reach the tolerance within the term cap. The
        exception carries the tail estimate as ``residual``.
    """
    sparse = scipy.sparse.issparse(a)
    if sparse:
        a = scipy.sparse.csr_array(a, dtype=complex)
        if a.shape[0] != a.shape[1]:
            raise DimensionError(f"a must be square, got shape {a.shape}")
        entries = a.data
    else:
        a = _as_square(a, "a")
        entries = a
    v = np.asarray(v, dtype=complex)
    if v.shape != (a.shape[0],):
        raise DimensionError(f"vector of shape {v.shape} does not match matrix {a.shape}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not (np.all(np.isfinite(entries)) and np.all(np.isfinite(v))):
        raise NumericalError("expm_multiply input has non-finite entries")
    bump("expm_multiply")

    d = a.shape[0]
    if sparse:
        mu = a.diagonal().sum() / d
        b = a - mu * scipy.sparse.eye_array(d, dtype=complex, format="csr")
        absb = abs(b)
        x = math.sqrt(float(absb.sum(axis=0).max()) * float(absb.sum(axis=1).max()))
    else:
        mu = np.trace(a) / d
        b = a - mu * np.eye(d)
        x = _two_norm_bound(b)
    v_norm = np.linalg.norm(v)
    if x == 0.0 or v_norm == 0.0:
        return np.exp(mu) * v

    s = max(1, math.ceil(x / _TAYLOR_THETA))
    b = b / s
    x = x / s
    phase = np.exp(mu / s)
    sub_tol = tol / s
    w = v.copy()
    for _ in range(s):
        w_norm = np.linalg.norm(w)
        acc = w.copy()
        term = w
        tail = math.inf
        for k in range(1, _TAYLOR_MAX_TERMS + 1):
            term = (b @ term) / k
            acc += term
            if k + 2 > x:
                tail = np.linalg.norm(term) * (x / (k + 1)) / (1.0 - x / (k + 2))
                if tail <= sub_tol * w_norm:
                    break
        else:
            raise NumericalError(
                f"Taylor series did not converge in {_TAYLOR_MAX_TERMS} terms", residual=tail / w_norm
            )
        w = phase * acc
    return w


def partial_trace(psi, keep, dims):
    """Reduced density matrix of a pure state over the factors in ``keep``.

    Kept factors appear in ascending order in the result.
    """
    dims = [int(d) for d in dims]
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (math.prod(dims),):
        raise DimensionError(f"state of shape {psi.shape} does not match dims {dims}")
    keep = sorted(set(int(k) for k in keep))
    for k in keep:
        if not 0 <= k < len(dims):
            raise DimensionError(f"factor {k} out of range for {len(dims)} factors")
    traced = [k for k in range(len(dims)) if k not in keep]
    dk = math.prod(dims[k] for k in keep)
    m = psi.reshape(dims).transpose(keep + traced).reshape(dk, -1)
    return m @ m.conj().T


def hermiticity_defect(a):
    a = np.asarray(a)
    return float(np.max(np.abs(a - a.conj().T)))


def unitarity_defect(u):
    """``max |u^dagger u - I|`` entrywise."""
    u = _as_square(u, "u")
    return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))
