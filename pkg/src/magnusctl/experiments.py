"""Experiment drivers behind the command-line interface.

Each function returns plain data (dicts and lists of rows); writing files
is left to :mod:`magnusctl.cli`.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import fields as fieldmod
from . import propagators as P
from .errors import ConfigError
from .instrument import track
from .observables import local_expectation, objective_value, von_neumann_entropy
from .system import cos_matrix, sin_matrix, ground_product_state


def _local_ops(spec):
    ops = []
    for d in spec.dims:
        M = (d - 1) // 2
        ops.append((cos_matrix(M), sin_matrix(M)))
    return ops


def orientation_row(spec, psi, ops=None):
    """``[<cos phi_1>, <sin phi_1>, <cos phi_2>, ...]`` for a full-space state."""
    ops = ops or _local_ops(spec)
    row = []
    for i, (c, s) in enumerate(ops):
        row.append(local_expectation(psi, c, i, spec.dims))
        row.append(local_expectation(psi, s, i, spec.dims))
    return row


def _local_moments(U, v, ops):
    w = U @ v
    return [float(np.vdot(w, op @ w).real) for op in ops]


def run_propagate(spec, field, factors, method, trajectory=False):
    """Final state and orientations; optionally ``<cos>``/``<sin>`` at every step.

    Trajectories exist only for ``exact`` and ``zeroth``; the Magnus paths
    never form intermediate states.
    """
    if trajectory and method not in ("exact", "zeroth"):
        raise ConfigError(f"--trajectory is only available for exact and zeroth, not {method}")
    ops = _local_ops(spec)
    traj = []
    if method == "exact":
        observe = (lambda k, psi: traj.append([k, k * field.dt] + orientation_row(spec, psi, ops))) if trajectory else None
        psi = P.propagate_exact(spec, field, factors, observe=observe)
    elif method == "zeroth":
        hist = P.compute_local_histories(spec, field)
        psi = P.propagate_zeroth(spec, field, factors, hist=hist)
        if trajectory:
            # a product state: each factor's moments follow from its own history
            for k in range(field.n + 1):
                row = [k, k * field.dt]
                for i, (c, s) in enumerate(ops):
                    row += _local_moments(hist.U[i][k], np.asarray(factors[i], dtype=complex), (c, s))
                traj.append(row)
    else:
        psi = P.propagate(method, spec, field, factors)
    return {"state": psi, "orientations": orientation_row(spec, psi, ops), "trajectory": traj}


def trajectory_header(N):
    cols = ["k", "t"]
    for i in range(1, N + 1):
        cols += [f"cos_{i}", f"sin_{i}"]
    return cols


def evaluate_result(spec, obj, factors, field, method):
    """Objective under ``method`` and under exact dynamics, plus entropies for projections."""
    psi_m = P.propagate(method, spec, field, factors)
    psi_e = P.propagate_exact(spec, field, factors)
    out = {
        "J_magnus": objective_value(obj, psi_m, spec.dims),
        "J_exact": objective_value(obj, psi_e, spec.dims),
    }
    out["difference"] = out["J_magnus"] - out["J_exact"]
    if obj.kind == "projection-onto-target":
        out["entropy_magnus"] = von_neumann_entropy(psi_m, [0], spec.dims)
        out["entropy_exact"] = von_neumann_entropy(psi_e, [0], spec.dims)
    return out


def random_fields(seed, count, n, dt, a0, n_freq=4):
    rng = np.random.default_rng(seed)
    return [fieldmod.random_test_field(rng, n, dt, a0, n_freq) for _ in range(count)]


def _overlap_cell(spec, f, methods):
    factors = ground_product_state(spec)
    hist = P.compute_local_histories(spec, f)
    exact = P.propagate_exact(spec, f, factors)
    out = {}
    for m in methods:
        out[m] = P.overlap(P.propagate(m, spec, f, factors, hist=hist), exact)
    return out


def overlap_benchmark(build_spec, separations, test_fields, methods=("zeroth", "magnus1"), coupling_scale=1.0, workers=1):
    """Overlaps with the exact final state for every separation and field.

    ``build_spec(R)`` returns the system at separation ``R`` (meters). The
    same fields are reused at every separation.

    Returns
    -------
    rows : list of dict
        One row per ``(R, field, method)``.
    summary : list of dict
        Mean and sample standard deviation per ``(R, method)``.
    """
    for m in methods:
        if m not in ("zeroth", "magnus1", "magnus2"):
            raise ConfigError(f"overlap benchmark compares approximations; {m!r} is not one")
    cells = [(R, j) for R in separations for j in range(len(test_fields))]
    specs = {R: build_spec(R).with_coupling_scale(coupling_scale) for R in separations}

    def run(cell):
        R, j = cell
        return _overlap_cell(specs[R], test_fields[j], methods)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, cells))
    else:
        results = [run(c) for c in cells]

    rows = []
    for (R, j), res in zip(cells, results):
        for m in methods:
            rows.append({"R": R, "field": j, "method": m, "overlap": res[m]})
    rows.sort(key=lambda r: (r["R"], r["method"], r["field"]))
    summary = []
    for R in sorted(separations):
        for m in sorted(methods):
            vals = np.array([r["overlap"] for r in rows if r["R"] == R and r["method"] == m])
            std = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
            summary.append({"R": R, "method": m, "mean": float(np.mean(vals)), "std": std, "count": int(vals.size)})
    return rows, summary


def symmetry_relations(N):
    """Named linear relations between orientation moments that must vanish.

    Each relation is ``(name, coefficients)`` over the row layout of
    :func:`orientation_row` (``cos_1, sin_1, cos_2, sin_2, ...``).
    """
    if N == 2:
        return [("cos1=cos2", {0: 1.0, 2: -1.0}), ("sin1=sin2", {1: 1.0, 3: -1.0})]
    if N == 3:
        return [
            ("cos1=cos3", {0: 1.0, 4: -1.0}),
            ("sin1=-sin3", {1: 1.0, 5: 1.0}),
            ("sin2=0", {3: 1.0}),
        ]
    raise ConfigError(f"no symmetry relations defined for {N} rotors")


def symmetry_check(spec, test_fields, tol=1e-8):
    """Largest violation of the symmetry relations over all fields and steps.

    Returns a dict with ``passed`` and the worst ``(field, k, t, relation,
    residual)``.
    """
    relations = symmetry_relations(spec.N)
    ops = _local_ops(spec)
    factors = ground_product_state(spec)
    worst = {"field": None, "k": None, "t": None, "relation": None, "residual": 0.0}
    per_relation = {name: 0.0 for name, _ in relations}
    for j, f in enumerate(test_fields):

        def observe(k, psi):
            row = orientation_row(spec, psi, ops)
            for name, coef in relations:
                r = abs(sum(c * row[idx] for idx, c in coef.items()))
                per_relation[name] = max(per_relation[name], r)
                if r > worst["residual"]:
                    worst.update(field=j, k=k, t=k * f.dt, relation=name, residual=r)

        P.propagate_exact(spec, f, factors, observe=observe)
    return {"passed": worst["residual"] <= tol, "tol": tol, "worst": worst, "max_residual": per_relation}


def timing(spec, field, methods, repeat=3):
    """Median wall-clock time and full-space exp-action count per method."""
    factors = ground_product_state(spec)
    rows = []
    for m in methods:
        times = []
        for _ in range(repeat):
            with track() as counts:
                t0 = time.perf_counter()
                P.propagate(m, spec, field, factors)
                times.append(time.perf_counter() - t0)
        rows.append({"method": m, "median_seconds": float(np.median(times)), "expm_multiply_calls": counts["expm_multiply"]})
    base = {r["method"]: r["median_seconds"] for r in rows}.get("exact")
    for r in rows:
        r["exact_over_method"] = base / r["median_seconds"] if base is not None and r["median_seconds"] > 0 else math.nan
    return rows


def state_rows(spec, psi):
    """``(index, m_1, ..., m_N, re, im)`` rows for the full-space amplitudes."""
    ms = [np.arange(d) - (d - 1) // 2 for d in spec.dims]
    grid = np.array(np.unravel_index(np.arange(spec.dim), spec.dims)).T
    return [[idx] + [int(ms[i][g]) for i, g in enumerate(grid[idx])] + [psi[idx].real, psi[idx].imag] for idx in range(spec.dim)]


def unit_norm_defect(psi):
    return abs(float(np.linalg.norm(psi)) - 1.0)

