"""Stochastic hill climbing over discretized control fields."""

import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import fields as fieldmod
from .errors import ConfigError, MagnusCtlError, OptimizationError
from .observables import objective_value
from .propagators import METHODS, propagate


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for :func:`optimize`.

    ``batch > 1`` draws that many perturbations per iteration, evaluates them
    concurrently and keeps the best strict improvement. This changes the
    search path, so the default is the sequential one-candidate loop.
    """

    j_thresh: float
    max_iters: int
    perturb_scale: float = 0.02
    seed: int = 0
    propagator: str = "magnus1"
    log_every: int = 0
    n_freq: int = 4
    batch: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError("max_iters must be at least 1")
        if not self.perturb_scale >= 0:
            raise ConfigError("perturb_scale must be non-negative")
        if self.propagator not in METHODS:
            raise ConfigError(f"unknown propagator {self.propagator!r}; choose from {METHODS}")
        if self.log_every < 0 or self.n_freq < 1 or self.batch < 1 or self.workers < 1:
            raise ConfigError("log_every must be >= 0 and n_freq, batch, workers >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True, eq=False)
class OptimizationResult:
    best_field: fieldmod.FieldGrid
    j_trace: list
    accepted_count: int
    seed: int
    terminated_by: str
    j_trial: float = math.nan
    iterations: int = 0
    config: OptimizerConfig | None = field(default=None, repr=False)

    @property
    def j_best(self):
        return self.j_trace[-1][1]


def _evaluate(spec, obj, psi0, f, method):
    return objective_value(obj, propagate(method, spec, f, psi0), spec.dims)


def optimize(spec, obj, psi0, trial, cfg, out=None):
    """Maximize ``obj`` at the final time starting from the ``trial`` field.

    Each iteration perturbs the best field so far, evaluates the objective
    with ``cfg.propagator`` and keeps the change only if the objective
    strictly increases. The search stops once the best value reaches
    ``cfg.j_thresh`` (checked on the trial field too) or after
    ``cfg.max_iters`` iterations.

    Parameters
    ----------
    psi0 : list of ndarray or ndarray
        Initial state; per-factor vectors are required for ``zeroth``.
    out : file-like, optional
        Destination of progress lines; defaults to standard output.

    Raises
    ------
    OptimizationError
        If the forward model fails; the iteration index is attached.
    """
    out = sys.stdout if out is None else out
    rng = np.random.default_rng(cfg.seed)

    def evaluate(f, it):
        try:
            return _evaluate(spec, obj, psi0, f, cfg.propagator)
        except MagnusCtlError as exc:
            raise OptimizationError(str(exc), it) from exc

    best = trial
    j_best = j_trial = evaluate(trial, 0)
    trace = [(0, j_best)]
    accepted = 0
    it = 0
    terminated = "threshold" if j_best >= cfg.j_thresh else "iteration-cap"
    pool = ThreadPoolExecutor(cfg.workers) if cfg.batch > 1 and cfg.workers > 1 else None
    try:
        while terminated != "threshold" and it < cfg.max_iters:
            it += 1
            # candidates are drawn before any evaluation so the random stream
            # depends on the iteration count only
            cands = [fieldmod.perturb(best, rng, cfg.perturb_scale, cfg.n_freq) for _ in range(cfg.batch)]
            if pool is not None:
                scores = list(pool.map(lambda f: evaluate(f, it), cands))
            else:
                scores = [evaluate(f, it) for f in cands]
            k = int(np.argmax(scores))
            if scores[k] > j_best:
                best, j_best = cands[k], scores[k]
                accepted += 1
            trace.append((it, j_best))
            if cfg.log_every and it % cfg.log_every == 0:
                print(f"iter {it} J_best {j_best:.12g} accepted {accepted}", file=out, flush=True)
            if j_best >= cfg.j_thresh:
                terminated = "threshold"
    finally:
        if pool is not None:
            pool.shutdown()
    return OptimizationResult(best, trace, accepted, cfg.seed, terminated, j_trial, it, cfg)
