"""Discretized control fields.

Fields are sampled at ``t_k = k * dt`` for ``k = 1..n``; ``eps(0)`` is never
used. Times and amplitudes are in internal units (``hbar/B`` and ``B/mu``),
so the rotor transition frequency from ``|m>`` to ``|m+1>`` is ``2m + 1``.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.signal

from .errors import ConfigError


@dataclass(frozen=True, eq=False)
class FieldGrid:
    values: np.ndarray
    dt: float

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size < 1:
            raise ConfigError("a field needs at least one step")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not np.all(np.isfinite(values)):
            raise ConfigError("field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n(self):
        return self.values.size

    @property
    def T(self):
        return self.n * self.dt

    @property
    def times(self):
        return self.dt * np.arange(1, self.n + 1)

    def __add__(self, other):
        if not isinstance(other, FieldGrid) or other.n != self.n or other.dt != self.dt:
            return NotImplemented
        return FieldGrid(self.values + other.values, self.dt)

    @classmethod
    def zeros(cls, n, T):
        return cls(np.zeros(n), T / n)

    @classmethod
    def constant(cls, value, n, T):
        return cls(np.full(n, float(value)), T / n)


@dataclass(frozen=True)
class TrialFieldParams:
    """Gaussian-enveloped sum of the first ``F`` rotor transition frequencies."""

    a0: float
    b: tuple
    T: float

    def __post_init__(self):
        object.__setattr__(self, "b", tuple(float(x) for x in self.b))
        if len(self.b) < 1:
            raise ConfigError("trial field needs at least one frequency coefficient")
        if not self.T > 0:
            raise ConfigError("final time must be positive")

    @property
    def F(self):
        return len(self.b)


def transition_frequencies(count):
    """omega_m = 2m + 1 (units of B/hbar) for m = 0..count-1."""
    return 2.0 * np.arange(count) + 1.0


def gaussian_envelope(t, T):
    width = T / (2.0 * math.sqrt(7.0))
    return np.exp(-(((np.asarray(t) - T / 2.0) / width) ** 2))


def trial_field(p, n, dt=None):
    """Sample the trial field on ``n`` steps (``dt`` defaults to ``T/n``)."""
    dt = p.T / n if dt is None else dt
    t = dt * np.arange(1, n + 1)
    omega = transition_frequencies(p.F)
    carrier = np.cos(np.outer(t, omega)) @ np.asarray(p.b)
    return FieldGrid(p.a0 * gaussian_envelope(t, p.T) * carrier, dt)


def random_test_field(rng, n, dt, a0, n_freq=4):
    """Random benchmark field ``a0 sum_m b_m cos(omega_m t + delta_m)``.

    ``b_m`` is uniform on (0, 1) and ``delta_m`` uniform on (0, 2 pi); no envelope.
    """
    b = rng.uniform(0.0, 1.0, n_freq)
    delta = rng.uniform(0.0, 2.0 * math.pi, n_freq)
    t = dt * np.arange(1, n + 1)
    omega = transition_frequencies(n_freq)
    return FieldGrid(a0 * np.cos(np.outer(t, omega) + delta) @ b, dt)


def perturbation(f, rng, scale, n_freq=4):
    """Smooth random change for a hill-climbing step.

    ``scale * max|f| * G(t) * mean_m c_m cos(omega_m t + phi_m)`` with
    ``c_m ~ U[-1, 1]``, ``phi_m ~ U[0, 2 pi)`` and ``G`` the trial-field
    envelope. Averaging over the ``n_freq`` terms bounds the amplitude by
    ``scale * max|f|``. The generator is always advanced by the same amount,
    including when ``scale`` is zero.
    """
    if scale < 0:
        raise ConfigError("perturbation scale must be non-negative")
    c = rng.uniform(-1.0, 1.0, n_freq)
    phi = rng.uniform(0.0, 2.0 * math.pi, n_freq)
    amp = scale * float(np.max(np.abs(f.values)))
    if amp == 0.0:
        return np.zeros(f.n)
    t = f.times
    omega = transition_frequencies(n_freq)
    wave = np.cos(np.outer(t, omega) + phi) @ c / n_freq
    return amp * gaussian_envelope(t, f.T) * wave


def perturb(f, rng, scale, n_freq=4):
    delta = perturbation(f, rng, scale, n_freq)
    if not np.any(delta):
        return f
    return FieldGrid(f.values + delta, f.dt)


def power_spectrum(f):
    """One-sided periodogram against angular frequency.

    Returns ``(omega, density)`` with ``sum(density) * d_omega`` equal to the
    mean square of the samples.
    """
    if f.n < 2:
        raise ConfigError("power spectrum needs at least two samples")
    freq, pxx = scipy.signal.periodogram(
        f.values, fs=1.0 / f.dt, window="boxcar", detrend=False, scaling="density"
    )
    return 2.0 * math.pi * freq, pxx / (2.0 * math.pi)


def resample_hold(f, n):
    """Sample-and-hold ``f`` onto ``n`` steps over the same final time.

    A new sample at time ``t`` takes the value of the old step whose interval
    ``((k-1) dt, k dt]`` contains ``t``.
    """
    dt = f.T / n
    t = dt * np.arange(1, n + 1)
    idx = np.ceil(t / f.dt - 1e-9).astype(int) - 1
    return FieldGrid(f.values[np.clip(idx, 0, f.n - 1)], dt)


def write_csv(f, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "t", "epsilon"])
        for k, (t, e) in enumerate(zip(f.times, f.values), start=1):
            w.writerow([k, f"{t:.17g}", f"{e:.17g}"])


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"k", "t", "epsilon"}:
        raise ConfigError(f"{path}: expected columns k, t, epsilon")
    ks = [int(r["k"]) for r in rows]
    if ks != list(range(1, len(rows) + 1)):
        raise ConfigError(f"{path}: steps must run 1..n in order")
    t = np.array([float(r["t"]) for r in rows])
    dt = t[0]
    if not np.allclose(t, dt * np.arange(1, len(t) + 1), rtol=1e-12, atol=0.0):
        raise ConfigError(f"{path}: times are not a uniform grid starting at dt")
    return FieldGrid(np.array([float(r["epsilon"]) for r in rows]), dt)
