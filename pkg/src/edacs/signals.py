"""Signal containers and the structured linear operators used throughout.

Every operator works on plain 1-D numpy arrays and has a matrix-free
``apply``/``adjoint`` pair plus a dense materialisation used by the
coherence computations and by small-scale oracles in the test-suite.

Conventions
-----------
The pairwise difference operator follows ``(Dv)[i] = v[i] - v[i + 1]``
(earlier minus later).  Convolution is the full linear convolution, so
an impulse response of length ``t`` applied to an event train of length
``T`` yields ``t + T - 1`` samples.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DimensionError(ValueError):
    """Raised when operand lengths do not match an operator's shape."""


def _as_vector(v, name="vector"):
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Signal:
    """Uniformly sampled real-valued series."""

    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        arr = _as_vector(self.samples, "samples")
        if arr.size == 0:
            raise ValueError("signal must contain at least one sample")
        if not np.all(np.isfinite(arr)):
            raise ValueError("signal samples must be finite")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.sample_rate_hz


@dataclass(frozen=True)
class ImpulseResponse:
    """Sampled SCR impulse response ``h`` with the shape parameters used."""

    samples: np.ndarray
    tau1: float
    tau2: float
    sample_rate_hz: float

    def __post_init__(self):
        arr = _as_vector(self.samples, "samples")
        if arr.size == 0:
            raise ValueError("impulse response must have at least one sample")
        if not np.all(np.isfinite(arr)):
            raise ValueError("impulse response samples must be finite")
        if not (self.tau1 > 0 and self.tau2 > 0 and self.sample_rate_hz > 0):
            raise ValueError("tau1, tau2 and sample_rate_hz must be positive")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    def __len__(self):
        return self.samples.size


def _l1_tail(values, k):
    return float(np.abs(values - keep_largest(values, k)).sum())


@dataclass(frozen=True)
class ScrEvents:
    """Event train ``x`` that is ``delta``-close (in l1) to ``s``-sparse."""

    values: np.ndarray
    s: int
    delta: float

    def __post_init__(self):
        arr = _as_vector(self.values, "values").copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)
        if self.s < 0 or self.s > arr.size:
            raise ValueError(f"s={self.s} out of range for length {arr.size}")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")

    def tail_l1(self) -> float:
        """l1 distance to the best ``s``-term approximation."""
        return _l1_tail(self.values, self.s)

    def is_member(self, tol=1e-9) -> bool:
        return self.tail_l1() <= self.delta + tol


@dataclass(frozen=True)
class BaselineDiff:
    """Differenced baseline ``Db`` that is ``gamma``-close to ``c``-sparse."""

    values: np.ndarray
    c: int
    gamma: float

    def __post_init__(self):
        arr = _as_vector(self.values, "values").copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)
        if self.c < 0 or self.c > arr.size:
            raise ValueError(f"c={self.c} out of range for length {arr.size}")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")

    def tail_l1(self) -> float:
        return _l1_tail(self.values, self.c)

    def is_member(self, tol=1e-9) -> bool:
        return self.tail_l1() <= self.gamma + tol


def biexponential(u, tau1, tau2):
    """Evaluate ``2 (exp(-u/tau1) - exp(-u/tau2))`` for ``u >= 0``, zero before."""
    u = np.asarray(u, dtype=float)
    out = 2.0 * (np.exp(-u / tau1) - np.exp(-u / tau2))
    return np.where(u >= 0, out, 0.0)


def build_impulse_response(tau1=10.0, tau2=1.0, sample_rate_hz=4.0, duration=40.0):
    """Sample the biexponential SCR shape on the half-open grid ``[0, duration)``.

    With the defaults this yields 160 samples.

    Parameters
    ----------
    tau1, tau2 : float
        Slow and fast time constants in seconds, ``tau1 > tau2 > 0``.
    sample_rate_hz : float
        Sampling rate of the grid.
    duration : float
        Support length in seconds.

    Returns
    -------
    ImpulseResponse
    """
    if not (tau2 > 0 and tau1 > tau2):
        raise ValueError(f"need tau1 > tau2 > 0, got tau1={tau1}, tau2={tau2}")
    if not (sample_rate_hz > 0 and duration > 0):
        raise ValueError("sample_rate_hz and duration must be positive")
    # round() guards against 40 * 4 landing at 159.99999 in floating point
    n = int(math.ceil(round(duration * sample_rate_hz, 9)))
    u = np.arange(n) / sample_rate_hz
    return ImpulseResponse(biexponential(u, tau1, tau2), tau1, tau2, sample_rate_hz)


def _samples(obj):
    if isinstance(obj, (Signal, ImpulseResponse)):
        return obj.samples
    if isinstance(obj, (ScrEvents, BaselineDiff)):
        return obj.values
    return _as_vector(obj)


def convolve(h, x):
    """Full linear convolution ``h * x`` (length ``t + T - 1``)."""
    h = _samples(h)
    x = _samples(x)
    if h.size == 0 or x.size == 0:
        raise DimensionError("convolution operands must be non-empty")
    return np.convolve(h, x)


def toeplitz_adjoint_apply(h, r):
    """Apply the transpose of the convolution matrix: a valid-mode correlation."""
    h = _samples(h)
    r = _as_vector(r, "r")
    t = h.size
    if r.size < t:
        raise DimensionError(f"residual length {r.size} shorter than impulse response {t}")
    # (T_h^T r)[j] = sum_k h[k] r[j + k]
    return np.correlate(r, h, mode="valid")


def toeplitz_matrix(h, T):
    """Dense ``(t + T - 1) x T`` convolution matrix."""
    h = _samples(h)
    t = h.size
    M = np.zeros((t + T - 1, T))
    for j in range(T):
        M[j:j + t, j] = h
    return M


def difference_apply(v):
    v = _as_vector(v, "v")
    if v.size < 2:
        raise DimensionError("difference operator needs at least two samples")
    return v[:-1] - v[1:]


def difference_adjoint_apply(w):
    """``D^T w`` for a difference output ``w`` of length ``n - 1``."""
    w = _as_vector(w, "w")
    if w.size < 1:
        raise DimensionError("adjoint difference needs at least one sample")
    out = np.zeros(w.size + 1)
    out[:-1] += w
    out[1:] -= w
    return out


def difference_matrix(n):
    """Dense ``(n - 1) x n`` pairwise difference matrix."""
    if n < 2:
        raise DimensionError("difference matrix needs n >= 2")
    D = np.zeros((n - 1, n))
    idx = np.arange(n - 1)
    D[idx, idx] = 1.0
    D[idx, idx + 1] = -1.0
    return D


class DifferencedConvolution:
    """Matrix-free ``A = D T_h`` mapping ``R^T`` to ``R^(t + T - 2)``."""

    def __init__(self, h, T):
        self.h = np.array(_samples(h), dtype=float)
        self.T = int(T)
        if self.T < 1:
            raise DimensionError("T must be at least 1")
        if self.h.size + self.T - 1 < 2:
            raise DimensionError("t + T - 1 must be at least 2")
        self.shape = (self.h.size + self.T - 2, self.T)

    def matvec(self, x):
        x = _as_vector(x, "x")
        if x.size != self.T:
            raise DimensionError(f"expected length {self.T}, got {x.size}")
        return difference_apply(np.convolve(self.h, x))

    def rmatvec(self, r):
        r = _as_vector(r, "r")
        if r.size != self.shape[0]:
            raise DimensionError(f"expected length {self.shape[0]}, got {r.size}")
        return toeplitz_adjoint_apply(self.h, difference_adjoint_apply(r))

    def columns(self, idx):
        """Dense ``A[:, idx]`` without materialising the whole operator."""
        idx = np.asarray(idx, dtype=int)
        t = self.h.size
        out = np.zeros((self.shape[0] + 1, idx.size))
        for k, j in enumerate(idx):
            out[j:j + t, k] = self.h
        return out[:-1] - out[1:]

    def to_dense(self):
        return difference_matrix(self.h.size + self.T - 1) @ toeplitz_matrix(self.h, self.T)


def keep_largest(v, k):
    """Zero all but the ``k`` largest-magnitude entries; ties go to the lower index."""
    v = _as_vector(v, "v")
    if not 0 <= k <= v.size:
        raise ValueError(f"k={k} out of range for length {v.size}")
    out = np.zeros_like(v)
    if k:
        keep = np.argsort(-np.abs(v), kind="stable")[:k]
        out[keep] = v[keep]
    return out


def downsample(sig, target_rate_hz):
    """Block-mean decimation to ``target_rate_hz``.

    The source rate must be an integer multiple of the target rate.  A
    trailing partial block is discarded.
    """
    ratio = sig.sample_rate_hz / target_rate_hz
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9 * ratio:
        raise ValueError(
            f"source rate {sig.sample_rate_hz} Hz is not an integer multiple of {target_rate_hz} Hz"
        )
    n_blocks = sig.samples.size // factor
    if n_blocks == 0:
        raise ValueError("signal shorter than one decimation block")
    blocks = sig.samples[: n_blocks * factor].reshape(n_blocks, factor)
    return Signal(blocks.mean(axis=1), float(target_rate_hz))


def power_iteration_norm(apply, adjoint, n, iters=200, seed=0):
    """Largest singular value of a matrix-free operator via power iteration."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iters):
        w = adjoint(apply(v))
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        sigma = math.sqrt(nw)
        v = w / nw
    return sigma


def read_signal_csv(path, sample_rate_hz):
    """Load a one-sample-per-row CSV with an optional ``time,value``/``value`` header."""
    values = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or not "".join(row).strip():
                continue
            cell = row[-1].strip()
            try:
                values.append(float(cell))
            except ValueError:
                if i == 0:
                    continue  # header
                raise ValueError(f"{path}: row {i + 1} is not numeric: {row!r}") from None
    return Signal(np.array(values), sample_rate_hz)


def write_series_csv(path, values, sample_rate_hz=None, column="value"):
    """Write a series as ``time,value`` (when a rate is given) or ``value`` rows."""
    values = np.asarray(values, dtype=float)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        if sample_rate_hz is None:
            w.writerow([column])
            w.writerows([repr(float(v))] for v in values)
        else:
            w.writerow(["time", column])
            for k, v in enumerate(values):
                w.writerow([repr(k / sample_rate_hz), repr(float(v))])
