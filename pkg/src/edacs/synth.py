"""Random problem instances in the differenced domain.

An instance is ``Dy = D T_h x + alpha Db + n`` where ``x`` has ``s``
exponential(mean 2) spikes plus a dense Gaussian perturbation of l1 norm
``delta``, ``Db`` has ``c`` standard-normal jumps plus a perturbation of
l1 norm ``gamma``, and ``n`` is Gaussian rescaled to l2 norm ``epsilon``.

Randomness comes from numpy's PCG64 generator.  A single integer seed is
split with :class:`numpy.random.SeedSequence` into independent streams
for the events, the baseline and the noise, so an instance is a pure
function of its configuration.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .signals import (
    BaselineDiff,
    DifferencedConvolution,
    ImpulseResponse,
    ScrEvents,
    Signal,
    build_impulse_response,
    convolve,
)

EVENT_MEAN = 2.0


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _rescaled_gaussian(rng, n, norm, ord):
    """Standard normal vector rescaled to the given norm (redrawn if it is zero)."""
    if n == 0:
        return np.zeros(0)
    while True:
        g = rng.standard_normal(n)
        size = np.linalg.norm(g, ord=ord)
        if size > 0:
            return g * (norm / size)


def gen_events(T, s, delta, seed):
    """Event train with ``s`` exponential spikes and an l1-``delta`` dense perturbation."""
    if not 0 <= s <= T:
        raise ValueError(f"need 0 <= s <= T, got s={s}, T={T}")
    if delta < 0:
        raise ValueError("delta must be non-negative")
    rng = _rng(seed)
    x = np.zeros(T)
    support = rng.choice(T, size=s, replace=False)
    x[support] = rng.exponential(EVENT_MEAN, size=s)
    x += _rescaled_gaussian(rng, T, delta, 1)
    return ScrEvents(x, s, delta)


def gen_baseline_diff(n, c, gamma, seed):
    """Differenced baseline with ``c`` standard-normal jumps and an l1-``gamma`` perturbation."""
    if not 0 <= c <= n:
        raise ValueError(f"need 0 <= c <= n, got c={c}, n={n}")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    rng = _rng(seed)
    db = np.zeros(n)
    support = rng.choice(n, size=c, replace=False)
    db[support] = rng.standard_normal(c)
    db += _rescaled_gaussian(rng, n, gamma, 1)
    return BaselineDiff(db, c, gamma)


def integrate_baseline(db, level=0.0):
    """Invert the difference operator: ``b[0] = level`` and ``b[i] - b[i+1] = db[i]``."""
    db = np.asarray(db, dtype=float)
    return level - np.concatenate(([0.0], np.cumsum(db)))


@dataclass(frozen=True)
class SynthConfig:
    T: int = 240
    s: int = 10
    c: int = 10
    delta: float = 0.01
    gamma: float = 0.01
    epsilon: float = 0.01
    alpha: float = 0.01
    seed: int = 0
    tau1: float = 10.0
    tau2: float = 1.0
    sample_rate_hz: float = 4.0
    ir_duration_s: float = 40.0

    def impulse_response(self):
        return build_impulse_response(self.tau1, self.tau2, self.sample_rate_hz, self.ir_duration_s)

    def validate(self, t):
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if not 0 <= self.s <= self.T:
            raise ValueError(f"s={self.s} exceeds T={self.T}")
        if not 0 <= self.c <= t + self.T - 2:
            raise ValueError(f"c={self.c} exceeds t + T - 2 = {t + self.T - 2}")
        for name in ("delta", "gamma", "epsilon", "alpha"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def replace(self, **changes):
        return SynthConfig(**{**asdict(self), **changes})


@dataclass(frozen=True)
class SynthInstance:
    config: SynthConfig
    h: ImpulseResponse
    x_true: ScrEvents
    db_true: BaselineDiff
    noise: np.ndarray
    dy_observed: np.ndarray

    def raw_signal(self, level=0.0):
        """A raw observation ``y`` whose difference is exactly ``dy_observed``.

        ``y = h * x + b`` with ``b`` the running sum of ``alpha Db + n``;
        the noise therefore appears integrated in the raw domain.
        """
        drift = integrate_baseline(self.config.alpha * self.db_true.values + self.noise, level)
        return convolve(self.h, self.x_true.values) + drift

    def baseline(self, level=0.0):
        return integrate_baseline(self.config.alpha * self.db_true.values, level)

    def write_csv(self, directory):
        """Write one CSV per component into ``directory``; returns the paths."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        parts = {
            "x_true.csv": self.x_true.values,
            "db_true.csv": self.db_true.values,
            "noise.csv": self.noise,
            "dy_observed.csv": self.dy_observed,
            "h.csv": self.h.samples,
        }
        paths = []
        for name, values in parts.items():
            path = directory / name
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["value"])
                w.writerows([repr(float(v))] for v in values)
            paths.append(path)
        return paths


def compose_observation(cfg, h=None):
    """Draw a :class:`SynthInstance` for ``cfg`` (``h`` defaults to ``cfg``'s biexponential)."""
    h = cfg.impulse_response() if h is None else h
    t = len(h.samples)
    cfg.validate(t)
    n = t + cfg.T - 2
    ev_seed, bl_seed, nz_seed = np.random.SeedSequence(cfg.seed).spawn(3)
    x = gen_events(cfg.T, cfg.s, cfg.delta, np.random.default_rng(ev_seed))
    db = gen_baseline_diff(n, cfg.c, cfg.gamma, np.random.default_rng(bl_seed))
    noise = _rescaled_gaussian(np.random.default_rng(nz_seed), n, cfg.epsilon, 2)
    A = DifferencedConvolution(h, cfg.T)
    dy = A.matvec(x.values) + cfg.alpha * db.values + noise
    return SynthInstance(cfg, h, x, db, noise, dy)


def relative_error(x_true, x_hat):
    """``||x_true - x_hat||_2 / ||x_true||_2``."""
    x_true = np.asarray(getattr(x_true, "values", x_true), dtype=float)
    x_hat = np.asarray(getattr(x_hat, "values", x_hat), dtype=float)
    if x_true.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x_true.shape} vs {x_hat.shape}")
    ref = np.linalg.norm(x_true)
    if ref == 0:
        raise ZeroDivisionError("relative error undefined for an all-zero reference")
    return float(np.linalg.norm(x_true - x_hat) / ref)


@dataclass(frozen=True)
class LabeledCorpus:
    """Simulated raw recordings with a stimulus/silence clip schedule each.

    ``schedules[i]`` lists ``(start_s, end_s, label)`` clips for
    ``signals[i]``; events were planted only inside stimulus clips.
    """

    signals: list
    schedules: list
    x_true: list
    h: ImpulseResponse
    epsilon: float


def _corpus_member(rng, h, n_clips, clip_s, gap_s, lead_s, epsilon, jumps, gamma, level):
    rate = h.sample_rate_hz
    t = len(h.samples)
    labels = np.array(["stimulus"] * n_clips + ["silence"] * n_clips)
    labels = labels[rng.permutation(labels.size)]
    schedule = []
    start = lead_s
    for label in labels:
        schedule.append((start, start + clip_s, str(label)))
        start += clip_s + gap_s
    # the last event position the model can represent is T - 1
    T = int(round(start * rate))
    x = np.zeros(T)
    for a, b, label in schedule:
        if label != "stimulus":
            continue
        lo, hi = int(round(a * rate)), int(round(b * rate))
        k = rng.integers(1, 4)
        pos = rng.choice(np.arange(lo, hi), size=k, replace=False)
        x[pos] = rng.exponential(EVENT_MEAN, size=k)
    n = t + T - 2
    db = np.zeros(n)
    db[rng.choice(n, size=jumps, replace=False)] = rng.standard_normal(jumps)
    db += _rescaled_gaussian(rng, n, gamma, 1)
    noise = _rescaled_gaussian(rng, n, epsilon, 2)
    y = convolve(h, x) + integrate_baseline(db + noise, level)
    return Signal(y, rate), schedule, x


def labeled_corpus(n_signals=9, seed=0, epsilon=0.01, clips_per_label=4, clip_s=10.0, gap_s=10.0,
                   lead_s=10.0, jumps=3, gamma=0.01, level=2.0, h=None):
    """Simulate ``n_signals`` labelled recordings for the detection pipeline.

    Each recording alternates ``clips_per_label`` stimulus and as many
    silence clips (random order, ``gap_s`` apart).  Stimulus clips receive
    one to three exponential(mean 2) events.  The baseline is
    piecewise constant with ``jumps`` standard-normal steps plus a dense
    perturbation of l1 norm ``gamma`` in the differenced domain, and the
    noise is rescaled so that the differenced observation deviates from
    the noiseless one by exactly ``epsilon`` in l2.  The recording runs
    one impulse-response length past the last clip so every stimulus
    response is observed in full.
    """
    h = build_impulse_response() if h is None else h
    streams = np.random.SeedSequence(seed).spawn(n_signals)
    signals, schedules, truths = [], [], []
    for ss in streams:
        sig, sched, x = _corpus_member(np.random.default_rng(ss), h, clips_per_label, clip_s, gap_s,
                                       lead_s, epsilon, jumps, gamma, level)
        signals.append(sig)
        schedules.append(sched)
        truths.append(x)
    return LabeledCorpus(signals, schedules, truths, h, float(epsilon))
