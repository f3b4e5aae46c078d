"""Evaluation protocols: the synthetic phase diagram and windowed event detection."""

from __future__ import annotations

import csv
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .signals import ImpulseResponse, build_impulse_response, downsample
from .solver import SolverConfig, solve, solve_differenced
from .synth import SynthConfig, compose_observation, relative_error

logger = logging.getLogger(__name__)

DESK_S_VALUES = (5, 25, 45, 65, 85)
DESK_C_VALUES = (5, 50, 100, 200)
DESK_TRIALS = 5
FULL_S_VALUES = tuple(range(5, 231, 5))
FULL_C_VALUES = tuple(range(5, 351, 5))
FULL_TRIALS = 30

# Published real-data AUCs, kept for context only (the recordings are not public).
REFERENCE_AUC = {
    4.0: {"unconstrained": 0.848, "nonneg": 0.825, "cvxeda": 0.622, "raw_signal": 0.539, "ledalab": 0.817},
    8.0: {"unconstrained": 0.857, "nonneg": 0.821, "cvxeda": 0.771, "raw_signal": 0.493, "ledalab": 0.824},
    32.0: {"unconstrained": 0.868, "nonneg": 0.895, "cvxeda": 0.819, "raw_signal": 0.514, "ledalab": 0.837},
}

LABELS = ("stimulus", "silence")
AGGREGATION_RULES = ("clamp", "raw", "abs")


# ---------------------------------------------------------------- phase diagram


@dataclass
class PhaseDiagramGrid:
    s_values: list
    c_values: list
    alpha: float
    trials: int
    cell_errors: np.ndarray
    cell_stddevs: np.ndarray
    unconverged: np.ndarray = None
    trial_errors: np.ndarray = None

    def rows(self):
        for i, s in enumerate(self.s_values):
            for j, c in enumerate(self.c_values):
                yield {
                    "s": s,
                    "c": c,
                    "alpha": self.alpha,
                    "trial_count": self.trials,
                    "mean_rel_error": float(self.cell_errors[i, j]),
                    "std_rel_error": float(self.cell_stddevs[i, j]),
                }

    def write_csv(self, path):
        cols = ["s", "c", "alpha", "trial_count", "mean_rel_error", "std_rel_error"]
        with open(Path(path), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for row in self.rows():
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def _phase_trial(args):
    cfg, solver_cfg = args
    inst = compose_observation(cfg)
    res = solve_differenced(inst.dy_observed, inst.h, solver_cfg)
    return relative_error(inst.x_true, res.x_hat), res.converged


def run_phase_diagram(base_cfg=SynthConfig(), s_values=DESK_S_VALUES, c_values=DESK_C_VALUES,
                      trials=DESK_TRIALS, eta_factor=1.05, solver_cfg=None, workers=1):
    """Mean relative recovery error over an ``(s, c)`` grid.

    Trial ``k`` of cell ``(i, j)`` uses seed ``base_cfg.seed + index`` with
    ``index = (i * len(c_values) + j) * trials + k``, so results do not
    depend on ``workers``.  Unconverged solves still contribute their
    error and are counted in ``unconverged``.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    s_values, c_values = list(s_values), list(c_values)
    h = base_cfg.impulse_response()
    t = len(h.samples)
    for s in s_values:
        if not 0 <= s <= base_cfg.T:
            raise ValueError(f"s={s} out of range for T={base_cfg.T}")
    for c in c_values:
        if not 0 <= c <= t + base_cfg.T - 2:
            raise ValueError(f"c={c} out of range for t + T - 2 = {t + base_cfg.T - 2}")
    solver_cfg = replace(solver_cfg or SolverConfig(), eta=eta_factor * base_cfg.epsilon)

    tasks = []
    for i, s in enumerate(s_values):
        for j, c in enumerate(c_values):
            for k in range(trials):
                index = (i * len(c_values) + j) * trials + k
                tasks.append((base_cfg.replace(s=s, c=c, seed=base_cfg.seed + index), solver_cfg))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_phase_trial, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        out = [_phase_trial(task) for task in tasks]

    shape = (len(s_values), len(c_values), trials)
    errors = np.array([e for e, _ in out]).reshape(shape)
    bad = (~np.array([ok for _, ok in out])).reshape(shape).sum(axis=2)
    if bad.any():
        logger.warning("%d of %d phase-diagram solves hit max_iters", int(bad.sum()), len(out))
    return PhaseDiagramGrid(s_values, c_values, base_cfg.alpha, trials,
                            errors.mean(axis=2), errors.std(axis=2), bad, errors)


# ---------------------------------------------------------------- detection


@dataclass(frozen=True)
class Window:
    start: int
    end: int  # exclusive
    label: str


@dataclass
class DetectionWindows:
    windows: list
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.windows)

    def __iter__(self):
        return iter(self.windows)


def read_clip_schedule(path):
    """Read ``start_s,end_s,label`` rows."""
    clips = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            clips.append((float(row["start_s"]), float(row["end_s"]), row["label"].strip()))
    return clips


def write_clip_schedule(path, clips):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["start_s", "end_s", "label"])
        for a, b, label in clips:
            w.writerow([repr(float(a)), repr(float(b)), label])


def build_windows(clip_times, sample_rate, signal_len, window_s=None):
    """Convert a clip schedule in seconds to sample-index windows.

    A window covers ``[round(start * rate), round(end * rate))``; with
    ``window_s`` every window instead spans ``window_s`` seconds from the
    clip start.  Windows running past ``signal_len`` are clipped with a
    warning; windows starting outside the signal, inverted clips, unknown
    labels and overlaps raise ``ValueError``.
    """
    if sample_rate <= 0:
        raise ValueError("sample_rate must be positive")
    out, notes = [], []
    for start_s, end_s, label in clip_times:
        if label not in LABELS:
            raise ValueError(f"unknown label {label!r}; expected one of {LABELS}")
        if window_s is not None:
            end_s = start_s + window_s
        if end_s <= start_s:
            raise ValueError(f"clip [{start_s}, {end_s}] is empty or inverted")
        a = int(round(start_s * sample_rate))
        b = int(round(end_s * sample_rate))
        if a < 0 or a >= signal_len:
            raise ValueError(f"clip starting at {start_s} s lies outside the signal ({signal_len} samples)")
        if b > signal_len:
            msg = f"clip [{start_s}, {end_s}] s clipped to {signal_len} samples"
            warnings.warn(msg, stacklevel=2)
            notes.append(msg)
            b = signal_len
        out.append(Window(a, b, label))
    out.sort(key=lambda w: w.start)
    for prev, cur in zip(out, out[1:]):
        if cur.start < prev.end:
            raise ValueError(f"windows [{prev.start}, {prev.end}) and [{cur.start}, {cur.end}) overlap")
    return DetectionWindows(out, notes)


def aggregate_events(x_hat, windows, rule="clamp"):
    """Score each window by summing event coefficients inside it.

    ``rule`` is ``"clamp"`` (negative coefficients count as zero),
    ``"raw"`` or ``"abs"``.  Returns a list of ``(window, score)``.
    """
    x_hat = np.asarray(x_hat, dtype=float)
    if rule == "clamp":
        v = np.maximum(x_hat, 0.0)
    elif rule == "raw":
        v = x_hat
    elif rule == "abs":
        v = np.abs(x_hat)
    else:
        raise ValueError(f"unknown aggregation rule {rule!r}")
    out = []
    for w in windows:
        if not 0 <= w.start < w.end <= x_hat.size:
            raise ValueError(f"window [{w.start}, {w.end}) invalid for length {x_hat.size}")
        out.append((w, float(v[w.start:w.end].sum())))
    return out


@dataclass
class RocResult:
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float

    def write_csv(self, path):
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "fpr", "tpr"])
            for row in zip(self.thresholds, self.fpr, self.tpr):
                w.writerow([repr(float(v)) for v in row])


def _split(scores):
    pos, neg = [], []
    for score, label in scores:
        positive = label == "stimulus" if isinstance(label, str) else bool(label)
        if isinstance(label, str) and label not in LABELS:
            raise ValueError(f"unknown label {label!r}")
        (pos if positive else neg).append(float(score))
    if not pos or not neg:
        raise ValueError("ROC needs at least one window of each label")
    return np.array(pos), np.array(neg)


def roc_auc(scores):
    """ROC curve and area from ``(score, label)`` pairs.

    A window is detected when its score is at least the threshold.  The
    sweep runs from ``+inf`` through every distinct score (descending) to
    ``-inf``; the area is the trapezoidal integral of TPR over FPR.
    Labels are ``"stimulus"``/``"silence"`` or truthy/falsy values.
    """
    pos, neg = _split(scores)
    distinct = np.unique(np.concatenate([pos, neg]))[::-1]
    thresholds = np.concatenate([[np.inf], distinct, [-np.inf]])
    pos_sorted, neg_sorted = np.sort(pos), np.sort(neg)
    # count of scores >= threshold
    tp = pos.size - np.searchsorted(pos_sorted, thresholds, side="left")
    fp = neg.size - np.searchsorted(neg_sorted, thresholds, side="left")
    tpr = tp / pos.size
    fpr = fp / neg.size
    auc = float(np.trapezoid(tpr, fpr))
    return RocResult(thresholds, tpr, fpr, auc)


def rank_auc(scores):
    """Mann-Whitney estimate of the AUC with ties counted as one half."""
    pos, neg = _split(scores)
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


@dataclass
class DetectionOutcome:
    variant: str
    roc: RocResult
    scores: list
    failures: list
    unconverged: int


def _schedules_for(clip_times, n):
    """One schedule per signal; a single flat schedule is shared by all."""
    clip_times = list(clip_times)
    flat = all(len(c) == 3 and not isinstance(c[0], (list, tuple)) for c in clip_times)
    if flat:
        return [clip_times] * n
    if len(clip_times) != n:
        raise ValueError(f"got {len(clip_times)} clip schedules for {n} signals")
    return clip_times


def _impulse_at(h, rate):
    if isinstance(h, ImpulseResponse) and abs(h.sample_rate_hz - rate) <= 1e-9 * rate:
        return h
    if not isinstance(h, ImpulseResponse):
        raise ValueError("h must be an ImpulseResponse to be resampled")
    duration = len(h.samples) / h.sample_rate_hz
    return build_impulse_response(h.tau1, h.tau2, rate, duration)


def run_detection_experiment(signals, clip_times, h=None, cfg=SolverConfig(), downsample_to=None,
                             rule="clamp", variants=("unconstrained", "nonneg"), window_s=None):
    """Windowed event detection pooled over all ``signals``.

    Each signal is optionally decimated, decomposed with ``cfg`` (once
    without and once with the ``x >= 0`` constraint), and every clip window
    is scored with :func:`aggregate_events`.  Scores are pooled across
    signals before the ROC is computed.  A failure on one signal is
    recorded in ``failures`` and does not stop the batch.

    Returns a dict mapping variant name to :class:`DetectionOutcome`.
    """
    if not signals:
        raise ValueError("no signals given")
    rates = {s.sample_rate_hz for s in signals}
    if len(rates) != 1:
        raise ValueError(f"signals do not share a sampling rate: {sorted(rates)}")
    schedules = _schedules_for(clip_times, len(signals))
    h = build_impulse_response() if h is None else h
    outcomes = {}
    for variant in variants:
        if variant not in ("unconstrained", "nonneg"):
            raise ValueError(f"unknown variant {variant!r}")
        vcfg = replace(cfg, nonneg_x=(variant == "nonneg"))
        pooled, failures, bad = [], [], 0
        for k, (sig, sched) in enumerate(zip(signals, schedules)):
            try:
                work = downsample(sig, downsample_to) if downsample_to else sig
                hk = _impulse_at(h, work.sample_rate_hz)
                res = solve(work, hk, vcfg)
                bad += not res.converged
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    wins = build_windows(sched, work.sample_rate_hz, res.x_hat.size, window_s)
                for w, score in aggregate_events(res.x_hat, wins, rule):
                    pooled.append((score, w.label))
            except (ValueError, ArithmeticError) as exc:
                logger.warning("signal %d (%s) failed: %s", k, variant, exc)
                failures.append((k, str(exc)))
        outcomes[variant] = DetectionOutcome(variant, roc_auc(pooled), pooled, failures, bad)
    return outcomes
