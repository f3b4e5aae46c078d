"""Mutual coherence of the composite dictionary ``[D T_h  I]``.

The recovery condition compares the combined sparsity ``s + c`` with::

    max{ 2 (1 + mu_h) / (mu_h + 2 mu_c + sqrt(mu_h^2 + mu_m^2)),
         (1 + mu_c) / (2 mu_c) }

where ``mu_h`` is the coherence among the columns of ``D T_h``, ``mu_m``
the cross coherence between those columns and the identity, and ``mu_c``
the coherence of the full dictionary.  The identity block contributes no
coherence of its own, so ``mu_c = max(mu_h, mu_m)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .signals import DifferencedConvolution, _samples

IDENTITY_TOL = 1e-12


class ZeroColumnError(ValueError):
    """A column of ``D T_h`` vanished, so coherence is undefined."""


@dataclass(frozen=True)
class CoherenceReport:
    mu_h: float
    mu_m: float
    mu_c: float
    column_norms: np.ndarray
    T: int
    t: int

    @property
    def sparsity_threshold(self) -> float:
        return sparsity_threshold(self.mu_h, self.mu_m, self.mu_c)

    def condition_holds(self, s, c) -> bool:
        return sparsity_condition(self, s, c)[0]

    def as_dict(self):
        return {
            "T": self.T,
            "t": self.t,
            "mu_h": self.mu_h,
            "mu_m": self.mu_m,
            "mu_c": self.mu_c,
            "sparsity_threshold": self.sparsity_threshold,
            "min_column_norm": float(self.column_norms.min()),
            "max_column_norm": float(self.column_norms.max()),
        }


def _dense_operator(h, T):
    h = _samples(h)
    if not np.any(h):
        raise ZeroColumnError("impulse response is identically zero")
    return DifferencedConvolution(h, T).to_dense()


def gram_coherence(h, T):
    """Coherence values from the sub-blocks of the normalised Gram matrix.

    Returns ``(mu_h, mu_m, mu_c, column_norms)``.
    """
    M = _dense_operator(h, T)
    norms = np.linalg.norm(M, axis=0)
    if np.any(norms == 0):
        raise ZeroColumnError(f"columns {np.flatnonzero(norms == 0).tolist()} of D T_h are zero")
    Mn = M / norms  # D T_h Lambda
    G = Mn.T @ Mn - np.eye(T)
    mu_h = float(np.abs(G).max()) if T > 1 else 0.0
    mu_m = float(np.abs(Mn).max())
    return mu_h, mu_m, max(mu_h, mu_m), norms


def pairwise_coherence(h, T):
    """Coherence straight from the pairwise definitions, column by column.

    Slow (``O(T^2)`` inner products of unnormalised columns) and kept as an
    independent cross-check on :func:`gram_coherence`.  Returns
    ``(mu_h, mu_m, mu_c)`` where ``mu_c`` is maximised over every distinct
    pair of columns of the full dictionary ``[D T_h  I]``.
    """
    M = _dense_operator(h, T)
    cols = [M[:, i] for i in range(T)]
    norms = [math.sqrt(float(col @ col)) for col in cols]
    if any(v == 0.0 for v in norms):
        raise ZeroColumnError("D T_h has a zero column")
    mu_h = 0.0
    for i in range(T):
        for j in range(i + 1, T):
            mu_h = max(mu_h, abs(float(cols[i] @ cols[j])) / (norms[i] * norms[j]))
    # t_i^T e_j is the j-th entry of t_i and ||e_j|| = 1
    mu_m = max(float(np.abs(cols[i]).max()) / norms[i] for i in range(T))
    # distinct identity columns are orthogonal, so identity pairs add 0
    mu_c = max(mu_h, mu_m, 0.0)
    return mu_h, mu_m, mu_c


def coherence_params(h, T, check=True):
    """Compute the :class:`CoherenceReport` for impulse response ``h`` and ``T`` events.

    With ``check`` (the default) the pairwise definitions are evaluated too
    and must agree with the Gram formulation to ``1e-12``.
    """
    h_arr = _samples(h)
    if h_arr.size + T - 1 < 2:
        raise ValueError("need t + T - 1 >= 2")
    mu_h, mu_m, mu_c, norms = gram_coherence(h_arr, T)
    if check:
        ph, pm, pc = pairwise_coherence(h_arr, T)
        if max(abs(ph - mu_h), abs(pm - mu_m), abs(pc - mu_c)) > IDENTITY_TOL:
            raise ArithmeticError(
                f"coherence formulations disagree: gram=({mu_h}, {mu_m}, {mu_c}) "
                f"pairwise=({ph}, {pm}, {pc})"
            )
    assert mu_c == max(mu_h, mu_m)
    return CoherenceReport(mu_h, mu_m, mu_c, norms, int(T), int(h_arr.size))


def sparsity_threshold(mu_h, mu_m, mu_c):
    """Right-hand side of the recovery condition; ``inf`` where a branch is ``x/0``."""
    den1 = mu_h + 2.0 * mu_c + math.sqrt(mu_h * mu_h + mu_m * mu_m)
    first = math.inf if den1 == 0 else 2.0 * (1.0 + mu_h) / den1
    second = math.inf if mu_c == 0 else (1.0 + mu_c) / (2.0 * mu_c)
    return max(first, second)


def sparsity_condition(report, s, c):
    """Return ``(holds, threshold)`` for combined sparsity ``s + c``."""
    if s < 0 or c < 0:
        raise ValueError("s and c must be non-negative")
    thr = sparsity_threshold(report.mu_h, report.mu_m, report.mu_c)
    return (s + c) < thr, thr


def error_bound_note(report, s, c):
    """Qualitative recovery certificate for ``(s, c)``.

    Only the regime is reported: the constants of the error bound are not
    available in closed form.
    """
    holds, thr = sparsity_condition(report, s, c)
    return {
        "s": s,
        "c": c,
        "mu_h": report.mu_h,
        "mu_m": report.mu_m,
        "mu_c": report.mu_c,
        "sparsity_threshold": thr,
        "condition_holds": holds,
        "certificate": "bounded-error regime" if holds else "no guarantee",
        "bound_form": "||x - x_hat||_2 <= C1 (eps + eta) + C2 (delta + gamma)",
    }
