"""Ball-constrained l1 decomposition of a differenced EDA observation.

Solves::

    minimize    ||x||_1 + ||u||_1
    subject to  ||Dy - (D T_h x + u)||_2 <= eta        (optionally x >= 0)

with an alternating direction method of multipliers.  The variable
``w = (x, u)`` is copied into three splitting blocks ``p = x``, ``q = u``
and ``r = A x + u`` (``A = D T_h``), which are handled by soft
thresholding, soft thresholding and projection onto the ``eta`` ball
respectively.  The coupled least-squares step reduces to a ``T x T``
symmetric positive-definite system solved by conjugate gradients.

Near convergence the iterate's support and signs are used to solve the
optimality conditions exactly (an active-set refinement).  When that
succeeds the result is certified optimal and the iterations stop early;
otherwise the baseline block is polished in closed form so returned
results are feasible to rounding error.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .signals import (
    DifferencedConvolution,
    DimensionError,
    ImpulseResponse,
    Signal,
    convolve,
    difference_apply,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    """Parameters for :func:`solve`.

    ``rho`` is the initial penalty, expressed for an observation rescaled to
    unit norm.  With ``adaptive_rho`` it is doubled or halved whenever the
    scaled primal and dual residuals differ by more than ``balance_ratio``;
    the wait between changes starts at ``adapt_every`` iterations and
    doubles after every change.

    Every ``polish_every`` iterations (and once at the end) the current
    support is handed to an exact active-set solve; if that produces a
    point satisfying the optimality conditions the solve stops early with
    ``stop_reason == "certified"``.

    ``linear_solver`` selects how the ``T x T`` least-squares system is
    solved: ``"cg"`` is fully matrix-free, ``"cholesky"`` factors it once,
    ``"auto"`` factors when ``T <= dense_max_T``.

    ``seed`` switches the zero start for a random one (same optimum,
    different path); ``None`` keeps the deterministic start.
    """

    eta: float = 0.14
    nonneg_x: bool = False
    max_iters: int = 20000
    tol_rel: float = 1e-6
    rho: float = 1.0
    adaptive_rho: bool = True
    balance_ratio: float = 10.0
    adapt_every: int = 10
    relaxation: float = 1.0
    linear_solver: str = "auto"
    dense_max_T: int = 2000
    cg_tol: float = 1e-12
    cg_max_iters: int = 500
    polish: bool = True
    polish_every: int = 50
    polish_max_support: int = 2000
    record_history: bool = False
    seed: int | None = None

    def __post_init__(self):
        if not self.eta >= 0:
            raise ValueError("eta must be non-negative")
        if not self.tol_rel > 0:
            raise ValueError("tol_rel must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not (self.rho > 0 and self.balance_ratio > 1 and self.cg_tol > 0):
            raise ValueError("rho, cg_tol must be positive and balance_ratio > 1")
        if self.adapt_every < 1 or self.polish_every < 1:
            raise ValueError("adapt_every and polish_every must be at least 1")
        if not 0 < self.relaxation < 2:
            raise ValueError("relaxation must lie in (0, 2)")
        if self.linear_solver not in ("auto", "cg", "cholesky"):
            raise ValueError(f"unknown linear_solver {self.linear_solver!r}")


@dataclass
class DecompositionResult:
    x_hat: np.ndarray
    u_hat: np.ndarray
    scr_signal: np.ndarray
    residual_norm: float
    objective: float
    iterations: int
    converged: bool
    eta: float = 0.0
    nonneg_x: bool = False
    stop_reason: str = ""
    history: dict = field(default_factory=dict)


def soft_threshold(v, lam):
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def project_ball(v, center, radius):
    diff = v - center
    nrm = np.linalg.norm(diff)
    if nrm <= radius:
        return v
    if nrm == 0.0:
        return center.copy()
    return center + diff * (radius / nrm)


def min_l1_in_ball(v, eta):
    """Return ``argmin ||u||_1`` subject to ``||v - u||_2 <= eta`` and its threshold.

    The minimiser is ``soft_threshold(v, lam)`` where ``lam >= 0`` solves
    ``||clip(v, -lam, lam)||_2 = eta``.  When ``||v|| <= eta`` the answer is
    ``u = 0`` and ``lam`` is reported as ``inf``.  The equation is piecewise quadratic in ``lam`` and
    is solved exactly over the sorted magnitudes.
    """
    v = np.asarray(v, dtype=float)
    a = np.abs(v)
    if np.dot(a, a) <= eta * eta:
        return np.zeros_like(v), math.inf
    if eta == 0.0:
        return v.copy(), 0.0
    s = np.sort(a)
    n = s.size
    # with lam in [s[k-1], s[k]]: sum_{i<k} s_i^2 + (n - k) lam^2
    csum = np.concatenate(([0.0], np.cumsum(s * s)))
    target = eta * eta
    lam = s[-1]
    for k in range(n):
        lo = s[k - 1] if k else 0.0
        hi = s[k]
        if csum[k] + (n - k) * hi * hi >= target:
            lam = math.sqrt(max(target - csum[k], 0.0) / (n - k))
            lam = min(max(lam, lo), hi)
            break
    return soft_threshold(v, lam), lam


def _cg(apply, b, x0, tol, max_iters):
    """Conjugate gradients for an SPD operator; serial, deterministic reductions."""
    x = x0.copy()
    r = b - apply(x)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    thresh = tol * bnorm
    rs = float(r @ r)
    if math.sqrt(rs) <= thresh:
        return x, 0
    p = r.copy()
    for it in range(1, max_iters + 1):
        Ap = apply(p)
        alpha = rs / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(r @ r)
        if math.sqrt(rs_new) <= thresh:
            return x, it
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, max_iters


def _solve_on_support(A, d, sx, su, sigma, eta):
    """KKT solve on a fixed support: returns ``(w, e, inv_nu)`` or ``None``."""
    K = np.hstack([A.columns(sx), np.eye(d.size)[:, su]])
    G = K.T @ K
    try:
        base = np.linalg.solve(G, K.T @ d)
        corr = np.linalg.solve(G, sigma)
    except np.linalg.LinAlgError:
        return None
    e0 = d - K @ base
    g = K @ corr
    gap = eta * eta - e0 @ e0
    gg = g @ g
    if gap <= 0 or gg == 0:
        return None
    inv_nu = math.sqrt(gap / gg)
    return base - inv_nu * corr, e0 + inv_nu * g, inv_nu


def _support_polish(A, d, x, u, eta, nonneg, slack=1e-9, max_passes=50, max_support=2000, prune=1e-6):
    """Solve the optimality conditions exactly on an active set seeded by ``(x, u)``.

    On a fixed support ``S`` with signs ``sigma`` the minimiser satisfies
    ``K_S^T e = sigma / nu`` with ``e = d - K_S w_S`` and ``||e|| = eta``:
    a least-squares solve plus a scalar equation for ``nu``.  Entries whose
    sign flips are dropped and the worst dual violation off the support is
    added until the candidate is optimal.  Returns ``None`` if that does not
    happen within ``max_passes``.
    """
    T = x.size
    # negligible entries are left out of the seed; the loop re-adds any that matter
    floor = prune * max(np.abs(x).max(initial=0.0), np.abs(u).max(initial=0.0))
    active = {int(i): float(np.sign(x[i])) for i in np.flatnonzero(np.abs(x) > floor)}
    active.update({T + int(i): float(np.sign(u[i])) for i in np.flatnonzero(np.abs(u) > floor)})
    for _ in range(max_passes):
        if not active or len(active) >= min(d.size, max_support + 1):
            return None
        idx = np.array(sorted(active))
        sigma = np.array([active[i] for i in idx])
        sx = idx[idx < T]
        su = idx[idx >= T] - T
        sol = _solve_on_support(A, d, sx, su, sigma, eta)
        if sol is None:
            return None
        w, e, inv_nu = sol
        flipped = np.sign(w) != sigma
        if flipped.any():
            for i in idx[flipped]:
                del active[int(i)]
            continue
        z = np.concatenate([A.rmatvec(e), e]) / inv_nu
        viol = np.maximum(np.abs(z) - 1.0, 0.0)
        if nonneg:
            viol[:T] = np.maximum(z[:T] - 1.0, 0.0)
        viol[idx] = 0.0
        worst = int(np.argmax(viol))
        if viol[worst] > slack:
            active[worst] = float(np.sign(z[worst]))
            continue
        x_new = np.zeros_like(x)
        u_new = np.zeros_like(u)
        x_new[sx] = w[: sx.size]
        u_new[su] = w[sx.size:]
        return x_new, u_new
    return None


def _candidate(A, d, x, eta, nonneg, polish, max_support):
    """Feasible point built from the sparse iterate ``x``; flags certified optima."""
    if nonneg:
        x = np.maximum(x, 0.0)
    u, _ = min_l1_in_ball(d - A.matvec(x), eta)
    if polish and eta > 0:
        cand = _support_polish(A, d, x, u, eta, nonneg, max_support=max_support)
        if cand is not None:
            return cand[0], cand[1], True
    return x, u, False


def _result(h, A, d, x, u, scale, eta, nonneg, iterations, converged, stop_reason, history):
    residual = float(np.linalg.norm(d - A.matvec(x) - u)) * scale
    x = x * scale
    u = u * scale
    return DecompositionResult(
        x_hat=x,
        u_hat=u,
        scr_signal=convolve(h, x),
        residual_norm=residual,
        objective=float(np.abs(x).sum() + np.abs(u).sum()),
        iterations=iterations,
        converged=converged,
        eta=eta * scale,
        nonneg_x=nonneg,
        stop_reason=stop_reason,
        history=history,
    )


def solve_differenced(dy, h, cfg=SolverConfig()):
    """Solve the decomposition given the already differenced observation ``Dy``.

    Parameters
    ----------
    dy : array_like, length ``t + T - 2``
    h : ImpulseResponse or array_like, length ``t``
    cfg : SolverConfig

    Returns
    -------
    DecompositionResult
    """
    dy = np.asarray(dy, dtype=float)
    h_arr = np.asarray(h.samples if isinstance(h, ImpulseResponse) else h, dtype=float)
    if dy.ndim != 1 or h_arr.ndim != 1:
        raise DimensionError("dy and h must be one-dimensional")
    T = dy.size - h_arr.size + 2
    if T < 1:
        raise DimensionError(
            f"differenced observation of length {dy.size} is too short for h of length {h_arr.size}"
        )
    A = DifferencedConvolution(h_arr, T)

    # the program is positively homogeneous: work at unit scale
    scale = float(np.linalg.norm(dy))
    history = {"primal_residual": [], "dual_residual": [], "merit": [], "rho": []} if cfg.record_history else {}
    if scale == 0.0 or scale <= cfg.eta:
        # x = 0, u = 0 is feasible and has zero objective
        return _result(h_arr, A, dy, np.zeros(T), np.zeros(dy.size), 1.0, cfg.eta,
                       cfg.nonneg_x, 0, True, "trivial", history)
    d = dy / scale
    eta = cfg.eta / scale
    n = d.size

    h_rev = h_arr[::-1].copy()

    def Amv(v):
        conv = np.convolve(h_arr, v)
        return conv[:-1] - conv[1:]

    def Atv(w):
        dw = np.empty(n + 1)
        dw[:-1] = w
        dw[-1] = 0.0
        dw[1:] -= w
        return np.convolve(dw, h_rev, mode="valid")

    use_dense = cfg.linear_solver == "cholesky" or (
        cfg.linear_solver == "auto" and T <= cfg.dense_max_T
    )
    if use_dense:
        Ad = A.to_dense()
        chol = cho_factor(np.eye(T) + 0.5 * (Ad.T @ Ad))

        def solve_normal(rhs, x0):
            return cho_solve(chol, rhs)
    else:
        def normal_op(v):
            return v + 0.5 * Atv(Amv(v))

        def solve_normal(rhs, x0):
            return _cg(normal_op, rhs, x0, cfg.cg_tol, cfg.cg_max_iters)[0]

    relax = cfg.relaxation
    # zero start: x = 0, u = Dy, which is feasible
    x = np.zeros(T)
    p = np.zeros(T)
    if cfg.seed is not None:
        p = np.random.default_rng(cfg.seed).standard_normal(T) / math.sqrt(T)
        if cfg.nonneg_x:
            p = np.abs(p)
    q = d.copy()
    r = d.copy()
    lp = np.zeros(T)
    lq = np.zeros(n)
    lr = np.zeros(n)
    rho = cfg.rho
    # the wait between penalty changes doubles after each change so that
    # the penalty eventually settles
    adapt_gap = cfg.adapt_every
    next_adapt = adapt_gap
    stop_reason = "max_iters"
    cx = cu = None
    it = 0
    for it in range(1, cfg.max_iters + 1):
        # least-squares step over w = (x, u)
        a = p - lp
        b = q - lq
        c = r - lr
        x = solve_normal(a + 0.5 * Atv(c - b), x)
        Ax = Amv(x)
        u = 0.5 * (b + c - Ax)
        Kw = Ax + u
        if relax != 1.0:
            hx = relax * x + (1.0 - relax) * p
            hu = relax * u + (1.0 - relax) * q
            hk = relax * Kw + (1.0 - relax) * r
        else:
            hx, hu, hk = x, u, Kw

        p_old, q_old, r_old = p, q, r
        thresh = 1.0 / rho
        if cfg.nonneg_x:
            p = np.maximum(hx + lp - thresh, 0.0)
        else:
            p = soft_threshold(hx + lp, thresh)
        q = soft_threshold(hu + lq, thresh)
        r = project_ball(hk + lr, d, eta)

        dlp = hx - p
        dlq = hu - q
        dlr = hk - r
        lp = lp + dlp
        lq = lq + dlq
        lr = lr + dlr

        rp = x - p
        rq = u - q
        rr = Kw - r
        dp = p - p_old
        dq = q - q_old
        dr = r - r_old
        primal = math.sqrt(rp @ rp + rq @ rq + rr @ rr)
        sx = dp + Atv(dr)
        sq = dq + dr
        dual = rho * math.sqrt(sx @ sx + sq @ sq)

        if cfg.record_history:
            history["primal_residual"].append(primal)
            history["dual_residual"].append(dual)
            history["merit"].append(
                float(dp @ dp + dq @ dq + dr @ dr + dlp @ dlp + dlq @ dlq + dlr @ dlr)
            )
            history["rho"].append(rho)

        w_scale = max(math.sqrt(x @ x + u @ u + Kw @ Kw), math.sqrt(p @ p + q @ q + r @ r))
        # M^T y itself vanishes at a solution, so scale by its pieces
        atl = Atv(lr)
        y_scale = rho * math.sqrt(lp @ lp + atl @ atl + lq @ lq + lr @ lr)
        if primal <= cfg.tol_rel * (1.0 + w_scale) and dual <= cfg.tol_rel * (1.0 + y_scale):
            stop_reason = "residuals"
            break
        if cfg.polish and it % cfg.polish_every == 0 and primal <= 1e-3 * (1.0 + w_scale):
            cx, cu, ok = _candidate(A, d, p, eta, cfg.nonneg_x, True, cfg.polish_max_support)
            if ok:
                stop_reason = "certified"
                break

        if cfg.adaptive_rho and it >= next_adapt:
            next_adapt = it + adapt_gap
            # balance residuals relative to their own stopping scales
            rel_p = primal / (1.0 + w_scale)
            rel_d = dual / (1.0 + y_scale)
            if rel_p > cfg.balance_ratio * rel_d:
                rho *= 2.0
                lp, lq, lr = lp / 2.0, lq / 2.0, lr / 2.0
                adapt_gap *= 2
            elif rel_d > cfg.balance_ratio * rel_p:
                rho /= 2.0
                lp, lq, lr = lp * 2.0, lq * 2.0, lr * 2.0
                adapt_gap *= 2

    if stop_reason != "certified":
        cx, cu, ok = _candidate(A, d, p, eta, cfg.nonneg_x, cfg.polish, cfg.polish_max_support)
        if ok:
            stop_reason = "certified"
    if stop_reason == "max_iters":
        logger.warning(
            "ADMM stopped after %d iterations without meeting tol_rel=%g", it, cfg.tol_rel
        )
    return _result(h_arr, A, d, cx, cu, scale, eta, cfg.nonneg_x, it,
                   stop_reason != "max_iters", stop_reason, history)


def solve(y, h, cfg=SolverConfig()):
    """Decompose a raw observation ``y`` of length ``t + T - 1``.

    The observation is differenced internally; see :func:`solve_differenced`.
    """
    samples = y.samples if isinstance(y, Signal) else np.asarray(y, dtype=float)
    h_len = len(h.samples) if isinstance(h, ImpulseResponse) else np.asarray(h).size
    if samples.ndim != 1 or samples.size < h_len or samples.size < 2:
        raise DimensionError(
            f"observation of length {samples.size} is shorter than the impulse response ({h_len})"
        )
    return solve_differenced(difference_apply(samples), h, cfg)


@dataclass
class KKTReport:
    feasibility_gap: float
    optimality: float
    complementary_slackness: float
    multiplier: float

    def as_dict(self):
        return {
            "feasibility_gap": self.feasibility_gap,
            "optimality": self.optimality,
            "complementary_slackness": self.complementary_slackness,
            "multiplier": self.multiplier,
        }


def kkt_report(result, dy, h, eta=None, nonneg_x=None):
    """Certify a decomposition against the optimality conditions.

    A dual vector of the form ``y = nu * e`` with ``e`` the constraint
    residual is fitted (``nu >= 0`` by least squares over the supports);
    ``optimality`` is the largest distance from ``K^T y`` to the l1
    subdifferential at ``(x_hat, u_hat)``, and ``complementary_slackness``
    is ``nu * |eta - ||e|||``.

    ``dy`` is the differenced observation.  Pass ``y`` through
    :func:`~edacs.signals.difference_apply` first when starting from a
    raw signal.
    """
    eta = result.eta if eta is None else eta
    nonneg = result.nonneg_x if nonneg_x is None else nonneg_x
    dy = np.asarray(dy, dtype=float)
    h_arr = np.asarray(h.samples if isinstance(h, ImpulseResponse) else h, dtype=float)
    x = np.asarray(result.x_hat, dtype=float)
    u = np.asarray(result.u_hat, dtype=float)
    A = DifferencedConvolution(h_arr, x.size)
    e = dy - A.matvec(x) - u
    e_norm = float(np.linalg.norm(e))
    gap = max(0.0, e_norm - eta)

    gx = A.rmatvec(e)
    gu = e
    g = np.concatenate([gx, gu])
    w = np.concatenate([x, u])
    support = w != 0
    if support.any() and np.any(g[support] != 0):
        num = float(g[support] @ np.sign(w[support]))
        nu = max(num / float(g[support] @ g[support]), 0.0)
    else:
        nu = 0.0
    z = nu * g
    dist = np.where(support, np.abs(z - np.sign(w)), np.maximum(np.abs(z) - 1.0, 0.0))
    if nonneg:
        zx = z[: x.size]
        # subdifferential of |x| + indicator(x >= 0) at zero is (-inf, 1]
        dist[: x.size] = np.where(x > 0, np.abs(zx - 1.0), np.maximum(zx - 1.0, 0.0))
    optimality = float(dist.max()) if dist.size else 0.0
    cs = nu * abs(eta - e_norm) if nu > 0 else 0.0
    return KKTReport(gap, optimality, cs, nu)
