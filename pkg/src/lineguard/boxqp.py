"""Small dense box-constrained convex QP solver.

Minimizes ``x' H x + f' x + d`` subject to ``lo <= x <= hi`` (note: no 1/2
in front of the quadratic term).  H is symmetric positive semidefinite and
tiny (5x5 here), so the solver enumerates active-set assignments instead
of iterating: each variable is either free, clamped at its lower bound or
clamped at a finite upper bound.  Every assignment's reduced system is
solved exactly; among assignments that are feasible and pass the KKT test
the one with the smallest active set wins (then smallest objective, then
lexicographically smallest x).  By convexity any KKT point is a global
minimizer, so the cardinality preference only picks among equals.

All assignments are solved in one batched call: clamped variables are
pinned with identity rows so every reduced system is a full-size square
solve, which keeps the whole enumeration inside LAPACK.  A sequential
fallback covers the rare singular batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np

from .errors import InvalidParameterError

FREE, AT_LOWER, AT_UPPER = 0, 1, 2


@dataclass(frozen=True)
class QpSolution:
    """Result of one box-QP solve."""

    x: np.ndarray          # argmin, clipped into the box
    objective: float       # x' H x + f' x + d at x
    active_set: tuple      # per-variable status (FREE / AT_LOWER / AT_UPPER)
    kkt_ok: bool           # certificate: stationarity + sign conditions hold


def qp_objective(h, f, d, x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x @ h @ x + f @ x + d)


def kkt_check(h, f, x, lo, hi, tol_rel: float = 1e-9) -> bool:
    """First-order optimality for the box program at x.

    The gradient of the objective is ``2 H x + f``.  A component must
    vanish when the variable is interior, be >= 0 at the lower bound and
    <= 0 at the upper bound, all up to a tolerance scaled by the data.
    """
    g = 2.0 * h @ x + f
    scale = max(1.0, float(np.max(np.abs(f), initial=0.0)),
                float(np.max(np.abs(2.0 * h @ x), initial=0.0)))
    tol = tol_rel * scale
    span = np.where(np.isfinite(hi), hi - lo, 1.0)
    eps = 1e-9 * np.maximum(1.0, np.abs(lo) + np.abs(span))
    at_lo = x <= lo + eps
    at_hi = np.isfinite(hi) & (x >= hi - eps)
    interior = ~(at_lo | at_hi)
    if np.any(np.abs(g[interior]) > tol):
        return False
    if np.any(g[at_lo & ~at_hi] < -tol):
        return False
    if np.any(g[at_hi & ~at_lo] > tol):
        return False
    return True


@lru_cache(maxsize=64)
def _combo_table(finite_hi: tuple) -> np.ndarray:
    """All status assignments, ordered by active-set size then status tuple."""
    options = [(FREE, AT_LOWER, AT_UPPER) if fin else (FREE, AT_LOWER)
               for fin in finite_hi]
    combos = sorted(product(*options),
                    key=lambda c: (sum(s != FREE for s in c), c))
    return np.array(combos, dtype=np.int8)


def _validate(h, f, d, lo, hi):
    h = np.asarray(h, dtype=float)
    f = np.asarray(f, dtype=float)
    n = f.shape[0]
    if h.shape != (n, n):
        raise InvalidParameterError("H and f shapes disagree")
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(f)) and np.isfinite(d)):
        raise InvalidParameterError("QP data must be finite")
    lo = np.zeros(n) if lo is None else np.asarray(lo, dtype=float)
    hi = np.full(n, np.inf) if hi is None else np.asarray(hi, dtype=float)
    if lo.shape != (n,) or hi.shape != (n,):
        raise InvalidParameterError("bounds must match f")
    if np.any(~np.isfinite(lo)) or np.any(np.isnan(hi)) or np.any(lo > hi):
        raise InvalidParameterError("box must be nonempty with finite lower bounds")
    return 0.5 * (h + h.T), f, lo, hi


def solve_box_qp(h, f, d=0.0, lo=None, hi=None) -> QpSolution:
    """Solve ``min x' H x + f' x + d`` over the box ``[lo, hi]``.

    Parameters
    ----------
    h : (n, n) array
        Symmetric PSD matrix.  A singular free block is skipped rather
        than solved, so mildly regularize upstream if H can be rank
        deficient in directions the box does not close off.
    f : (n,) array
    d : float
        Constant offset, carried into the reported objective.
    lo, hi : (n,) arrays or None
        Defaults: lo = 0, hi = +inf.

    Raises
    ------
    InvalidParameterError
        On malformed shapes, non-finite data or an empty box.
    """
    h, f, lo, hi = _validate(h, f, d, lo, hi)
    n = f.shape[0]
    combos = _combo_table(tuple(bool(b) for b in np.isfinite(hi)))
    try:
        best = _solve_batched(h, f, d, lo, hi, combos)
    except np.linalg.LinAlgError:
        best = _solve_sequential(h, f, d, lo, hi, combos)
    if best is not None:
        return best
    # No assignment certified (out-of-contract H).  Return the projected
    # origin as a feasible point, flagged as uncertified.
    x = np.clip(lo, lo, np.where(np.isfinite(hi), hi, np.inf))
    return QpSolution(x=x, objective=qp_objective(h, f, d, x),
                      active_set=tuple([AT_LOWER] * n), kkt_ok=False)


def _solve_batched(h, f, d, lo, hi, combos):
    n = f.shape[0]
    m = combos.shape[0]
    pinned = combos != FREE                       # (m, n)
    xc = np.where(combos == AT_UPPER, hi, lo)     # clamp values; 0 where free
    xc = np.where(pinned, xc, 0.0)
    # Pinned rows become identity rows with the clamp value on the right,
    # so every assignment is a full-size square system and the whole
    # enumeration is one LAPACK call.
    eye = np.eye(n)
    mats = np.where(pinned[:, :, None], eye[None, :, :], h[None, :, :])
    rhs = np.where(pinned, xc, -(0.5 * f)[None, :])
    xs = np.linalg.solve(mats, rhs[:, :, None])[:, :, 0]   # (m, n)
    if not np.all(np.isfinite(xs)):
        raise np.linalg.LinAlgError("non-finite batch solution")

    hi_f = np.where(np.isfinite(hi), hi, np.inf)
    feas_eps = 1e-9 * np.maximum(1.0, np.abs(lo) + np.where(np.isfinite(hi),
                                                            np.abs(hi), 1.0))
    ok = np.all(xs >= lo[None, :] - feas_eps[None, :], axis=1)
    ok &= np.all(xs <= hi_f[None, :] + feas_eps[None, :], axis=1)
    xs = np.clip(xs, lo[None, :], hi_f[None, :])

    # KKT screen, vectorized across assignments.
    g = 2.0 * xs @ h.T + f[None, :]
    scale = np.maximum(
        1.0,
        np.maximum(np.max(np.abs(f), initial=0.0),
                   np.max(np.abs(g - f[None, :]), axis=1, initial=0.0)),
    )
    tol = (1e-9 * scale)[:, None]
    span = np.where(np.isfinite(hi), hi - lo, 1.0)
    eps = (1e-9 * np.maximum(1.0, np.abs(lo) + np.abs(span)))[None, :]
    at_lo = xs <= lo[None, :] + eps
    at_hi = np.isfinite(hi)[None, :] & (xs >= hi_f[None, :] - eps)
    interior = ~(at_lo | at_hi)
    ok &= ~np.any(interior & (np.abs(g) > tol), axis=1)
    ok &= ~np.any(at_lo & ~at_hi & (g < -tol), axis=1)
    ok &= ~np.any(at_hi & ~at_lo & (g > tol), axis=1)
    if not np.any(ok):
        return None

    cards = np.sum(combos != FREE, axis=1)
    best_level = np.min(cards[ok])
    cand = np.flatnonzero(ok & (cards == best_level))
    objs = np.einsum("ij,jk,ik->i", xs[cand], h, xs[cand]) + xs[cand] @ f + d
    order = sorted(range(cand.size), key=lambda i: (objs[i], tuple(xs[cand[i]])))
    pick = cand[order[0]]
    x = xs[pick]
    return QpSolution(x=x, objective=qp_objective(h, f, d, x),
                      active_set=tuple(int(s) for s in combos[pick]),
                      kkt_ok=True)


def _solve_sequential(h, f, d, lo, hi, combos):
    """One assignment at a time; tolerates singular reduced systems."""
    n = f.shape[0]
    piv_tol = 1e-12 * max(1.0, float(np.max(np.abs(np.diag(h)), initial=0.0)))
    feas_eps = 1e-9 * np.maximum(1.0, np.abs(lo) + np.where(np.isfinite(hi),
                                                            np.abs(hi), 1.0))
    hi_f = np.where(np.isfinite(hi), hi, np.inf)
    best = None
    best_card = None
    for combo in combos:
        card = int(np.sum(combo != FREE))
        if best is not None and card > best_card:
            break
        free = combo == FREE
        x = np.where(combo == AT_UPPER, hi, lo).astype(float)
        if np.any(free):
            hff = h[np.ix_(free, free)]
            rhs = -(0.5 * f[free] + h[np.ix_(free, ~free)] @ x[~free])
            if np.any(np.diag(hff) < piv_tol):
                continue
            try:
                np.linalg.cholesky(hff + piv_tol * np.eye(hff.shape[0]))
                xf = np.linalg.solve(hff, rhs)
            except np.linalg.LinAlgError:
                continue
            if not np.all(np.isfinite(xf)):
                continue
            x[free] = xf
        if np.any(x < lo - feas_eps) or np.any(x > hi_f + feas_eps):
            continue
        x = np.clip(x, lo, hi_f)
        if not kkt_check(h, f, x, lo, hi):
            continue
        cand = QpSolution(x=x, objective=qp_objective(h, f, d, x),
                          active_set=tuple(int(s) for s in combo), kkt_ok=True)
        if best is None or cand.objective < best.objective or (
            cand.objective == best.objective and tuple(cand.x) < tuple(best.x)
        ):
            best = cand
            best_card = card
    return best
