"""Model-consistency hypothesis engine.

For one prepared window this module builds the healthy-model mismatch S
and an affine parameterization of the faulted-model mismatch W(x) in the
unknowns x = [R_a, R_b, R_c, R_g, alpha], then scores M+2 hypotheses:

  case 1       every sample healthy                 -> delta = mean sq of S
  case 2       every sample faulted                 -> box QP over x
  case k+2     samples split healthy|faulted with the switch confined to
               a short interval D_k that is excluded from the score.

Each faulted hypothesis is a small convex box-constrained QP; per-column
Gram matrices are accumulated once as prefix sums so every case costs
O(1) to assemble regardless of where its split lands.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxqp import solve_box_qp, qp_objective
from .errors import InvalidParameterError, InvalidWindowError
from .grid import PhaseImpedance
from .preprocess import PreparedWindow

X_MAX_DEFAULT = (np.inf, np.inf, np.inf, np.inf, 1.0)
RIDGE_REL = 1e-12


@dataclass(frozen=True)
class MismatchData:
    """S plus the affine pieces of W, with prefix sums for fast case assembly.

    W(x)[:, j] = W_const[:, j] + W_coeff[:, j, :] @ x.
    """

    S: np.ndarray        # (6, N)
    W_const: np.ndarray  # (6, N)
    W_coeff: np.ndarray  # (6, N, 5)
    kept_indices: np.ndarray
    n_samples: int
    n_original: int
    # Cumulative sums over columns 0..j-1 (index j of each array):
    cum_s2: np.ndarray   # (N+1,)     sum of squared S entries
    cum_h: np.ndarray    # (N+1,5,5)  sum of C_j' C_j
    cum_f: np.ndarray    # (N+1,5)    sum of 2 C_j' w0_j
    cum_d: np.ndarray    # (N+1,)     sum of |w0_j|^2


@dataclass(frozen=True)
class Partition:
    """Hypothesis k's split of the window columns (0-based, contiguous)."""

    k: int
    set_N: range
    set_D: range
    set_F: range


@dataclass(frozen=True)
class CaseResult:
    m: int
    delta: float
    x_star: np.ndarray | None
    inception_interval: tuple[int, int] | None
    # Which resistance entries the window actually constrains; alpha is
    # always reported.  Entries outside this mask carry no information
    # (their quadratic coefficient is numerically zero).
    identifiable: tuple | None = None


def build_mismatch(pw: PreparedWindow, z: PhaseImpedance) -> MismatchData:
    """Assemble S and the affine representation of W for one window."""
    n = pw.n_samples
    zi1 = z.R @ pw.I1 + z.L @ pw.dI1
    zi2 = z.R @ pw.I2 + z.L @ pw.dI2
    du = pw.U1 - pw.U2

    s = np.empty((6, n))
    s[:3] = du - zi1
    s[3:] = -du - zi2

    w_const = np.empty((6, n))
    w_coeff = np.zeros((6, n, 5))
    # Rows 1-3: du + ZI2 - alpha*(ZI1 + ZI2); only alpha enters.
    w_const[:3] = du + zi2
    w_coeff[:3, :, 4] = -(zi1 + zi2)
    # Rows 4-6: u1 - alpha*ZI1 - R_p*s_p - R_g*sum_q(s_q), s = i1 + i2.
    sum_i = pw.I1 + pw.I2
    w_const[3:] = pw.U1
    w_coeff[3:, :, 4] = -zi1
    for p in range(3):
        w_coeff[3 + p, :, p] = -sum_i[p]
    w_coeff[3:, :, 3] = -np.sum(sum_i, axis=0)

    if not (
        np.all(np.isfinite(s))
        and np.all(np.isfinite(w_const))
        and np.all(np.isfinite(w_coeff))
    ):
        raise InvalidWindowError("non-finite mismatch entries")

    cum_s2 = np.zeros(n + 1)
    np.cumsum(np.sum(s * s, axis=0), out=cum_s2[1:])
    # Per-column Gram pieces of |w0_j + C_j x|^2.
    h_cols = np.einsum("ijp,ijq->jpq", w_coeff, w_coeff)
    f_cols = 2.0 * np.einsum("ijp,ij->jp", w_coeff, w_const)
    d_cols = np.sum(w_const * w_const, axis=0)
    cum_h = np.zeros((n + 1, 5, 5))
    np.cumsum(h_cols, axis=0, out=cum_h[1:])
    cum_f = np.zeros((n + 1, 5))
    np.cumsum(f_cols, axis=0, out=cum_f[1:])
    cum_d = np.zeros(n + 1)
    np.cumsum(d_cols, out=cum_d[1:])

    return MismatchData(
        S=s,
        W_const=w_const,
        W_coeff=w_coeff,
        kept_indices=np.asarray(pw.kept_indices),
        n_samples=n,
        n_original=pw.n_original,
        cum_s2=cum_s2,
        cum_h=cum_h,
        cum_f=cum_f,
        cum_d=cum_d,
    )


def evaluate_w(md: MismatchData, x) -> np.ndarray:
    """Direct evaluation of W(x), mainly for tests and diagnostics."""
    x = np.asarray(x, dtype=float)
    return md.W_const + np.einsum("ijp,p->ij", md.W_coeff, x)


def partition(n: int, m: int, k: int) -> Partition:
    """Exact split; requires m to divide n."""
    if m < 2:
        raise InvalidParameterError("need at least 2 splits")
    if not 1 <= k <= m:
        raise InvalidParameterError(f"k must be in 1..{m}")
    if n % m != 0:
        raise InvalidParameterError(f"{m} does not divide {n}")
    return partition_rounded(n, m, k)


def partition_rounded(n: int, m: int, k: int) -> Partition:
    """Split with rounded boundaries; exact when m divides n.

    set_N covers the head of the window (healthy hypothesis), set_F the
    tail (faulted hypothesis) and set_D the short stretch in between that
    the score ignores.  k=1 puts D at the very end, k=m at the very start.
    """
    if m < 2 or not 1 <= k <= m:
        raise InvalidParameterError("bad split arguments")
    b1 = round(n * (m - k) / m)
    b2 = round(n * (m - k + 1) / m)
    return Partition(k=k, set_N=range(0, b1), set_D=range(b1, b2),
                     set_F=range(b2, n))


def delta_healthy(s: np.ndarray) -> float:
    """Mean squared healthy-model mismatch over all entries."""
    s = np.asarray(s, dtype=float)
    return float(np.sum(s * s) / s.size)


def assemble_case_qp(md: MismatchData, part: Partition | None, x_max=X_MAX_DEFAULT):
    """(H, F, d) of one faulted or mixture hypothesis.

    ``part=None`` means the all-faulted hypothesis: W terms over every
    column, normalizer 6N.  Otherwise W runs over part.set_F and the
    constant includes the S terms of part.set_N, normalizer 6(N-|D|).
    An empty set_F has no QP; the caller scores that case directly.
    """
    n = md.n_samples
    if part is None:
        lo_f, eta = 0, 6 * n
        s_const = 0.0
    else:
        if len(part.set_F) == 0:
            raise InvalidParameterError("empty faulted set has no QP")
        lo_f = part.set_F.start
        eta = 6 * (n - len(part.set_D))
        s_const = md.cum_s2[part.set_N.stop] - md.cum_s2[0]
    h = (md.cum_h[n] - md.cum_h[lo_f]) / eta
    f = (md.cum_f[n] - md.cum_f[lo_f]) / eta
    d = (md.cum_d[n] - md.cum_d[lo_f] + s_const) / eta
    return h, f, d


def _resistance_identifiability(h: np.ndarray) -> tuple:
    """Resistance entries with numerically nonzero curvature in H."""
    diag = np.abs(np.diag(h)[:4])
    ref = float(np.max(diag, initial=0.0))
    if ref <= 0.0:
        return (False, False, False, False)
    return tuple(bool(v > 1e-8 * ref) for v in diag)


def _interval_from_partition(md: MismatchData, part: Partition) -> tuple[int, int]:
    """Map set_D back to raw-window indices, absorbing adjacent gaps.

    Columns dropped by alignment or inception removal sit between kept
    columns; the switching moment may hide in those gaps, so the interval
    stretches from just after the last healthy column to just before the
    first faulted one (window edges when those sets are empty).
    """
    kept = md.kept_indices
    lo = int(kept[part.set_N.stop - 1]) + 1 if len(part.set_N) else 0
    hi = int(kept[part.set_F.start]) - 1 if len(part.set_F) else md.n_original - 1
    return lo, hi


def _solve_case(md, h, f, d, x_max):
    """Equilibrated and lightly regularized solve, scored exactly.

    The columns of the fault model live on wildly different scales: the
    alpha coordinate sees full line voltages while a leakage-leg
    resistance sees milliamp currents, so H spans ~13 orders of
    magnitude.  Solving in Jacobi-scaled variables keeps the ridge bias
    relative per coordinate instead of letting the big columns flatten
    the small ones.
    """
    hd = np.sqrt(np.diag(h))
    scale = np.where(hd > 0.0, hd, 1.0)
    hs = h / np.outer(scale, scale)
    hs_reg = hs + RIDGE_REL * np.eye(5)
    hi = np.asarray(x_max, dtype=float) * scale
    sol = solve_box_qp(hs_reg, f / scale, d, lo=np.zeros(5), hi=hi)
    x = sol.x / scale
    # A mean of squared residuals cannot be negative; the assembled
    # quadratic can round below zero on exact-model data, so clamp.
    delta = max(0.0, qp_objective(h, f, d, x))
    return x, float(delta)


def evaluate_all_cases(
    pw: PreparedWindow,
    z: PhaseImpedance,
    m_splits: int = 10,
    x_max=X_MAX_DEFAULT,
) -> list[CaseResult]:
    """Score all M+2 hypotheses of one window, ordered by case index."""
    md = build_mismatch(pw, z)
    n = md.n_samples
    if n < m_splits:
        raise InvalidWindowError(f"window of {n} samples cannot take {m_splits} splits")
    results = []

    results.append(
        CaseResult(m=1, delta=delta_healthy(md.S), x_star=None,
                   inception_interval=None)
    )

    h, f, d = assemble_case_qp(md, None, x_max)
    ident = _resistance_identifiability(h)
    x2, delta2 = _solve_case(md, h, f, d, x_max)
    results.append(
        CaseResult(m=2, delta=delta2, x_star=x2, inception_interval=None,
                   identifiable=ident)
    )

    for k in range(1, m_splits + 1):
        part = partition_rounded(n, m_splits, k)
        interval = _interval_from_partition(md, part)
        if len(part.set_F) == 0:
            eta = 6 * (n - len(part.set_D))
            s_const = md.cum_s2[part.set_N.stop] - md.cum_s2[0]
            results.append(
                CaseResult(m=k + 2, delta=float(s_const / eta), x_star=None,
                           inception_interval=interval)
            )
            continue
        h, f, d = assemble_case_qp(md, part, x_max)
        xk, deltak = _solve_case(md, h, f, d, x_max)
        results.append(
            CaseResult(m=k + 2, delta=deltak, x_star=xk,
                       inception_interval=interval,
                       identifiable=_resistance_identifiability(h))
        )
    return results
