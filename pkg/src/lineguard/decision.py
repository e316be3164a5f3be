"""Verdict selection from the scored hypotheses.

Baseline rule: the hypothesis with the smallest mean squared mismatch
wins, smaller case index on ties.  Two boundary refinements handle the
split hypotheses adjacent to the pure ones (inception at the very end or
the very start of the window), where the ignored interval D can swallow
the evidence.  A last physical sanity check requires actual fault
current before any trip is issued: the faulted model with alpha at a
terminal and a matched fault voltage can reproduce external-fault data
exactly, but no internal fault can exist without current leaving through
the fault branch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataIntegrityError, InvalidParameterError
from .mismatch import CaseResult
from .preprocess import PreparedWindow

BEFORE_WINDOW = "before_window"

HEALTHY, TRIP = "healthy", "trip"


@dataclass(frozen=True)
class RelayVerdict:
    state: str
    alpha_est: float | None
    r_f_est: tuple | None          # (r_a, r_b, r_c, r_g); None entry = no info
    inception: tuple | str | None  # raw index interval, BEFORE_WINDOW, or None
    fault_type_est: str | None
    deltas: tuple                  # all M+2 mean squared mismatches, in case order
    selected_case: int
    guard_vetoed_case: int | None = None

    @property
    def tripped(self) -> bool:
        return self.state == TRIP


def _ratio(num: float, den: float) -> float:
    """num/den with the 0/0 -> 1 and x/0 -> inf conventions."""
    if den == 0.0:
        return 1.0 if num == 0.0 else math.inf
    return num / den


def fault_current_materiality(pw: PreparedWindow, factor: float = 2.5) -> bool:
    """Whether the window shows fault current beyond its own noise floor.

    The per-phase terminal current sum is zero for a healthy or external
    condition (the line is a series path) up to measurement noise, and
    equals the fault branch current during an internal fault.  The noise
    floor is estimated from second differences, which cancel any smooth
    component; the energy test then asks whether the summed current
    carries more than ``factor`` times the noise energy in any phase.
    """
    s = pw.I1 + pw.I2
    n = s.shape[1]
    if n < 4:
        return True
    d2 = s[:, 2:] - 2.0 * s[:, 1:-1] + s[:, :-2]
    # MAD of a Gaussian second difference: 0.6745 * sigma * sqrt(6).
    sigma = np.median(np.abs(d2), axis=1) / (0.6745 * math.sqrt(6.0))
    scale = np.maximum(
        np.max(np.abs(pw.I1), axis=1), np.max(np.abs(pw.I2), axis=1)
    )
    sigma = np.maximum(sigma, 1e-9 * np.maximum(scale, 1e-3))
    energy = np.sum(s * s, axis=1)
    return bool(np.any(energy > factor * n * sigma**2))


def _masked_resistances(x_star, identifiable) -> tuple:
    vals = []
    for p in range(4):
        ok = identifiable is None or identifiable[p]
        vals.append(float(x_star[p]) if ok else None)
    return tuple(vals)


def classify_fault_type(r_f_est, threshold: float = 500.0) -> str:
    """Name the fault pattern from the estimated branch resistances.

    A branch is involved when its estimate exists and sits below the
    threshold.  This is reporting only; no trip decision depends on it.
    """
    if r_f_est is None:
        return "unclassified"
    inv = [r is not None and r < threshold for r in r_f_est]
    phases, ground = sum(inv[:3]), inv[3]
    if phases == 3:
        return "K3"
    if phases == 2:
        return "K2g" if ground else "K2"
    if phases == 1 and ground:
        return "K1"
    return "unclassified"


def select_case(
    results: list[CaseResult],
    m_splits: int,
    fault_current_material: bool = True,
    classify_threshold: float = 500.0,
) -> RelayVerdict:
    """Pick the winning hypothesis and assemble the verdict.

    ``fault_current_material`` comes from ``fault_current_materiality``
    on the same window; passing True disables the guard.
    """
    total = m_splits + 2
    if len(results) != total:
        raise InvalidParameterError(f"expected {total} case results")
    deltas = tuple(float(r.delta) for r in results)
    if any(not math.isfinite(dv) for dv in deltas):
        raise DataIntegrityError("non-finite mismatch score")
    by_case = {r.m: r for r in results}
    if sorted(by_case) != list(range(1, total + 1)):
        raise InvalidParameterError("case indices must be 1..M+2")

    order = sorted(range(1, total + 1), key=lambda m: (deltas[m - 1], m))
    winner, second = order[0], order[1]

    if winner == 3 and second == 1:
        a1 = _ratio(deltas[0], deltas[2])      # healthy vs boundary split
        a2 = _ratio(deltas[3], deltas[0])      # next split vs healthy
        winner = 1 if a1 < a2 else 3
    elif winner == total and second == 2:
        b1 = _ratio(deltas[1], deltas[total - 1])
        b2 = _ratio(deltas[total - 2], deltas[1])
        winner = 2 if b1 < b2 else total

    guard_vetoed = None
    if winner != 1 and not fault_current_material:
        guard_vetoed = winner
        winner = 1

    if winner == 1:
        return RelayVerdict(
            state=HEALTHY, alpha_est=None, r_f_est=None, inception=None,
            fault_type_est=None, deltas=deltas, selected_case=1,
            guard_vetoed_case=guard_vetoed,
        )

    res = by_case[winner]
    if winner == 2:
        inception = BEFORE_WINDOW
    else:
        inception = res.inception_interval
    if res.x_star is None:
        # Split with an empty faulted set: the event starts inside the
        # trailing ignored interval, too late to characterize here.
        return RelayVerdict(
            state=TRIP, alpha_est=None, r_f_est=None, inception=inception,
            fault_type_est=None, deltas=deltas, selected_case=winner,
        )
    r_f = _masked_resistances(res.x_star, res.identifiable)
    return RelayVerdict(
        state=TRIP,
        alpha_est=float(res.x_star[4]),
        r_f_est=r_f,
        inception=inception,
        fault_type_est=classify_fault_type(r_f, classify_threshold),
        deltas=deltas,
        selected_case=winner,
    )
