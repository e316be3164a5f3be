"""Raw window conditioning ahead of the model-consistency tests.

Order of operations per window: drop timestamps the remote stream lost
(alignment), estimate first and second current derivatives by local
quadratic least squares on the surviving timestamps, then cut the l-2
consecutive samples whose derivative estimates may straddle a switching
moment.  Derivatives are not recomputed after the cut; the removed
columns are exactly the ones whose fits mixed pre and post event data.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DegradedDataError, InvalidWindowError


@dataclass(frozen=True)
class PreparedWindow:
    """Aligned, derivative-augmented, inception-cleaned window.

    All six matrices are 3 x n_samples and column-aligned.  kept_indices
    maps each retained column back to its index in the raw window, so
    gaps mark both lost timestamps and removed samples.  n_original is
    the raw window length before any column was dropped.
    """

    U1: np.ndarray
    U2: np.ndarray
    I1: np.ndarray
    I2: np.ndarray
    dI1: np.ndarray
    dI2: np.ndarray
    kept_indices: np.ndarray
    n_samples: int
    n_original: int
    sample_rate: float

    def __post_init__(self):
        n = self.n_samples
        for name in ("U1", "U2", "I1", "I2", "dI1", "dI2"):
            m = getattr(self, name)
            if m.shape != (3, n):
                raise InvalidWindowError(f"{name} must be 3x{n}, got {m.shape}")
        if self.kept_indices.shape != (n,):
            raise InvalidWindowError("kept_indices length mismatch")
        if n > 1 and not np.all(np.diff(self.kept_indices) > 0):
            raise InvalidWindowError("kept_indices must be strictly increasing")


def align(t, u1, u2, i1, i2, missing_mask, max_missing_frac: float = 0.2):
    """Drop every timestamp masked missing from all twelve channels.

    Returns ``(t, u1, u2, i1, i2, kept_indices)`` with masked columns
    removed.  Raises DegradedDataError when more than ``max_missing_frac``
    of the window is gone.
    """
    t = np.asarray(t, dtype=float)
    mask = np.asarray(missing_mask, dtype=bool)
    n = t.shape[0]
    if mask.shape != (n,):
        raise InvalidWindowError("missing mask length mismatch")
    frac = float(np.count_nonzero(mask)) / max(n, 1)
    if frac > max_missing_frac:
        raise DegradedDataError(
            f"{frac:.1%} of samples missing exceeds {max_missing_frac:.0%}"
        )
    kept = np.flatnonzero(~mask)
    out = []
    for m in (u1, u2, i1, i2):
        m = np.asarray(m, dtype=float)
        if m.shape != (3, n):
            raise InvalidWindowError("channel matrix must be 3xN")
        out.append(m[:, kept])
    return (t[kept], *out, kept)


@lru_cache(maxsize=1024)
def _stencil(offsets: tuple):
    """Least-squares quadratic fit weights for integer sample offsets.

    Returns the weight rows picking the linear and quadratic coefficients
    of the fit y ~ c0 + c1*s + c2*s^2 where s counts samples from the
    evaluation point.
    """
    s = np.array(offsets, dtype=float)
    a = np.vander(s, 3, increasing=True)
    p = np.linalg.pinv(a)
    return p[1].copy(), p[2].copy()


def estimate_derivatives(t, rows, l: int, sample_rate: float):
    """First and second time derivatives of each row by local quadratic fits.

    Each sample gets a least-squares parabola over the l nearest retained
    samples (centered where possible, one-sided at the edges), fitted on
    the actual timestamps so lost-sample gaps are handled correctly.

    Parameters
    ----------
    t : (n,) array of timestamps on the original uniform grid, gaps allowed.
    rows : (n,) or (r, n) array of samples.
    l : odd window length >= 3.
    sample_rate : Hz of the underlying grid; used to express gaps in
        whole-sample offsets, which keeps the fit well conditioned and
        lets stencil weights be cached.
    """
    if l < 3 or l % 2 == 0:
        raise InvalidWindowError("l must be odd and >= 3")
    t = np.asarray(t, dtype=float)
    y = np.atleast_2d(np.asarray(rows, dtype=float))
    n = t.shape[0]
    if y.shape[1] != n:
        raise InvalidWindowError("rows and timestamps disagree")
    if n < l:
        raise InvalidWindowError(f"need at least {l} samples, got {n}")

    starts = np.clip(np.arange(n) - (l - 1) // 2, 0, n - l)
    idx = starts[:, None] + np.arange(l)[None, :]
    offs = np.rint((t[idx] - t[:, None]) * sample_rate).astype(np.int64)

    uniq, inv = np.unique(offs, axis=0, return_inverse=True)
    w1 = np.empty((uniq.shape[0], l))
    w2 = np.empty((uniq.shape[0], l))
    for i in range(uniq.shape[0]):
        w1[i], w2[i] = _stencil(tuple(int(v) for v in uniq[i]))
    gathered = y[:, idx]                      # (r, n, l)
    # The derivative weight rows annihilate constants analytically, but
    # only to rounding; subtracting each sample's own value first makes a
    # constant signal map to exactly zero instead of eps * fs^2.
    gathered = gathered - y[:, :, None]
    c1 = np.einsum("rnl,nl->rn", gathered, w1[inv])
    c2 = np.einsum("rnl,nl->rn", gathered, w2[inv])
    d1 = c1 * sample_rate
    d2 = 2.0 * c2 * sample_rate**2
    if np.asarray(rows).ndim == 1:
        return d1[0], d2[0]
    return d1, d2


def removal_run(d2_currents, l: int) -> slice:
    """Column run slated for removal.

    Score per column is the largest |second derivative| over the six
    current rows; the contiguous run of l-2 columns with the highest
    total score wins, earliest run on ties.
    """
    d2 = np.atleast_2d(np.asarray(d2_currents, dtype=float))
    n = d2.shape[1]
    r = l - 2
    if n < 2 * r:
        raise InvalidWindowError(f"need at least {2 * r} columns, got {n}")
    score = np.max(np.abs(d2), axis=0)
    sums = np.convolve(score, np.ones(r), mode="valid")
    start = int(np.argmax(sums))
    return slice(start, start + r)


def prepare_window(
    t,
    u1,
    u2,
    i1,
    i2,
    missing_mask,
    sample_rate: float,
    l: int = 5,
    max_missing_frac: float = 0.2,
) -> PreparedWindow:
    """Full conditioning pipeline: align, differentiate, remove, package."""
    n_original = np.asarray(t).shape[0]
    t_a, u1_a, u2_a, i1_a, i2_a, kept = align(
        t, u1, u2, i1, i2, missing_mask, max_missing_frac
    )
    cur = np.vstack([i1_a, i2_a])
    d1, d2 = estimate_derivatives(t_a, cur, l, sample_rate)
    cut = removal_run(d2, l)
    keep = np.ones(t_a.shape[0], dtype=bool)
    keep[cut] = False
    return PreparedWindow(
        U1=u1_a[:, keep],
        U2=u2_a[:, keep],
        I1=i1_a[:, keep],
        I2=i2_a[:, keep],
        dI1=d1[:3, keep],
        dI2=d1[3:, keep],
        kept_indices=kept[keep],
        n_samples=int(np.count_nonzero(keep)),
        n_original=int(n_original),
        sample_rate=float(sample_rate),
    )
