import numpy as np
import pytest

from _analytic import V_PEAK, faulted_window, healthy_window
from lineguard.errors import InvalidParameterError
from lineguard.mismatch import (
    X_MAX_DEFAULT,
    build_mismatch,
    assemble_case_qp,
    delta_healthy,
    evaluate_all_cases,
    evaluate_w,
    partition,
    partition_rounded,
)

X0 = np.array([5.0, 12.0, 3.0, 7.0, 0.3])


def _direct_objective(md, x, part=None):
    """Oracle: evaluate the case objective by explicit residual summation."""
    w = evaluate_w(md, x)
    if part is None:
        return float(np.sum(w * w)) / (6.0 * md.n_samples)
    cols_n = np.asarray(list(part.set_N), dtype=int)
    cols_f = np.asarray(list(part.set_F), dtype=int)
    eta = 6.0 * (md.n_samples - len(part.set_D))
    tot = 0.0
    if cols_n.size:
        tot += float(np.sum(md.S[:, cols_n] ** 2))
    if cols_f.size:
        tot += float(np.sum(w[:, cols_f] ** 2))
    return tot / eta


def test_healthy_model_s_vanishes():
    pw, z = healthy_window(seed=5)
    md = build_mismatch(pw, z)
    assert np.max(np.abs(md.S)) < 1e-9 * V_PEAK
    assert delta_healthy(md.S) < 1e-18 * V_PEAK**2


def test_faulted_model_w_vanishes_at_truth():
    pw, z = faulted_window(X0[:4], X0[4], seed=6)
    md = build_mismatch(pw, z)
    assert np.max(np.abs(evaluate_w(md, X0))) < 1e-9 * V_PEAK
    # the healthy equations are badly violated by the same waveforms
    assert delta_healthy(md.S) > 1.0


def test_w_structure_invariants():
    pw, z = faulted_window(X0[:4], X0[4], seed=7)
    md = build_mismatch(pw, z)
    # the first three rows depend on alpha only
    assert np.max(np.abs(md.W_coeff[0:3, :, 0:4])) == 0.0
    # at x = 0 the last three rows reduce to the terminal-1 voltage
    w0 = evaluate_w(md, np.zeros(5))
    assert np.array_equal(w0[3:6], pw.U1)


def test_objective_identity_random_points():
    rng = np.random.default_rng(8)
    pw, z = faulted_window(X0[:4], X0[4], seed=9)
    md = build_mismatch(pw, z)
    n, m = md.n_samples, 10
    parts = [None] + [partition_rounded(n, m, k) for k in (2, 5, 10)]
    for part in parts:
        h, f, d = assemble_case_qp(md, part)
        for _ in range(10):
            x = np.array([*rng.uniform(0, 80, 4), rng.uniform(0, 1)])
            via_qp = float(x @ h @ x + f @ x + d)
            direct = _direct_objective(md, x, part)
            assert via_qp == pytest.approx(direct, rel=1e-10, abs=1e-10)


def test_partition_spec_examples():
    p = partition(200, 10, 1)
    assert (list(p.set_N), list(p.set_D), list(p.set_F)) == (
        list(range(0, 180)), list(range(180, 200)), [])
    p = partition(200, 10, 10)
    assert (list(p.set_N), list(p.set_D), list(p.set_F)) == (
        [], list(range(0, 20)), list(range(20, 200)))


def test_partition_cover_and_disjoint():
    for n, m in ((200, 10), (120, 6), (197, 10)):
        seen = []
        for k in range(1, m + 1):
            p = partition_rounded(n, m, k)
            assert list(p.set_N) + list(p.set_D) + list(p.set_F) == list(range(n))
            seen.extend(p.set_D)
        assert sorted(seen) == list(range(n))


def test_partition_requires_divisibility():
    with pytest.raises(InvalidParameterError):
        partition(197, 10, 3)
    # the rounded variant accepts any n
    partition_rounded(197, 10, 3)


def test_partition_matches_strict_when_divisible():
    for k in range(1, 11):
        a = partition(200, 10, k)
        b = partition_rounded(200, 10, k)
        assert (a.set_N, a.set_D, a.set_F) == (b.set_N, b.set_D, b.set_F)


def test_delta_healthy_basics():
    assert delta_healthy(np.zeros((6, 30))) == 0.0
    assert delta_healthy(np.ones((6, 30))) == pytest.approx(1.0)


def test_qp_matrix_psd():
    pw, z = faulted_window(X0[:4], X0[4], seed=10)
    md = build_mismatch(pw, z)
    for part in (None, partition_rounded(md.n_samples, 10, 4)):
        h, _, _ = assemble_case_qp(md, part)
        eig = np.linalg.eigvalsh(h)
        assert eig[0] >= -1e-10 * max(eig[-1], 1.0)


def test_empty_fault_set_rejected():
    pw, z = faulted_window(X0[:4], X0[4], seed=11)
    md = build_mismatch(pw, z)
    with pytest.raises(InvalidParameterError):
        assemble_case_qp(md, partition_rounded(md.n_samples, 10, 1))


def test_case_list_shape_and_ordering():
    pw, z = healthy_window(seed=12)
    results = evaluate_all_cases(pw, z, m_splits=10)
    assert [r.m for r in results] == list(range(1, 13))
    assert results[0].x_star is None          # healthy case has no fit
    assert results[2].x_star is None          # k=1 mixture uses no QP
    assert results[1].x_star is not None
    assert results[1].identifiable is not None
    for r in results[3:]:
        assert r.x_star is not None
        assert r.inception_interval is not None


def test_exact_post_fault_case2_wins():
    pw, z = faulted_window(X0[:4], X0[4], seed=13)
    results = evaluate_all_cases(pw, z, m_splits=10)
    by_m = {r.m: r for r in results}
    scale = by_m[1].delta          # healthy-model violation sets the scale
    assert scale > 1e6
    assert 0.0 <= by_m[2].delta <= 1e-12 * scale
    assert np.allclose(by_m[2].x_star, X0, rtol=1e-6)
    dust = 1e-10 * scale
    for m in range(4, 13):
        assert by_m[2].delta <= by_m[m].delta + dust
    # any mixture that keeps healthy-model samples stays far from zero
    for m in range(4, 12):
        assert by_m[m].delta > 1e-3
    # the k=M mixture has no healthy samples left, so it fits exactly too
    assert by_m[12].delta <= dust


def test_inception_interval_maps_through_kept():
    pw, z = faulted_window(X0[:4], X0[4], seed=14)
    results = evaluate_all_cases(pw, z, m_splits=10)
    n = pw.n_samples
    for r in results:
        if r.m < 4:
            continue
        k = r.m - 2
        part = partition_rounded(n, 10, k)
        lo, hi = r.inception_interval
        assert lo == part.set_D[0]
        assert hi == part.set_D[-1]


def test_argmin_invariant_under_signal_scaling():
    # perturb the exact window slightly so every delta is well above
    # rounding dust and the argmin is generic, then scale all signals
    import dataclasses

    rng = np.random.default_rng(16)
    pw, z = faulted_window(X0[:4], X0[4], seed=15)
    pw = dataclasses.replace(
        pw,
        U1=pw.U1 * (1 + 1e-4 * rng.standard_normal(pw.U1.shape)),
        U2=pw.U2 * (1 + 1e-4 * rng.standard_normal(pw.U2.shape)),
    )
    res_base = evaluate_all_cases(pw, z, m_splits=10)
    c = 3.7
    pw_scaled = dataclasses.replace(
        pw, U1=c * pw.U1, U2=c * pw.U2, I1=c * pw.I1, I2=c * pw.I2,
        dI1=c * pw.dI1, dI2=c * pw.dI2)
    res_scaled = evaluate_all_cases(pw_scaled, z, m_splits=10)
    d_base = np.array([r.delta for r in res_base])
    d_scaled = np.array([r.delta for r in res_scaled])
    assert np.all(d_base > 1e-3)
    assert int(np.argmin(d_base)) == int(np.argmin(d_scaled))
    assert np.allclose(d_scaled / d_base, c * c, rtol=1e-6)
