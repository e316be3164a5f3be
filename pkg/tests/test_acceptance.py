"""End-to-end acceptance battery.

Twelve gates over the full pipeline at desk scale: exact-model algebra,
solver cross-checks, the four study suites, the robustness sweeps, and
reproducibility of the report files.  Each test prints one line naming
the behavior it gates; the heavyweight study reports are session
fixtures in conftest.py.
"""

import numpy as np

from _analytic import faulted_window, healthy_window
from _oracles import projected_gradient_batch
from lineguard.boxqp import kkt_check, solve_box_qp
from lineguard.grid import FaultSpec, GridScenario, fixed_line, fixed_source
from lineguard.harness import internal_suite, normal_suite, run_suite
from lineguard.mismatch import evaluate_all_cases
from lineguard.reporting import write_report
from lineguard.simulate import simulate

U_NOM = 36e3
LINE_M = 40e3


def _gate(name: str, ok: bool, detail: str):
    print(f"[ACCEPTANCE] {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name} ({detail})"


def test_c01_exact_models_fit_to_rounding():
    worst_h = 0.0
    for seed in range(10):
        pw, z = healthy_window(seed=seed)
        results = evaluate_all_cases(pw, z, m_splits=10)
        worst_h = max(worst_h, results[0].delta)

    rng = np.random.default_rng(42)
    worst_rel_obj = 0.0
    worst_rel_x = 0.0
    for seed in range(10):
        x0 = np.array([*rng.uniform(0.5, 60.0, 4), rng.uniform(0.05, 0.95)])
        pw, z = faulted_window(x0[:4], x0[4], seed=100 + seed)
        by_m = {r.m: r for r in evaluate_all_cases(pw, z, m_splits=10)}
        assert by_m[1].delta > 1e6     # healthy equations clearly violated
        worst_rel_obj = max(worst_rel_obj, by_m[2].delta / by_m[1].delta)
        worst_rel_x = max(worst_rel_x,
                          float(np.max(np.abs(by_m[2].x_star - x0) / x0)))
    ok = (worst_h < 1e-18 * U_NOM**2 and worst_rel_obj < 1e-12
          and worst_rel_x < 1e-6)
    _gate("exact-model residuals", ok,
          f"healthy {worst_h:.3e}, fitted rel obj {worst_rel_obj:.3e}, "
          f"recovery rel err {worst_rel_x:.3e}")


def test_c02_qp_solver_matches_independent_oracle():
    rng = np.random.default_rng(2024)
    n, worst_abs, worst_over = 5, 0.0, -np.inf
    kkt_all = True
    for _ in range(10):                       # 10 batches x 100 problems
        hi = np.where(rng.random(n) < 0.5, np.inf, rng.uniform(0.2, 5.0, n))
        lo = np.zeros(n)
        hs, fs, ds, xs_obj = [], [], [], []
        for _ in range(100):
            a = rng.standard_normal((n, n))
            h = a @ a.T + 10.0 ** rng.uniform(-3, 1) * np.eye(n)
            f = rng.standard_normal(n) * 10.0 ** rng.uniform(-1, 2)
            d = float(rng.standard_normal() * 10.0)
            sol = solve_box_qp(h, f, d, lo=lo, hi=hi)
            kkt_all &= sol.kkt_ok and kkt_check(h, f, sol.x, lo, hi)
            hs.append(h), fs.append(f), ds.append(d)
            xs_obj.append(sol.objective)
        _, oracle = projected_gradient_batch(hs, fs, np.array(ds), lo, hi)
        diff = np.array(xs_obj) - oracle
        worst_abs = max(worst_abs, float(np.max(np.abs(diff))))
        worst_over = max(worst_over, float(np.max(diff)))
    ok = worst_abs <= 1e-8 and worst_over <= 1e-10 and kkt_all
    _gate("qp oracle equivalence", ok,
          f"1000 problems, max |gap| {worst_abs:.2e}, "
          f"max excess {worst_over:.2e}, kkt {'all pass' if kkt_all else 'FAIL'}")


def test_c03_normal_operation_never_trips(normal_report):
    m = normal_report.metrics
    trips = sum(1 for r in normal_report.rows if r["state"] == "trip")
    ok = m["n_windows"] == 100 and trips == 0
    _gate("normal-operation security", ok,
          f"{trips} trips over {m['n_windows']} windows")


def test_c04_external_faults_never_trip(external_report):
    m = external_report.metrics
    trips = sum(1 for r in external_report.rows if r["state"] == "trip")
    ok = trips == 0 and m["security"] == 1.0 and m["n_windows"] > 0
    _gate("external-fault security", ok,
          f"{trips} trips over {m['n_windows']} windows, both buses")


def test_c05_internal_faults_always_detected(internal_report):
    m = internal_report.metrics
    g1_trips = sum(1 for r in internal_report.rows
                   if r["group"] == 1 and r["state"] == "trip")
    ok = m["dependability"] == 1.0 and g1_trips == 0 and m["n_fault_truth"] > 0
    _gate("internal-fault dependability", ok,
          f"dependability {m['dependability']:.4f} over "
          f"{m['n_fault_truth']} fault windows, pre-fault trips {g1_trips}")


def test_c06_post_fault_estimates_accurate(internal_report):
    loc = internal_report.metrics["loc_err_g3"]
    res = internal_report.metrics["res_err_g3"]
    ok = (loc["count"] > 0 and loc["max"] <= 100.0 and loc["mean"] <= 10.0
          and res["max"] <= 1.0)
    _gate("post-fault estimation accuracy", ok,
          f"location max {loc['max']:.3f} m mean {loc['mean']:.3f} m, "
          f"resistance max {res['max']:.4f} ohm (n={loc['count']})")


def test_c07_inception_interval_contains_truth(internal_report):
    m = internal_report.metrics
    ok = m["g2_trips"] > 0 and m["containment"] == 1.0
    _gate("inception containment", ok,
          f"{m['g2_contained']}/{m['g2_trips']} fault-onset windows contained")


def test_c08_noise_sweep_keeps_verdict_quality(noise_reports):
    parts = []
    ok = True
    for snr in (60.0, 80.0, 110.0):
        m = noise_reports[snr].metrics
        ok &= m["security"] == 1.0 and m["dependability"] == 1.0
        parts.append(f"{snr:g}dB sec {m['security']:.3f} "
                     f"dep {m['dependability']:.3f}")
    m30 = noise_reports[30.0].metrics
    ok &= m30["dependability"] == 1.0
    parts.append(f"30dB dep {m30['dependability']:.3f}")
    _gate("noise robustness", ok, "; ".join(parts))


def test_c09_line_parameter_error_tolerated(param_reports):
    parts = []
    ok = True
    for dev in (-10.0, 10.0):
        m = param_reports[dev].metrics
        loc = m["loc_err_g3"]
        ok &= (m["security"] == 1.0 and m["dependability"] == 1.0
               and loc["count"] > 0 and loc["mean"] <= 0.05 * LINE_M)
        parts.append(f"{dev:+g}% sec {m['security']:.3f} "
                     f"dep {m['dependability']:.3f} "
                     f"loc mean {loc['mean']:.0f} m (max {loc['max']:.0f})")
    _gate("line-parameter robustness", ok, "; ".join(parts))


def test_c10_packet_loss_changes_no_verdict(sweep_baseline_report,
                                            sweep_lossy_report):
    v0 = {(r["sid"], r["window"]): r["state"]
          for r in sweep_baseline_report.rows}
    v1 = {(r["sid"], r["window"]): r["state"]
          for r in sweep_lossy_report.rows}
    changed = sum(1 for k in v0 if v1.get(k) != v0[k])
    ok = v0.keys() == v1.keys() and changed == 0
    _gate("packet-loss invariance", ok,
          f"{changed} verdicts changed across {len(v0)} windows at 5% loss")


def test_c11_halved_time_step_consistency():
    def record(fs, fault):
        return simulate(GridScenario(
            line=fixed_line(),
            source1=fixed_source(0.0, 1.04),
            source2=fixed_source(-15.0, 0.97),
            fault=fault,
            sim_duration_s=0.03,
            sample_rate_hz=fs,
            seed=3,
        ))

    faults = [
        FaultSpec("K3", 0.0, 0.0, 0.0, None, alpha=0.5,
                  placement="internal", t_inception=0.01),
        FaultSpec("K1", 20.0, None, None, 0.0, placement="bus2",
                  t_inception=0.01, t_clearing=0.021),
    ]
    worst = 0.0
    for fault in faults:
        coarse = record(1e5, fault).channels()
        fine = record(2e5, fault).channels()[:, ::2][:, :coarse.shape[1]]
        peak = np.max(np.abs(coarse), axis=1, keepdims=True)
        worst = max(worst, float(np.max(np.abs(coarse - fine) / peak)))
    ok = worst < 1e-3
    _gate("step-halving convergence", ok,
          f"max change {100.0 * worst:.5f}% of channel peak")


def test_c12_same_seed_reports_are_byte_identical(tmp_path):
    def build():
        cases = internal_suite(grid_sets=1, r_levels=(50.0,),
                               alphas=(0.3, 0.7), t_inception_ms=(8.5,),
                               snr_db=80.0, loss_prob=0.02)
        return cases + normal_suite(n_scenarios=2, snr_db=80.0,
                                    loss_prob=0.02)

    out = []
    for name in ("one", "two"):
        d = tmp_path / name
        write_report(run_suite(build()), d)
        out.append(d)
    same = {name: (out[0] / name).read_bytes() == (out[1] / name).read_bytes()
            for name in ("verdicts.csv", "metrics.csv")}
    ok = all(same.values())
    _gate("report determinism", ok,
          ", ".join(f"{k} {'identical' if v else 'DIFFERS'}"
                    for k, v in same.items()))
