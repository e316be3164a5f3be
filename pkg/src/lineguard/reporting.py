"""Study outputs: delimited files, a plain-text table, and figures.

Figures render through the Agg backend and import matplotlib only when
first needed, so batch metric runs never touch the plotting stack.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from .harness import StudyReport, compute_metrics

_BASE_COLUMNS = [
    "sid", "part", "window", "start", "group", "truth_state",
    "fault_type_true", "alpha_true", "state", "case", "guard_veto",
    "alpha_est", "r_a_est", "r_b_est", "r_c_est", "r_g_est",
    "fault_type_est", "inception", "contained", "loc_err_m",
    "res_err_ohm", "error",
]

SWEEP_COLUMNS = [
    "security", "dependability",
    "loc_err_max_m", "loc_err_mean_m", "rf_err_max_ohm", "rf_err_mean_ohm",
]


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".9g")
    return str(v)


def verdict_columns(rows) -> list[str]:
    deltas = sorted({k for r in rows for k in r if k.startswith("delta_")})
    return _BASE_COLUMNS + deltas


def write_verdicts_csv(rows, path) -> None:
    cols = verdict_columns(rows)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(cols)
        for r in rows:
            out.writerow([_fmt(r.get(c, "")) for c in cols])


def read_verdicts_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["group"] = int(r["group"])
        r["window"] = int(r["window"])
        r["start"] = int(r["start"])
        if r["contained"] != "":
            r["contained"] = int(r["contained"])
    return rows


def _flatten(d, prefix=""):
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _flatten(v, key + ".")
        else:
            yield key, v


def write_metrics_csv(metrics: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["metric", "value"])
        for k, v in _flatten(metrics):
            out.writerow([k, _fmt(v)])


def write_sweep_csv(key_name: str, summary_rows: list, path) -> None:
    cols = [key_name] + SWEEP_COLUMNS
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(cols)
        for r in summary_rows:
            out.writerow([_fmt(r.get(c, "")) for c in cols])


def write_timings(timings_ms, path) -> None:
    with open(path, "w") as fh:
        if not timings_ms:
            fh.write("no windows evaluated\n")
            return
        arr = np.asarray(timings_ms)
        fh.write(f"windows evaluated: {arr.size}\n")
        fh.write(f"per-window runtime ms: mean {arr.mean():.3f}  "
                 f"median {np.median(arr):.3f}  "
                 f"p95 {np.percentile(arr, 95):.3f}  max {arr.max():.3f}\n")


def format_table(metrics: dict, title: str = "study") -> str:
    lines = [title, "=" * len(title), ""]
    lines.append(f"windows: {metrics['n_windows']}  "
                 f"(truth-healthy {metrics['n_healthy_truth']}, "
                 f"truth-fault {metrics['n_fault_truth']})")
    lines.append(f"security:      {metrics['security']:.6f}  "
                 f"({metrics['false_trips']} false trips)")
    lines.append(f"dependability: {metrics['dependability']:.6f}")
    lines.append(f"inception containment (group 2 trips): "
                 f"{metrics['g2_contained']}/{metrics['g2_trips']}")
    lines.append("")
    if metrics["per_type"]:
        lines.append(f"{'type/group':<12}{'windows':>9}{'detected':>10}"
                     f"{'percent':>9}")
        for key, row in metrics["per_type"].items():
            lines.append(f"{key:<12}{row['windows']:>9}{row['detected']:>10}"
                         f"{row['pct']:>8.1f}%")
        lines.append("")
    for label, key in (("location error (m), group 2", "loc_err_g2"),
                       ("location error (m), group 3", "loc_err_g3"),
                       ("resistance error (ohm), group 2", "res_err_g2"),
                       ("resistance error (ohm), group 3", "res_err_g3")):
        st = metrics[key]
        if st["count"]:
            lines.append(f"{label}: mean {st['mean']:.4g}  max {st['max']:.4g}"
                         f"  (n={st['count']})")
    lines.append("")
    return "\n".join(lines)


def _delta_points(rows):
    xs, ys, kinds = [], [], []
    for r in rows:
        d1 = r.get("delta_01", "")
        if d1 == "" or r["state"] == "rejected":
            continue
        rest = [float(v) for k, v in r.items()
                if k.startswith("delta_") and k != "delta_01" and v != ""]
        if not rest:
            continue
        xs.append(float(d1))
        ys.append(min(rest))
        kinds.append(r["truth_state"])
    return np.array(xs), np.array(ys), np.array(kinds)


def figure_delta_margin(rows, path) -> bool:
    xs, ys, kinds = _delta_points(rows)
    if xs.size == 0:
        return False
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 5))
    eps = 1e-30
    for kind, color in (("healthy", "tab:blue"), ("trip", "tab:red")):
        sel = kinds == kind
        if np.any(sel):
            ax.loglog(xs[sel] + eps, ys[sel] + eps, ".", ms=4, alpha=0.6,
                      label=f"truth {kind}", color=color)
    lo = min(xs.min(), ys.min()) + eps
    hi = max(xs.max(), ys.max()) + eps
    ax.loglog([lo, hi], [lo, hi], "k--", lw=0.8, label="equal score")
    ax.set_xlabel("healthy-model score")
    ax.set_ylabel("best fault-model score")
    ax.legend()
    ax.set_title("score separation per window")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def _hist_figure(values, xlabel, title, path) -> bool:
    if not values:
        return False
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(values, bins=30, color="tab:purple", alpha=0.8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("windows")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def figure_error_histograms(rows, outdir) -> list:
    loc = [float(r["loc_err_m"]) for r in rows
           if r.get("loc_err_m", "") != "" and r["group"] == 3]
    res = [float(r["res_err_ohm"]) for r in rows
           if r.get("res_err_ohm", "") != "" and r["group"] == 3]
    made = []
    if _hist_figure(loc, "location error (m)",
                    "post-inception location accuracy",
                    os.path.join(outdir, "loc_err_hist.png")):
        made.append("loc_err_hist.png")
    if _hist_figure(res, "resistance error (ohm)",
                    "post-inception resistance accuracy",
                    os.path.join(outdir, "res_err_hist.png")):
        made.append("res_err_hist.png")
    return made


def figure_sweep(key_name: str, summary_rows: list, outdir) -> list:
    if not summary_rows:
        return []
    plt = _plt()
    xs = [r[key_name] for r in summary_rows]
    made = []

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(xs, [100.0 * r["security"] for r in summary_rows], "o-",
            label="security")
    ax.plot(xs, [100.0 * r["dependability"] for r in summary_rows], "s-",
            label="dependability")
    ax.set_xlabel(key_name)
    ax.set_ylabel("percent")
    ax.set_ylim(-2, 102)
    ax.legend()
    ax.set_title("classification performance")
    fig.tight_layout()
    name = f"sweep_{key_name}_performance.png"
    fig.savefig(os.path.join(outdir, name), dpi=120)
    plt.close(fig)
    made.append(name)

    err_rows = [r for r in summary_rows if r["loc_err_max_m"] != ""]
    if err_rows:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.semilogy([r[key_name] for r in err_rows],
                    [r["loc_err_max_m"] for r in err_rows], "o-",
                    label="max location error (m)")
        ax.semilogy([r[key_name] for r in err_rows],
                    [r["loc_err_mean_m"] for r in err_rows], "s-",
                    label="mean location error (m)")
        ax.set_xlabel(key_name)
        ax.set_ylabel("meters")
        ax.legend()
        ax.set_title("location accuracy")
        fig.tight_layout()
        name = f"sweep_{key_name}_errors.png"
        fig.savefig(os.path.join(outdir, name), dpi=120)
        plt.close(fig)
        made.append(name)
    return made


def write_report(report: StudyReport, outdir, title: str = "study") -> None:
    """Full output set for one suite run."""
    os.makedirs(outdir, exist_ok=True)
    write_verdicts_csv(report.rows, os.path.join(outdir, "verdicts.csv"))
    write_metrics_csv(report.metrics, os.path.join(outdir, "metrics.csv"))
    with open(os.path.join(outdir, "table.txt"), "w") as fh:
        fh.write(format_table(report.metrics, title))
    write_timings(report.timings_ms, os.path.join(outdir, "timings.txt"))
    figure_delta_margin(report.rows, os.path.join(outdir, "delta_margin.png"))
    figure_error_histograms(report.rows, outdir)


def rerender(outdir, title: str = "study") -> None:
    """Rebuild table and figures from a directory's verdicts file."""
    rows = read_verdicts_csv(os.path.join(outdir, "verdicts.csv"))
    metrics = compute_metrics(rows)
    write_metrics_csv(metrics, os.path.join(outdir, "metrics.csv"))
    with open(os.path.join(outdir, "table.txt"), "w") as fh:
        fh.write(format_table(metrics, title))
    figure_delta_margin(rows, os.path.join(outdir, "delta_margin.png"))
    figure_error_histograms(rows, outdir)
