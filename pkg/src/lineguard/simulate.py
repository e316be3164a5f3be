"""Fixed-step transient simulator of the two-source test grid.

The network is a pair of EMFs behind coupled R-L source impedances, the
protected line between buses 1 and 2, and an optional shunt fault on the
line (at fractional position alpha) or at either bus.  Every R-L branch
is discretized with the trapezoidal rule into a companion current source
plus conductance; resistive fault branches stamp directly.  For each
switching state the nodal equations are condensed into a small linear
recurrence

    state[j]  = A state[j-1] + B e[j]        (state = branch histories)
    output[j] = C state[j-1] + D e[j]        (terminal u and i)

so the run is two small mat-vecs per sample.  The record starts at the
exact periodic solution of the discrete system, which makes the first
samples transient-free to machine precision.  Topology changes remap the
state between compiled stages: segment histories inherit the whole-line
history scaled by orientation, everything else carries over by name.

Bolted branches (zero resistance) are handled by merging nodes instead
of stamping infinite conductances; ground absorbs whatever it touches.
"""

from __future__ import annotations

import cmath
import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, SimulationError
from .grid import (
    GridScenario,
    PhaseImpedance,
    build_phase_matrices,
    source_phase_matrices,
)

CSV_HEADER = "t,u1a,u1b,u1c,u2a,u2b,u2c,i1a,i1b,i1c,i2a,i2b,i2c,missing"

_GND = ("gnd",)


@dataclass(frozen=True)
class WaveformRecord:
    """Synchronized two-terminal samples on a uniform grid.

    Currents follow the convention that both i1 and i2 flow INTO the
    line at their terminal, so i1 + i2 is the total shunt (fault)
    current and is zero for a healthy or external condition.
    """

    sample_rate: float
    timestamps: np.ndarray  # (T,)
    u1: np.ndarray          # (3, T)
    u2: np.ndarray
    i1: np.ndarray
    i2: np.ndarray
    missing_mask: np.ndarray  # (T,) bool

    @property
    def n_samples(self) -> int:
        return int(self.timestamps.shape[0])

    def channels(self) -> np.ndarray:
        """All twelve channels stacked (u1, u2, i1, i2)."""
        return np.vstack([self.u1, self.u2, self.i1, self.i2])


# ---------------------------------------------------------------------------
# Topology compilation


class _UnionFind:
    def __init__(self):
        self.parent = {}

    def add(self, x):
        self.parent.setdefault(x, x)

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        # Ground wins so merged-with-ground nodes stay at zero volts.
        if rb == _GND:
            ra, rb = rb, ra
        self.parent[rb] = ra


@dataclass(frozen=True)
class _RlBranch:
    name: str
    emf: str | None         # "e1", "e2" or None when from-side is a node
    from_nodes: tuple | None
    to_nodes: tuple
    r: np.ndarray
    l: np.ndarray


@dataclass(frozen=True)
class _Stage:
    """One switching state compiled to a linear recurrence.

    a/b advance the trapezoidal history state, cy/dy read the twelve
    outputs.  p/q/yb/kb/ylh/ci/di expose the building blocks needed to
    enter the stage through two backward-Euler half steps, which keeps
    the voltage jump of a topology change out of the integrator history.
    """

    a: np.ndarray
    b: np.ndarray
    cy: np.ndarray
    dy: np.ndarray
    p: np.ndarray      # branch voltages from history
    q: np.ndarray      # branch voltages from emf
    yb: np.ndarray     # block-diag branch admittance (R + 2L/h)^-1
    kb: np.ndarray     # block-diag 2L/h - R
    ylh: np.ndarray    # yb @ (2L/h): backward-Euler history from currents
    ci: np.ndarray     # branch currents from history
    di: np.ndarray     # branch currents from emf
    branch_names: tuple
    carry: np.ndarray | None  # maps previous stage's branch currents here


def _phase_nodes(tag):
    return tuple((tag, p) for p in range(3))


def _branches_for(topology: str, z_s1, z_s2, z_line, alpha: float | None):
    br = [
        _RlBranch("src1", "e1", None, _phase_nodes("A"), z_s1.R, z_s1.L),
        _RlBranch("src2", "e2", None, _phase_nodes("B"), z_s2.R, z_s2.L),
    ]
    if topology == "internal_mid":
        br.append(
            _RlBranch("seg1", None, _phase_nodes("A"), _phase_nodes("F"),
                      alpha * z_line.R, alpha * z_line.L)
        )
        br.append(
            _RlBranch("seg2", None, _phase_nodes("B"), _phase_nodes("F"),
                      (1.0 - alpha) * z_line.R, (1.0 - alpha) * z_line.L)
        )
    else:
        br.append(
            _RlBranch("line", None, _phase_nodes("A"), _phase_nodes("B"),
                      z_line.R, z_line.L)
        )
    return br


def _fault_nodes(topology: str, placement: str | None):
    if topology == "internal_mid":
        return _phase_nodes("F")
    if placement in (None, "bus1"):
        return _phase_nodes("A")
    return _phase_nodes("B")


def _compile_stage(
    branches,
    fault_resistances,
    fault_nodes,
    h: float,
    current_rows,
    prev_names=None,
):
    """Build the recurrence matrices for one switching state.

    ``fault_resistances`` is None (no fault) or the (r_a, r_b, r_c, r_g)
    tuple with OPEN entries meaning absent branches.  ``current_rows``
    maps output currents: (i1 source, i1 sign, i2 source, i2 sign) by
    branch name.
    """
    uf = _UnionFind()
    uf.add(_GND)
    nodes = []
    for br in branches:
        for nd in (br.from_nodes or ()) + br.to_nodes:
            if nd not in uf.parent:
                uf.add(nd)
                nodes.append(nd)
    star = ("star",)
    resistive = []  # (node_a, node_b_or_gnd, conductance)
    if fault_resistances is not None:
        r_a, r_b, r_c, r_g = fault_resistances
        uf.add(star)
        nodes.append(star)
        for p, r_p in enumerate((r_a, r_b, r_c)):
            if r_p is None:
                continue
            if r_p == 0.0:
                uf.union(fault_nodes[p], star)
            else:
                resistive.append((fault_nodes[p], star, 1.0 / r_p))
        if r_g is not None:
            if r_g == 0.0:
                uf.union(star, _GND)
            else:
                resistive.append((star, _GND, 1.0 / r_g))

    reps = sorted({uf.find(nd) for nd in nodes if uf.find(nd) != _GND})
    index = {rep: i for i, rep in enumerate(reps)}
    nunk = len(reps)

    def node_selector(node_list):
        sel = np.zeros((len(node_list), nunk))
        for i, nd in enumerate(node_list):
            rep = uf.find(nd)
            if rep != _GND:
                sel[i, index[rep]] = 1.0
        return sel

    nb = len(branches)
    nstate = 3 * nb
    g = np.zeros((nunk, nunk))
    s_h = np.zeros((nunk, nstate))
    s_e = np.zeros((nunk, 6))
    yb = np.zeros((nstate, nstate))
    kb = np.zeros((nstate, nstate))
    v_n = np.zeros((nstate, nunk))
    v_e = np.zeros((nstate, 6))

    two_l_over_h = 2.0 / h
    lb2h = np.zeros((nstate, nstate))
    for bi, br in enumerate(branches):
        y = np.linalg.inv(br.r + two_l_over_h * br.l)
        k = two_l_over_h * br.l - br.r
        rows = slice(3 * bi, 3 * bi + 3)
        yb[rows, rows] = y
        kb[rows, rows] = k
        lb2h[rows, rows] = two_l_over_h * br.l
        to_sel = node_selector(br.to_nodes)
        if br.emf is not None:
            e_cols = slice(0, 3) if br.emf == "e1" else slice(3, 6)
            # Current Y(e - v_to) + Ih enters the to-node.
            s_e[:, e_cols] += to_sel.T @ y
            s_h[:, rows] += to_sel.T
            g += to_sel.T @ y @ to_sel
            v_e[rows, e_cols] = np.eye(3)
            v_n[rows] = -to_sel
        else:
            fr_sel = node_selector(br.from_nodes)
            diff = fr_sel - to_sel
            g += diff.T @ y @ diff
            s_h[:, rows] += -fr_sel.T + to_sel.T
            v_n[rows] = diff
    for nd_a, nd_b, cond in resistive:
        ra, rb_ = uf.find(nd_a), uf.find(nd_b)
        if ra == rb_:
            continue
        for r1, r2 in ((ra, rb_), (rb_, ra)):
            if r1 != _GND:
                g[index[r1], index[r1]] += cond
                if r2 != _GND:
                    g[index[r1], index[r2]] -= cond

    try:
        g_inv = np.linalg.inv(g)
    except np.linalg.LinAlgError as exc:
        raise SimulationError(f"singular network ({nunk} nodes)") from exc
    p_v_h = g_inv @ s_h
    p_v_e = g_inv @ s_e
    p = v_n @ p_v_h
    q = v_n @ p_v_e + v_e

    ymix = yb @ (np.eye(nstate) + kb @ yb)
    a = ymix @ p + yb @ kb
    b = ymix @ q
    c_i = yb @ p + np.eye(nstate)
    d_i = yb @ q

    sel_a = node_selector(_phase_nodes("A"))
    sel_b = node_selector(_phase_nodes("B"))
    cy = np.zeros((12, nstate))
    dy = np.zeros((12, 6))
    cy[0:3] = sel_a @ p_v_h
    dy[0:3] = sel_a @ p_v_e
    cy[3:6] = sel_b @ p_v_h
    dy[3:6] = sel_b @ p_v_e
    names = [br.name for br in branches]
    for out_row, (src_name, sign) in zip((6, 9), current_rows):
        bi = names.index(src_name)
        rows = slice(3 * bi, 3 * bi + 3)
        cy[out_row:out_row + 3] = sign * c_i[rows]
        dy[out_row:out_row + 3] = sign * d_i[rows]

    carry = None
    if prev_names is not None:
        # Inductor currents are the quantities that survive a topology
        # change.  Splitting the line at the fault hands its current to
        # both halves; seg2 points the other way, hence the sign.
        carry = np.zeros((nstate, 3 * len(prev_names)))
        for bi, name in enumerate(names):
            src, sign = {
                "seg1": ("line", 1.0),
                "seg2": ("line", -1.0),
            }.get(name, (name, 1.0))
            if src in prev_names:
                pj = prev_names.index(src)
                carry[3 * bi:3 * bi + 3, 3 * pj:3 * pj + 3] = sign * np.eye(3)
    return _Stage(
        a=a, b=b, cy=cy, dy=dy,
        p=p, q=q, yb=yb, kb=kb, ylh=yb @ lb2h, ci=c_i, di=d_i,
        branch_names=tuple(names), carry=carry,
    )


# ---------------------------------------------------------------------------
# Scenario assembly and the run loop


def emf_phasors(scn: GridScenario) -> np.ndarray:
    """Complex per-phase EMF phasors (6,): e(t) = Re(phasor * exp(jwt))."""
    peak = scn.phase_peak_v
    out = np.empty(6, dtype=complex)
    for si, src in enumerate((scn.source1, scn.source2)):
        base = math.radians(src.angle_deg)
        for p, shift in enumerate((0.0, -2.0 * math.pi / 3.0, 2.0 * math.pi / 3.0)):
            out[3 * si + p] = src.emf_pu * peak * cmath.exp(1j * (base + shift))
    return out


def _event_sample(t_event: float, fs: float) -> int:
    # First sample strictly after the event.  The topology change is
    # integrated over the step leaving the last pre-event sample, so an
    # on-grid switch instant stays aligned when the rate is refined.
    return max(1, math.floor(t_event * fs + 1e-9) + 1)


def _stage_plan(scn: GridScenario, z_s1, z_s2, z_line, h, n_total):
    """Ordered (start_sample, stage) pairs covering the whole record."""
    f = scn.fault
    healthy_rows = (("line", 1.0), ("line", -1.0))

    def healthy_stage(prev_names=None):
        return _compile_stage(
            _branches_for("healthy", z_s1, z_s2, z_line, None),
            None, None, h, healthy_rows, prev_names,
        )

    stages = [(0, healthy_stage())]
    if f.fault_type == "none":
        return stages
    j_f = _event_sample(f.t_inception, scn.sample_rate_hz)
    if j_f >= n_total:
        return stages

    if f.placement == "internal" and 0.0 < f.alpha < 1.0:
        topo = "internal_mid"
        rows = (("seg1", 1.0), ("seg2", 1.0))
    elif f.placement == "internal" and f.alpha == 0.0:
        topo = "at_bus1"
        rows = (("src1", 1.0), ("line", -1.0))
    elif f.placement == "internal":
        topo = "at_bus2"
        rows = (("line", 1.0), ("src2", 1.0))
    else:
        topo = "external"
        rows = healthy_rows
    branches = _branches_for(
        "internal_mid" if topo == "internal_mid" else "healthy",
        z_s1, z_s2, z_line, f.alpha,
    )
    placement = None if topo != "external" else f.placement
    if topo == "at_bus2":
        placement = "bus2"
    fnodes = _fault_nodes(
        "internal_mid" if topo == "internal_mid" else "healthy", placement
    )
    prev = stages[0][1].branch_names
    stages.append(
        (j_f, _compile_stage(branches, f.branch_resistances, fnodes, h, rows, prev))
    )
    if f.t_clearing is not None:
        j_c = _event_sample(f.t_clearing, scn.sample_rate_hz)
        if j_f < j_c < n_total:
            stages.append((j_c, healthy_stage(stages[1][1].branch_names)))
    return stages


def simulate(scn: GridScenario) -> WaveformRecord:
    """Run one scenario to a noise-free record (mask all clear)."""
    fs = scn.sample_rate_hz
    h = 1.0 / fs
    n_total = int(round(scn.sim_duration_s * fs))
    if n_total < 2:
        raise InvalidParameterError("record too short")
    z_line = build_phase_matrices(scn.line)
    z_s1 = source_phase_matrices(scn.source1)
    z_s2 = source_phase_matrices(scn.source2)
    stages = _stage_plan(scn, z_s1, z_s2, z_line, h, n_total)

    e_hat = emf_phasors(scn)
    z_rot = cmath.exp(1j * 2.0 * math.pi * scn.freq_hz * h)

    stage0 = stages[0][1]
    n0 = stage0.a.shape[0]
    try:
        s_hat = np.linalg.solve(
            z_rot * np.eye(n0) - stage0.a, stage0.b @ e_hat
        )
    except np.linalg.LinAlgError as exc:
        raise SimulationError("no periodic steady state") from exc
    # (zI - A)^-1 B E is the periodic state phasor evaluated one step
    # before sample 0, exactly where the run loop picks it up.
    state = np.real(s_hat)

    y = np.empty((12, n_total))
    bounds = [start for start, _ in stages[1:]] + [n_total]
    z_half = cmath.exp(1j * math.pi * scn.freq_hz * h)
    i_branch = None
    for (start, stage), stop in zip(stages, bounds):
        idx = np.arange(start, stop)
        e_block = np.real(e_hat[:, None] * z_rot ** idx[None, :])
        a, b, cy, dy = stage.a, stage.b, stage.cy, stage.dy
        k0 = 0
        if stage.carry is not None:
            # Enter the new topology with two backward-Euler half steps.
            # Their history term uses branch currents only, which stay
            # continuous through the switch, so the pre-switch voltage
            # never leaks into the new stage's integrator state.
            hb = stage.ylh @ (stage.carry @ i_branch)
            e_half = np.real(e_hat * z_rot ** (start - 1) * z_half)
            i_half = stage.yb @ (stage.p @ hb + stage.q @ e_half) + hb
            hb = stage.ylh @ i_half
            e0 = e_block[:, 0]
            y[:, start] = cy @ hb + dy @ e0
            v0 = stage.p @ hb + stage.q @ e0
            i_branch = stage.yb @ v0 + hb
            state = stage.yb @ (v0 + stage.kb @ i_branch)
            k0 = 1
        last = idx.shape[0] - 1
        for k in range(k0, idx.shape[0]):
            e = e_block[:, k]
            y[:, start + k] = cy @ state + dy @ e
            if k == last:
                i_branch = stage.ci @ state + stage.di @ e
            state = a @ state + b @ e
    if not np.all(np.isfinite(y)):
        raise SimulationError("non-finite samples produced")

    return WaveformRecord(
        sample_rate=fs,
        timestamps=np.arange(n_total) / fs,
        u1=y[0:3],
        u2=y[3:6],
        i1=y[6:9],
        i2=y[9:12],
        missing_mask=np.zeros(n_total, dtype=bool),
    )


def add_noise(w: WaveformRecord, snr_db: float, seed) -> WaveformRecord:
    """Add white Gaussian noise per channel at the given SNR."""
    if not math.isfinite(snr_db):
        raise InvalidParameterError("snr_db must be finite")
    rng = np.random.default_rng(seed)
    ch = w.channels()
    power = np.mean(ch * ch, axis=1)
    sigma = np.sqrt(power / 10.0 ** (snr_db / 10.0))
    noisy = ch + sigma[:, None] * rng.standard_normal(ch.shape)
    return WaveformRecord(
        sample_rate=w.sample_rate,
        timestamps=w.timestamps,
        u1=noisy[0:3],
        u2=noisy[3:6],
        i1=noisy[6:9],
        i2=noisy[9:12],
        missing_mask=w.missing_mask,
    )


def drop_samples(w: WaveformRecord, loss_prob: float, seed) -> WaveformRecord:
    """Mark timestamps lost with independent probability loss_prob."""
    if not 0.0 <= loss_prob < 1.0:
        raise InvalidParameterError("loss_prob must be in [0, 1)")
    rng = np.random.default_rng(seed)
    mask = rng.random(w.n_samples) < loss_prob
    return WaveformRecord(
        sample_rate=w.sample_rate,
        timestamps=w.timestamps,
        u1=w.u1,
        u2=w.u2,
        i1=w.i1,
        i2=w.i2,
        missing_mask=mask,
    )


def realize_scenario(scn: GridScenario) -> WaveformRecord:
    """simulate + noise + loss, with child seeds derived from the scenario."""
    rec = simulate(scn)
    noise_seed, loss_seed = np.random.SeedSequence(scn.seed).spawn(2)
    if scn.noise_snr_db is not None:
        rec = add_noise(rec, scn.noise_snr_db, noise_seed)
    if scn.packet_loss_prob:
        rec = drop_samples(rec, scn.packet_loss_prob, loss_seed)
    return rec


# ---------------------------------------------------------------------------
# CSV round trip


def record_to_csv(w: WaveformRecord, path) -> None:
    data = np.vstack([w.timestamps[None, :], w.channels()])
    with open(path, "w", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        out = csv.writer(fh)
        for j in range(w.n_samples):
            row = [format(v, ".17g") for v in data[:, j]]
            row.append(str(int(w.missing_mask[j])))
            out.writerow(row)


def record_from_csv(path) -> WaveformRecord:
    with open(path, newline="") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise InvalidParameterError(f"unexpected waveform header in {path}")
        raw = np.loadtxt(fh, delimiter=",", ndmin=2)
    if raw.shape[1] != 14:
        raise InvalidParameterError("waveform CSV must have 14 columns")
    t = raw[:, 0]
    if t.shape[0] < 2:
        raise InvalidParameterError("waveform too short")
    fs = (t.shape[0] - 1) / (t[-1] - t[0])
    ch = raw[:, 1:13].T
    return WaveformRecord(
        sample_rate=fs,
        timestamps=t,
        u1=ch[0:3],
        u2=ch[3:6],
        i1=ch[6:9],
        i2=ch[9:12],
        missing_mask=raw[:, 13] > 0.5,
    )
