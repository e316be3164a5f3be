"""Grid component models and scenario descriptions.

A scenario is a two-source single-line network: source 1 feeds bus 1,
source 2 feeds bus 2 and the protected line joins the buses.  Line and
source impedances are entered as positive-sequence values plus a
zero-to-positive ratio and expanded into coupled three-phase matrices.
Shunt faults are described by per-phase resistances where an absent
branch is the explicit marker ``OPEN`` (``None``), never a large float.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidParameterError

# Marker for an absent fault branch.
OPEN = None

FAULT_TYPES = ("K3", "K2", "K2g", "K1", "none")
PLACEMENTS = ("internal", "bus1", "bus2")


def _readonly(a):
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SequenceLineParameters:
    """Per-length line constants in sequence form.

    Arguments
    ---------
    r1_ohm_per_km : float
        Positive-sequence series resistance.
    l1_h_per_km : float
        Positive-sequence series inductance.
    k_seq : float
        Zero-to-positive sequence ratio, applied to both r and l.
    length_km : float
        Line length.
    """

    r1_ohm_per_km: float
    l1_h_per_km: float
    k_seq: float
    length_km: float

    def __post_init__(self):
        if not (self.r1_ohm_per_km > 0 and math.isfinite(self.r1_ohm_per_km)):
            raise InvalidParameterError("line r1 must be positive and finite")
        if not (self.l1_h_per_km > 0 and math.isfinite(self.l1_h_per_km)):
            raise InvalidParameterError("line l1 must be positive and finite")
        if not (self.k_seq >= 1.0 and math.isfinite(self.k_seq)):
            raise InvalidParameterError("line k_seq must be >= 1")
        if not (self.length_km > 0 and math.isfinite(self.length_km)):
            raise InvalidParameterError("line length must be positive")


@dataclass(frozen=True)
class SourceParameters:
    """EMF behind a coupled series R-L impedance.

    ``emf_pu`` scales the nominal phase-voltage peak ``sqrt(2)*U_g/sqrt(3)``.
    """

    emf_pu: float
    angle_deg: float
    r_ohm: float
    l_h: float
    k_seq: float

    def __post_init__(self):
        if not (self.emf_pu > 0 and math.isfinite(self.emf_pu)):
            raise InvalidParameterError("source emf_pu must be positive")
        if not math.isfinite(self.angle_deg):
            raise InvalidParameterError("source angle must be finite")
        if not (self.r_ohm >= 0 and math.isfinite(self.r_ohm)):
            raise InvalidParameterError("source resistance must be >= 0")
        if not (self.l_h > 0 and math.isfinite(self.l_h)):
            raise InvalidParameterError("source inductance must be positive")
        if not (self.k_seq >= 1.0 and math.isfinite(self.k_seq)):
            raise InvalidParameterError("source k_seq must be >= 1")


@dataclass(frozen=True)
class PhaseImpedance:
    """Coupled three-phase series impedance: R and L are symmetric 3x3."""

    R: np.ndarray
    L: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", _readonly(self.R))
        object.__setattr__(self, "L", _readonly(self.L))
        if self.R.shape != (3, 3) or self.L.shape != (3, 3):
            raise InvalidParameterError("phase matrices must be 3x3")


def _seq_to_phase(val1: float, val0: float) -> np.ndarray:
    """Expand (positive, zero) sequence scalars into a symmetric 3x3 matrix."""
    self_term = (val0 + 2.0 * val1) / 3.0
    mutual = (val0 - val1) / 3.0
    m = np.full((3, 3), mutual)
    np.fill_diagonal(m, self_term)
    return m


def phase_to_sequence(m: np.ndarray) -> tuple[float, float]:
    """Recover (positive, zero) sequence values from a balanced 3x3 matrix."""
    m = np.asarray(m, dtype=float)
    self_term = float(np.mean(np.diag(m)))
    mutual = float((np.sum(m) - 3.0 * self_term) / 6.0)
    return self_term - mutual, self_term + 2.0 * mutual


def build_phase_matrices(line: SequenceLineParameters) -> PhaseImpedance:
    """Total series phase matrices of the line.

    Returns
    -------
    PhaseImpedance
        R in ohm and L in henry for the whole line length.
    """
    r1 = line.r1_ohm_per_km * line.length_km
    l1 = line.l1_h_per_km * line.length_km
    return PhaseImpedance(
        R=_seq_to_phase(r1, line.k_seq * r1),
        L=_seq_to_phase(l1, line.k_seq * l1),
    )


def source_phase_matrices(src: SourceParameters) -> PhaseImpedance:
    """Coupled phase matrices of a source impedance (same transform as the line)."""
    return PhaseImpedance(
        R=_seq_to_phase(src.r_ohm, src.k_seq * src.r_ohm),
        L=_seq_to_phase(src.l_h, src.k_seq * src.l_h),
    )


def assemble_fault_matrix(r_f) -> np.ndarray:
    """Shunt fault resistance matrix for four closed branches.

    ``r_f`` is ``[r_a, r_b, r_c, r_g]``, all finite and non-negative.  The
    matrix maps the three phase fault currents to the phase voltages at the
    fault point: diagonal ``r_p + r_g``, off-diagonal ``r_g``.
    """
    r = np.asarray(r_f, dtype=float)
    if r.shape != (4,):
        raise InvalidParameterError("r_f must have four entries")
    if not np.all(np.isfinite(r)) or np.any(r < 0):
        raise InvalidParameterError("fault resistances must be finite and >= 0")
    z = np.full((3, 3), r[3])
    np.fill_diagonal(z, r[:3] + r[3])
    return z


# Finite-ness pattern per fault type: (a, b, c, g); True means a branch exists.
_BRANCH_PATTERN = {
    "K3": (True, True, True, False),
    "K2": (True, True, False, False),
    "K2g": (True, True, False, True),
    "K1": (True, False, False, True),
}


@dataclass(frozen=True)
class FaultSpec:
    """Shunt fault description.

    ``fault_type`` is one of ``K3`` (three phases, ungrounded), ``K2``
    (phase a to phase b), ``K2g`` (two phases to ground), ``K1`` (single
    phase to ground) or ``none``.  Absent branches must be ``OPEN``.
    ``alpha`` is the fractional distance from bus 1 and applies to internal
    placements only; ``t_clearing`` applies to external placements only.
    """

    fault_type: str = "none"
    r_a: float | None = OPEN
    r_b: float | None = OPEN
    r_c: float | None = OPEN
    r_g: float | None = OPEN
    alpha: float | None = None
    placement: str | None = None
    t_inception: float | None = None
    t_clearing: float | None = None
    # While the fault is on, legs marked OPEN are simulated with this
    # large stand-in resistance, the way switchyard fault rigs (and EMT
    # fault blocks) always leave a high-ohmic path on unused legs.  None
    # keeps them ideally open, which disconnects the star point from the
    # unused phases entirely.
    r_leak: float | None = 1e6

    def __post_init__(self):
        if self.fault_type not in FAULT_TYPES:
            raise InvalidParameterError(f"unknown fault type {self.fault_type!r}")
        res = (self.r_a, self.r_b, self.r_c, self.r_g)
        if self.fault_type == "none":
            if any(r is not OPEN for r in res) or self.alpha is not None:
                raise InvalidParameterError("fault 'none' takes no resistances")
            if self.placement is not None or self.t_inception is not None:
                raise InvalidParameterError("fault 'none' takes no placement")
            if self.t_clearing is not None:
                raise InvalidParameterError("fault 'none' takes no clearing time")
            return
        pattern = _BRANCH_PATTERN[self.fault_type]
        names = ("r_a", "r_b", "r_c", "r_g")
        for name, want, have in zip(names, pattern, res):
            if want and not (
                have is not OPEN and math.isfinite(have) and have >= 0
            ):
                raise InvalidParameterError(
                    f"{self.fault_type} fault needs finite {name} >= 0"
                )
            if not want and have is not OPEN:
                raise InvalidParameterError(
                    f"{self.fault_type} fault must leave {name} OPEN"
                )
        if self.placement not in PLACEMENTS:
            raise InvalidParameterError("fault placement must be internal/bus1/bus2")
        if self.placement == "internal":
            if self.alpha is None or not (0.0 <= self.alpha <= 1.0):
                raise InvalidParameterError("internal fault needs alpha in [0, 1]")
            if self.t_clearing is not None:
                raise InvalidParameterError("internal faults are not cleared")
        else:
            if self.alpha is not None:
                raise InvalidParameterError("external fault takes no alpha")
        if self.t_inception is None or not self.t_inception > 0:
            raise InvalidParameterError("fault needs t_inception > 0")
        if self.t_clearing is not None and self.t_clearing <= self.t_inception:
            raise InvalidParameterError("t_clearing must follow t_inception")
        if self.r_leak is not None and not (
            math.isfinite(self.r_leak) and self.r_leak > 0
        ):
            raise InvalidParameterError("r_leak must be positive or None")

    @property
    def resistances(self) -> tuple:
        return (self.r_a, self.r_b, self.r_c, self.r_g)

    @property
    def branch_resistances(self) -> tuple:
        """Resistances as simulated: OPEN legs become r_leak (or stay absent)."""
        if self.r_leak is None:
            return self.resistances
        return tuple(self.r_leak if r is OPEN else r for r in self.resistances)


NO_FAULT = FaultSpec()


@dataclass(frozen=True)
class GridScenario:
    """Complete description of one simulation case."""

    line: SequenceLineParameters
    source1: SourceParameters
    source2: SourceParameters
    fault: FaultSpec = NO_FAULT
    u_g_kv: float = 36.0
    freq_hz: float = 50.0
    sim_duration_s: float = 0.02
    sample_rate_hz: float = 100_000.0
    noise_snr_db: float | None = None
    packet_loss_prob: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not (self.u_g_kv > 0 and self.freq_hz > 0):
            raise InvalidParameterError("u_g and frequency must be positive")
        if not self.sim_duration_s > 0:
            raise InvalidParameterError("sim duration must be positive")
        if not self.sample_rate_hz >= 2.0 * self.freq_hz:
            raise InvalidParameterError("sample rate must be >= 2x grid frequency")
        if self.noise_snr_db is not None and not math.isfinite(self.noise_snr_db):
            raise InvalidParameterError("noise SNR must be finite or absent")
        if self.packet_loss_prob is not None and not (
            0.0 <= self.packet_loss_prob < 1.0
        ):
            raise InvalidParameterError("packet loss probability must be in [0, 1)")

    @property
    def phase_peak_v(self) -> float:
        """Nominal phase voltage peak in volts."""
        return math.sqrt(2.0 / 3.0) * self.u_g_kv * 1e3

    def with_fault(self, fault: FaultSpec) -> "GridScenario":
        return replace(self, fault=fault)


# Component value ranges used by random_scenario; a range is (low, high).
DEFAULT_RANGES: dict[str, tuple[float, float]] = {
    "r1_ohm_per_km": (0.2, 0.42),
    "l1_h_per_km": (1.3e-3, 1.4e-3),
    "length_km": (10.0, 80.0),
    "source_r_ohm": (1.4, 19.4),
    "source_l_h": (0.046, 0.250),
    "emf_pu": (0.9, 1.1),
    "angle_deg": (-30.0, 30.0),
}

LINE_K_SEQ_DEFAULT = 3.0
SOURCE_K_SEQ_DEFAULT = 1.5


def random_scenario(
    ranges: dict | None = None,
    seed: int = 0,
    *,
    u_g_kv: float = 36.0,
    freq_hz: float = 50.0,
    sim_duration_s: float = 0.02,
    sample_rate_hz: float = 100_000.0,
    k_seq_line: float = LINE_K_SEQ_DEFAULT,
    k_seq_source: float = SOURCE_K_SEQ_DEFAULT,
) -> GridScenario:
    """Draw a healthy scenario with uniform component values.

    Every value is drawn independently and uniformly from its range in
    ``ranges`` (defaults to ``DEFAULT_RANGES``).  The angle range is read
    as the angle difference between the sources; source 1 stays at zero.
    The draw order is fixed so one seed always yields one scenario.
    """
    rng = np.random.default_rng(seed)
    rr = dict(DEFAULT_RANGES)
    if ranges:
        unknown = set(ranges) - set(rr)
        if unknown:
            raise InvalidParameterError(f"unknown range keys {sorted(unknown)}")
        rr.update(ranges)

    def draw(key):
        lo, hi = rr[key]
        if not lo <= hi:
            raise InvalidParameterError(f"range {key} is inverted")
        return float(rng.uniform(lo, hi))

    line = SequenceLineParameters(
        r1_ohm_per_km=draw("r1_ohm_per_km"),
        l1_h_per_km=draw("l1_h_per_km"),
        k_seq=k_seq_line,
        length_km=draw("length_km"),
    )
    src = []
    for _ in range(2):
        src.append(
            dict(
                r_ohm=draw("source_r_ohm"),
                l_h=draw("source_l_h"),
                emf_pu=draw("emf_pu"),
                k_seq=k_seq_source,
            )
        )
    theta = draw("angle_deg")
    source1 = SourceParameters(angle_deg=0.0, **src[0])
    source2 = SourceParameters(angle_deg=theta, **src[1])
    return GridScenario(
        line=line,
        source1=source1,
        source2=source2,
        u_g_kv=u_g_kv,
        freq_hz=freq_hz,
        sim_duration_s=sim_duration_s,
        sample_rate_hz=sample_rate_hz,
        seed=seed,
    )


def fixed_line() -> SequenceLineParameters:
    """The fixed 40 km line used by the desk studies."""
    return SequenceLineParameters(
        r1_ohm_per_km=0.2, l1_h_per_km=1.3e-3, k_seq=3.0, length_km=40.0
    )


def fixed_source(angle_deg: float = 0.0, emf_pu: float = 1.0) -> SourceParameters:
    """The fixed source used by the desk studies."""
    return SourceParameters(
        emf_pu=emf_pu, angle_deg=angle_deg, r_ohm=1.4, l_h=0.046, k_seq=1.5
    )


# ---------------------------------------------------------------------------
# Config-file serialization (INI style: sections of key = value pairs).


def _fmt_res(r) -> str:
    return "open" if r is OPEN else repr(float(r))


def _parse_res(text: str):
    text = text.strip().lower()
    if text in ("open", "inf", ""):
        return OPEN
    return float(text)


def scenario_to_cfg(scn: GridScenario, path) -> None:
    """Write a scenario to a config file readable by ``scenario_from_cfg``."""
    cp = configparser.ConfigParser()
    cp["grid"] = {
        "u_g_kv": repr(scn.u_g_kv),
        "freq_hz": repr(scn.freq_hz),
        "sim_duration_s": repr(scn.sim_duration_s),
        "sample_rate_hz": repr(scn.sample_rate_hz),
        "seed": str(scn.seed),
    }
    if scn.noise_snr_db is not None:
        cp["grid"]["noise_snr_db"] = repr(scn.noise_snr_db)
    if scn.packet_loss_prob is not None:
        cp["grid"]["packet_loss_prob"] = repr(scn.packet_loss_prob)
    cp["line"] = {
        "r1_ohm_per_km": repr(scn.line.r1_ohm_per_km),
        "l1_h_per_km": repr(scn.line.l1_h_per_km),
        "k_seq": repr(scn.line.k_seq),
        "length_km": repr(scn.line.length_km),
    }
    for name, src in (("source1", scn.source1), ("source2", scn.source2)):
        cp[name] = {
            "emf_pu": repr(src.emf_pu),
            "angle_deg": repr(src.angle_deg),
            "r_ohm": repr(src.r_ohm),
            "l_h": repr(src.l_h),
            "k_seq": repr(src.k_seq),
        }
    f = scn.fault
    sec = {"type": f.fault_type}
    if f.fault_type != "none":
        sec.update(
            {
                "placement": f.placement,
                "r_a_ohm": _fmt_res(f.r_a),
                "r_b_ohm": _fmt_res(f.r_b),
                "r_c_ohm": _fmt_res(f.r_c),
                "r_g_ohm": _fmt_res(f.r_g),
                "t_inception_s": repr(f.t_inception),
            }
        )
        if f.alpha is not None:
            sec["alpha"] = repr(f.alpha)
        if f.t_clearing is not None:
            sec["t_clearing_s"] = repr(f.t_clearing)
        sec["r_leak_ohm"] = _fmt_res(f.r_leak)
    cp["fault"] = sec
    with open(path, "w") as fh:
        cp.write(fh)


def line_from_cfg(path) -> SequenceLineParameters:
    """Read just the ``[line]`` section of a config file."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise InvalidParameterError(f"cannot read config {path}")
    if "line" not in cp:
        raise InvalidParameterError(f"{path} has no [line] section")
    sec = cp["line"]
    return SequenceLineParameters(
        r1_ohm_per_km=sec.getfloat("r1_ohm_per_km"),
        l1_h_per_km=sec.getfloat("l1_h_per_km"),
        k_seq=sec.getfloat("k_seq", LINE_K_SEQ_DEFAULT),
        length_km=sec.getfloat("length_km"),
    )


def scenario_from_cfg(path) -> GridScenario:
    """Read a full scenario config file."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise InvalidParameterError(f"cannot read config {path}")
    for sec in ("grid", "line", "source1", "source2"):
        if sec not in cp:
            raise InvalidParameterError(f"{path} misses section [{sec}]")
    g = cp["grid"]
    line = line_from_cfg(path)
    sources = []
    for name in ("source1", "source2"):
        sec = cp[name]
        sources.append(
            SourceParameters(
                emf_pu=sec.getfloat("emf_pu", 1.0),
                angle_deg=sec.getfloat("angle_deg", 0.0),
                r_ohm=sec.getfloat("r_ohm"),
                l_h=sec.getfloat("l_h"),
                k_seq=sec.getfloat("k_seq", SOURCE_K_SEQ_DEFAULT),
            )
        )
    fault = NO_FAULT
    if "fault" in cp:
        sec = cp["fault"]
        ftype = sec.get("type", "none").strip()
        if ftype != "none":
            fault = FaultSpec(
                fault_type=ftype,
                r_a=_parse_res(sec.get("r_a_ohm", "open")),
                r_b=_parse_res(sec.get("r_b_ohm", "open")),
                r_c=_parse_res(sec.get("r_c_ohm", "open")),
                r_g=_parse_res(sec.get("r_g_ohm", "open")),
                alpha=sec.getfloat("alpha", fallback=None),
                placement=sec.get("placement", "internal"),
                t_inception=sec.getfloat("t_inception_s"),
                t_clearing=sec.getfloat("t_clearing_s", fallback=None),
                r_leak=_parse_res(sec.get("r_leak_ohm", "1e6")),
            )
    noise = g.getfloat("noise_snr_db", fallback=None)
    loss = g.getfloat("packet_loss_prob", fallback=None)
    return GridScenario(
        line=line,
        source1=sources[0],
        source2=sources[1],
        fault=fault,
        u_g_kv=g.getfloat("u_g_kv", 36.0),
        freq_hz=g.getfloat("freq_hz", 50.0),
        sim_duration_s=g.getfloat("sim_duration_s"),
        sample_rate_hz=g.getfloat("sample_rate_hz", 100_000.0),
        noise_snr_db=noise,
        packet_loss_prob=loss,
        seed=g.getint("seed", 0),
    )
