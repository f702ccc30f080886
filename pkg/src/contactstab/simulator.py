"""Event-driven hybrid simulation under the zero-order dynamics.

Within any contact mode the accelerations are constants, so every trajectory
is piecewise quadratic and all events (touchdowns, slip stops, divergence
threshold crossings) have closed-form times; no numerical root bracketing is
needed. Decaying infinite impact sequences are detected by geometric fits of
the inter-impact intervals and impact speeds, and projected to their
accumulation point, after which integration continues from the limit state.

Numerical hygiene: contact coordinates of maintained contacts are held at
exactly zero, and velocity components below a scale-relative snap tolerance
are zeroed after every event. Both are required to keep qualitative-state
classification noise-free across the ~machine-epsilon residue of the impact
and mode solves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import consistency as cons
from .impact import resolve_impact_arrays
from .model import (Configuration, ContactState, ZodTableau, build_tableau,
                    delta_metric, pseudo_metric_D, pseudo_metric_d)

EQUILIBRIUM = "Equilibrium"
ZENO_TRUNCATED = "ZenoTruncated"
DIVERGED = "Diverged"
TIMEOUT = "TimeOut"
SECTION_CROSSING = "SectionCrossing"  # internal: used by return-map evaluation


class PainleveEncountered(RuntimeError):
    """Zero or several consistent contact modes mid-trajectory."""


class EventStall(RuntimeError):
    """Events keep accumulating without progress and without a detectable limit."""


@dataclass(frozen=True)
class SimOptions:
    """Tolerances and budgets. All velocity-like thresholds are relative to
    the initial perturbation magnitude, so trajectories scale exactly."""

    max_events: int = 10_000
    max_time: float = math.inf
    divergence_factor: float = 1e3   # stop when Delta exceeds this times initial
    n_zeno: int = 8                  # inter-impact intervals in the geometric fit
    v_zeno_rel: float = 1e-7         # projected next impact speed triggering Zeno
    zeno_ratio_max: float = 0.97     # fitted decay ratio must stay below this
    project_zeno: bool = True
    snap_rel: float = 1e-12          # velocities below this (relative) snap to zero
    t_min_rel: float = 1e-12         # events closer than this count as a stall
    stall_limit: int = 64


@dataclass(frozen=True)
class Event:
    time: float
    kind: str                        # Impact | ModeSwitch | ZenoPoint | Stop
    data: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Segment:
    """One constant-acceleration piece: q(t) = q0 + v0*(t-t0) + a/2*(t-t0)^2."""

    mode: str
    t_start: float
    t_end: float
    q0: tuple[float, float, float]
    v0: tuple[float, float, float]
    acc: tuple[float, float, float]

    def state_at(self, t: float) -> ContactState:
        dt = t - self.t_start
        q = [self.q0[k] + self.v0[k] * dt + 0.5 * self.acc[k] * dt * dt
             for k in range(3)]
        v = [self.v0[k] + self.acc[k] * dt for k in range(3)]
        return ContactState(z1=max(q[0], 0.0), z2=max(q[1], 0.0), x2=q[2],
                            dz1=v[0], dz2=v[1], dx2=v[2], t=t)


@dataclass(frozen=True)
class Trajectory:
    segments: list[Segment]
    events: list[Event]
    terminal: str
    final_state: ContactState
    slip_double_signs: frozenset[int] = frozenset()

    @property
    def t_final(self) -> float:
        return self.final_state.t

    def impact_events(self) -> list[Event]:
        return [e for e in self.events if e.kind == "Impact"]

    def mode_words(self) -> list[str]:
        return [s.mode for s in self.segments]


@dataclass(frozen=True)
class ZenoPoint:
    time: float            # accumulation time
    ratio_interval: float  # fitted geometric ratio of inter-impact intervals
    ratio_speed: float     # fitted geometric ratio of impact speeds


@dataclass(frozen=True)
class FtlsMetrics:
    delta_max: float
    t_final: float
    terminal: str
    D_series: list[tuple[float, float]]
    d_series: list[tuple[float, float]]


@dataclass(frozen=True)
class RunResult:
    segments: list[Segment]
    events: list[Event]
    terminal: str
    final_state: ContactState
    slip_double_signs: frozenset[int]
    crossing: tuple | None           # (time, pre-impact velocities) on the section


def detect_zeno(impacts: list[tuple[float, float]], n_zeno: int = 8,
                v_floor: float = 0.0, ratio_max: float = 0.97
                ) -> ZenoPoint | None:
    """Detect a geometrically decaying impact accumulation.

    ``impacts``: recent (time, approach speed) pairs, oldest first; the last
    ``n_zeno`` inter-impact intervals are examined. Alternating-contact
    sequences make interval lengths zigzag around the geometric trend, so
    monotone decay is required per parity (lag 2) while the common ratio comes
    from a least-squares fit of the logarithms. Fires once the predicted next
    impact speed falls below ``v_floor``; the accumulation time is the
    geometric tail sum beyond the last impact.
    """
    if len(impacts) < n_zeno + 1:
        return None
    window = impacts[-(n_zeno + 1):]
    times = [t for t, _ in window]
    speeds = [s for _, s in window]
    taus = [t1 - t0 for t0, t1 in zip(times, times[1:])]
    if any(tau <= 0.0 for tau in taus) or any(s <= 0.0 for s in speeds):
        return None
    if any(b >= a for a, b in zip(taus, taus[2:])):
        return None
    if any(b >= a for a, b in zip(speeds, speeds[2:])):
        return None

    def fit_ratio(values):
        n = len(values)
        xm = (n - 1) / 2.0
        logs = [math.log(x) for x in values]
        ym = sum(logs) / n
        num = sum((i - xm) * (y - ym) for i, y in enumerate(logs))
        den = sum((i - xm) ** 2 for i in range(n))
        return math.exp(num / den)

    r_tau = fit_ratio(taus)
    r_v = fit_ratio(speeds)
    if not (0.0 < r_tau < ratio_max and 0.0 < r_v < ratio_max):
        return None
    if speeds[-1] * r_v >= v_floor:
        return None
    t_acc = times[-1] + taus[-1] * r_tau / (1.0 - r_tau)
    return ZenoPoint(time=t_acc, ratio_interval=r_tau, ratio_speed=r_v)


class HybridEngine:
    """Reusable simulation engine for one configuration.

    Caches the per-qualitative-state consistency results (state-independent
    under the zero-order dynamics), so repeated runs -- e.g. the thousands of
    return-map samples -- only pay for event arithmetic.
    """

    def __init__(self, cfg: Configuration, tab: ZodTableau | None = None):
        self.cfg = cfg
        self.tab = tab if tab is not None else build_tableau(cfg)
        self.w = tuple(float(x) for x in self.tab.w)
        self.acc_scale = max(max(abs(float(x)) for x in self.tab.b_ex), 1e-30)
        self._mode_cache: dict[cons.QualitativeState, list] = {}

    def consistent(self, qs: cons.QualitativeState):
        try:
            return self._mode_cache[qs]
        except KeyError:
            sols = cons.consistent_modes(self.tab, self.cfg, qs)
            self._mode_cache[qs] = [(s, self._clean_acc(s)) for s in sols]
            return self._mode_cache[qs]

    def _clean_acc(self, sol):
        """Segment acceleration with constrained components exactly zero.

        Maintained contacts have zero normal acceleration by construction and
        stick letters zero tangential acceleration; the linear solves leave
        O(eps) residue there which would otherwise leak into event times.
        """
        a = list(sol.qdd)
        tiny = 1e-9 * self.acc_scale
        for i in (0, 1):
            if sol.mode[i] != "F" and abs(a[i]) <= tiny:
                a[i] = 0.0
        if sol.mode[1] == "S" and abs(a[2]) <= tiny:
            a[2] = 0.0
        if sol.mode[0] == "S" and sol.mode[1] != "F":
            # both tangential accelerations constrained through the coupling
            if abs(a[2]) <= tiny:
                a[2] = 0.0
        return tuple(a)

    def run(self, initial: ContactState, opts: SimOptions = SimOptions(), *,
            stop_on_section: bool = False) -> RunResult:
        return _Run(self, initial, opts, stop_on_section).go()


class _Run:
    def __init__(self, engine: HybridEngine, initial: ContactState,
                 opts: SimOptions, stop_on_section: bool):
        self.engine = engine
        self.initial = initial
        self.opts = opts
        self.stop_on_section = stop_on_section

    def go(self) -> RunResult:
        eng, opts = self.engine, self.opts
        tab = eng.tab
        st = self.initial
        self.segments: list[Segment] = []
        self.events: list[Event] = []
        slip_signs: set[int] = set()

        scale0 = delta_metric(st)
        if scale0 == 0.0:
            rest = eng.consistent(cons.REST_STATE)
            if any(s.mode == "SS" for s, _ in rest):
                self.events.append(Event(st.t, "Stop", {"reason": "equilibrium"}))
                return RunResult(self.segments, self.events, EQUILIBRIUM, st,
                                 frozenset(), None)
            scale0 = 1.0  # not an equilibrium: motion develops from rest

        snap = opts.snap_rel * scale0
        v_zeno = opts.v_zeno_rel * scale0
        delta_stop = opts.divergence_factor * scale0
        t_min = opts.t_min_rel * scale0 / eng.acc_scale

        z = [max(st.z1, 0.0), max(st.z2, 0.0)]
        x2 = st.x2
        v = [0.0 if abs(u) <= snap else u for u in (st.dz1, st.dz2, st.dx2)]
        t = st.t

        impact_log: list[tuple[float, float]] = []
        dx2_log: list[float] = []
        stall = 0

        def state() -> ContactState:
            return ContactState(z1=z[0], z2=z[1], x2=x2,
                                dz1=v[0], dz2=v[1], dx2=v[2], t=t)

        def finish(terminal, reason):
            self.events.append(Event(t, "Stop", {"reason": reason}))
            return RunResult(self.segments, self.events, terminal, state(),
                             frozenset(slip_signs), None)

        for _ in range(opts.max_events):
            # ---- impacts take priority over continuous motion
            approaching = [i for i in (0, 1) if z[i] == 0.0 and v[i] < -snap]
            if approaching:
                if (self.stop_on_section and t > self.initial.t
                        and 1 in approaching and z[0] == 0.0 and v[0] == 0.0):
                    return RunResult(self.segments, self.events, SECTION_CROSSING,
                                     state(), frozenset(slip_signs),
                                     (t, tuple(v)))
                speed = max(-v[i] for i in approaching)
                pre_v = tuple(v)
                out = resolve_impact_arrays(tab, z, v)
                v = [0.0 if abs(u) <= snap else u for u in out.post]
                self.events.append(Event(t, "Impact", {
                    "contacts": tuple(i + 1 for i in approaching),
                    "active_set": out.active_set, "regimes": out.regimes,
                    "pre": pre_v, "post": tuple(v), "impulses": out.impulses}))
                if out.slipping_double:
                    slip_signs.add(out.slip_sign)
                impact_log.append((t, speed))
                dx2_log.append(v[2])
                zeno = detect_zeno(impact_log, opts.n_zeno, v_zeno,
                                   opts.zeno_ratio_max)
                if zeno is not None:
                    if not opts.project_zeno:
                        return finish(ZENO_TRUNCATED, "zeno accumulation detected")
                    t, x2, v = _project_zeno(zeno, dx2_log, t, x2, v, snap)
                    z = [0.0, 0.0]
                    self.events.append(Event(t, "ZenoPoint", {
                        "ratio_interval": zeno.ratio_interval,
                        "ratio_speed": zeno.ratio_speed, "dx2": v[2]}))
                    impact_log.clear()
                    dx2_log.clear()
                continue

            # ---- divergence guard
            if delta_metric(state()) >= delta_stop:
                return finish(DIVERGED, "perturbation metric exceeded threshold")

            # ---- classify state, pick the unique consistent mode
            qs = self._qualitative(z, v, snap)
            sols = eng.consistent(qs)
            if qs == cons.REST_STATE:
                if any(s.mode == "SS" for s, _ in sols):
                    return finish(EQUILIBRIUM, "SS consistent at rest")
            if len(sols) != 1:
                raise PainleveEncountered(
                    f"{len(sols)} consistent modes at {qs} "
                    f"(t={t:.6g}, modes={[s.mode for s, _ in sols]})")
            sol, acc = sols[0]
            mode = sol.mode

            # ---- earliest event on this segment
            dt, what = self._next_event(mode, z, x2, v, acc, delta_stop, snap)
            if dt is None:
                return finish(TIMEOUT, f"no further events in mode {mode}")
            if t + dt > opts.max_time:
                dt, what = opts.max_time - t, ("timeout",)
            if dt < t_min:
                stall += 1
                if stall > opts.stall_limit:
                    raise EventStall(f"{stall} consecutive events below t_min "
                                     f"at t={t:.6g} in mode {mode}")
            else:
                stall = 0

            q0 = (z[0], z[1], x2)
            v0 = tuple(v)
            self.segments.append(Segment(mode=mode, t_start=t, t_end=t + dt,
                                         q0=q0, v0=v0, acc=acc))
            z = [q0[i] + v0[i] * dt + 0.5 * acc[i] * dt * dt for i in (0, 1)]
            x2 = q0[2] + v0[2] * dt + 0.5 * acc[2] * dt * dt
            v = [v0[k] + acc[k] * dt for k in range(3)]
            t += dt
            for i in (0, 1):
                if mode[i] != "F":   # maintained contacts stay exactly on ground
                    z[i] = 0.0
                    v[i] = 0.0
                elif z[i] < 0.0:     # roundoff below the surface: it just touched
                    z[i] = 0.0
            v = [0.0 if abs(u) <= snap else u for u in v]

            kind = what[0]
            if kind == "touchdown":
                z[what[1]] = 0.0
            elif kind == "slipstop":
                if mode[1] in "PN":
                    v[2] = 0.0   # the event defines the stop exactly
                self.events.append(Event(t, "ModeSwitch",
                                         {"from": mode, "trigger": "slip stop"}))
            elif kind == "diverged":
                return finish(DIVERGED, "perturbation metric exceeded threshold")
            elif kind == "timeout":
                return finish(TIMEOUT, "max_time reached")
        return finish(TIMEOUT, "event budget exhausted")

    # -- helpers -----------------------------------------------------------

    def _qualitative(self, z, v, snap) -> cons.QualitativeState:
        w = self.engine.w
        touch = []
        for i in (0, 1):
            if z[i] > 0.0 or v[i] > snap:
                touch.append(cons.SEPARATED)
            elif v[i] < -snap:
                touch.append(cons.APPROACHING)
            else:
                touch.append(cons.RESTING)
        if touch[1] is cons.RESTING:
            slip_v = v[2]
        elif touch[0] is cons.RESTING:
            slip_v = w[0] * v[0] + w[1] * v[1] + w[2] * v[2]
        else:
            slip_v = 0.0
        slip = 0 if abs(slip_v) <= snap else (1 if slip_v > 0.0 else -1)
        return cons.QualitativeState(touch[0], touch[1], slip)

    def _next_event(self, mode, z, x2, v, acc, delta_stop, snap):
        """Earliest of: touchdown of a free contact, slip stop, divergence."""
        w = self.engine.w
        best = (math.inf, None)
        for i in (0, 1):
            if mode[i] != "F":
                continue
            tt = first_touchdown(z[i], v[i], acc[i])
            if tt is not None and tt < best[0]:
                best = (tt, ("touchdown", i))
        if mode[1] in "PN":
            xd, xdd = v[2], acc[2]
        elif mode[0] in "PN":
            xd = w[0] * v[0] + w[1] * v[1] + w[2] * v[2]
            xdd = w[0] * acc[0] + w[1] * acc[1] + w[2] * acc[2]
        else:
            xd = xdd = 0.0
        # slip velocities inside the snap band count as already stopped
        # (the mode was chosen for slip developing from rest)
        if abs(xd) > snap and xd * xdd < 0.0:
            tt = -xd / xdd
            if tt < best[0]:
                best = (tt, ("slipstop",))
        tdiv = self._divergence_time(z, x2, v, acc, delta_stop)
        if tdiv is not None and tdiv < best[0]:
            best = (tdiv, ("diverged",))
        if best[1] is None:
            return None, None
        return best

    def _divergence_time(self, z, x2, v, acc, delta_stop):
        ts = []
        for u0, du, ddu in ((z[0], v[0], acc[0]), (z[1], v[1], acc[1]),
                            (x2, v[2], acc[2])):
            ts.append(_first_abs_crossing_quadratic(u0, du, ddu, delta_stop ** 2))
        for du, ddu in zip(v, acc):
            ts.append(_first_abs_crossing_linear(du, ddu, delta_stop))
        ts = [x for x in ts if x is not None and x > 0.0]
        return min(ts) if ts else None


def _project_zeno(zeno: ZenoPoint, dx2_log, t, x2, v, snap):
    """Advance to the accumulation point of a decaying impact sequence.

    The tangential velocity converges geometrically alongside the impact
    speeds; its remaining per-cycle increments (lag 2, same contact parity)
    are summed as a geometric tail.
    """
    r = zeno.ratio_speed
    dx2_inf = v[2]
    if len(dx2_log) >= 3:
        inc = dx2_log[-1] - dx2_log[-3]
        r2 = r * r
        dx2_inf = v[2] + inc * r2 / (1.0 - r2)
    dt = zeno.time - t
    x2_inf = x2 + 0.5 * (v[2] + dx2_inf) * dt
    if abs(dx2_inf) <= snap:
        dx2_inf = 0.0
    return zeno.time, x2_inf, [0.0, 0.0, dx2_inf]


def first_touchdown(z0: float, v0: float, a: float) -> float | None:
    """Earliest t > 0 where z(t) = z0 + v0*t + a/2*t^2 reaches zero descending.

    Uses the cancellation-free root form on each branch; exactness here is
    what makes trajectories scale-invariant to near machine precision.
    """
    if z0 <= 0.0:
        if v0 > 0.0 and a < 0.0:
            return -2.0 * v0 / a           # thrown up, falls back
        return None                        # resting, lifting off, or already due
    if a == 0.0:
        return -z0 / v0 if v0 < 0.0 else None
    disc = v0 * v0 - 2.0 * a * z0
    if a < 0.0:
        s = math.sqrt(disc)
        if v0 >= 0.0:
            return (v0 + s) / (-a)
        return 2.0 * z0 / (s - v0)
    if disc < 0.0 or v0 >= 0.0:
        return None
    s = math.sqrt(disc)
    return 2.0 * z0 / (-v0 + s)


def _first_abs_crossing_linear(u0, du, bound):
    if du == 0.0:
        return None
    return ((bound if du > 0.0 else -bound) - u0) / du


def _first_abs_crossing_quadratic(u0, du, ddu, bound):
    roots = []
    for target in (bound, -bound):
        c = u0 - target
        if ddu == 0.0:
            if du != 0.0:
                roots.append(-c / du)
            continue
        disc = du * du - 2.0 * ddu * c
        if disc < 0.0:
            continue
        s = math.sqrt(disc)
        roots.append((-du - s) / ddu)
        roots.append((-du + s) / ddu)
    pos = [r for r in roots if r > 0.0]
    return min(pos) if pos else None


def simulate(cfg: Configuration, initial: ContactState,
             opts: SimOptions = SimOptions()) -> Trajectory:
    """Run the hybrid dynamics from ``initial`` until equilibrium, divergence
    or budget exhaustion; see :class:`SimOptions` for the knobs."""
    engine = HybridEngine(cfg)
    res = engine.run(initial, opts)
    return Trajectory(segments=res.segments, events=res.events,
                      terminal=res.terminal, final_state=res.final_state,
                      slip_double_signs=res.slip_double_signs)


def _segment_max_abs(seg: Segment, k: int) -> float:
    T = seg.t_end - seg.t_start
    u0, du, a = seg.q0[k], seg.v0[k], seg.acc[k]
    cands = [abs(u0), abs(u0 + du * T + 0.5 * a * T * T)]
    if a != 0.0:
        ts = -du / a
        if 0.0 < ts < T:
            cands.append(abs(u0 + du * ts + 0.5 * a * ts * ts))
    return max(cands)


def _segment_max_speed(seg: Segment, k: int) -> float:
    T = seg.t_end - seg.t_start
    return max(abs(seg.v0[k]), abs(seg.v0[k] + seg.acc[k] * T))


def metrics(traj: Trajectory) -> FtlsMetrics:
    """Exact trajectory metrics from the per-segment quadratics (not sampled)."""
    delta_max = delta_metric(traj.final_state)
    for seg in traj.segments:
        delta_max = max(delta_max,
                        math.sqrt(_segment_max_abs(seg, 0)),
                        math.sqrt(_segment_max_abs(seg, 1)),
                        math.sqrt(_segment_max_abs(seg, 2)),
                        _segment_max_speed(seg, 0),
                        _segment_max_speed(seg, 1),
                        _segment_max_speed(seg, 2))
    D_series, d_series = [], []
    for seg in traj.segments:
        s = seg.state_at(seg.t_start)
        D_series.append((seg.t_start, pseudo_metric_D(s)))
        d_series.append((seg.t_start, pseudo_metric_d(s)))
    final = traj.final_state
    D_series.append((final.t, pseudo_metric_D(final)))
    d_series.append((final.t, pseudo_metric_d(final)))
    return FtlsMetrics(delta_max=delta_max, t_final=final.t,
                       terminal=traj.terminal,
                       D_series=D_series, d_series=d_series)


def trajectory_rows(traj: Trajectory, sample_period: float | None = None):
    """Rows (t, z1, z2, x2, dz1, dz2, dx2, mode, event) for CSV export."""
    rows = []
    ev_by_time: dict[float, list[str]] = {}
    for ev in traj.events:
        ev_by_time.setdefault(ev.time, []).append(ev.kind)
    for seg in traj.segments:
        marks = [seg.t_start]
        if sample_period:
            k = 1
            while seg.t_start + k * sample_period < seg.t_end:
                marks.append(seg.t_start + k * sample_period)
                k += 1
        for tm in marks:
            s = seg.state_at(tm)
            tags = ";".join(ev_by_time.pop(tm, [])) if tm == seg.t_start else ""
            rows.append((tm, s.z1, s.z2, s.x2, s.dz1, s.dz2, s.dx2,
                         seg.mode, tags))
    f = traj.final_state
    tags = ";".join(tag for evs in ev_by_time.values() for tag in evs)
    rows.append((f.t, f.z1, f.z2, f.x2, f.dz1, f.dz2, f.dx2, "", tags))
    return rows


def write_trajectory_csv(traj: Trajectory, path, sample_period=None):
    import csv
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "z1", "z2", "x2", "dz1", "dz2", "dx2", "mode", "event"])
        for row in trajectory_rows(traj, sample_period):
            wr.writerow(row)
