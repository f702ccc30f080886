"""Independent full-nonlinear time-stepping reference (validation only).

Integrates the complete rigid-body dynamics in CoM coordinates (x, z, theta)
with an impulse-level complementarity contact solve per step, in the style of
Moreau-Jean: positions advance a half step, contacts whose gap is closed at
the midpoint enter the velocity-level solve together with the external
impulse, and positions finish with the post-step velocities. Nothing here
shares code with the event-driven engine: contact kinematics are evaluated
exactly at the current rotation, so this serves as an independent check of
the reference-state approximation at small perturbation scales.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .model import Configuration, ContactState


@dataclass(frozen=True)
class OracleState:
    """CoM displacement from the reference pose (incline-aligned axes) and rates."""

    x: float = 0.0
    z: float = 0.0
    theta: float = 0.0
    vx: float = 0.0
    vz: float = 0.0
    omega: float = 0.0
    t: float = 0.0


class SolverFailure(RuntimeError):
    pass


class _Geometry:
    def __init__(self, cfg: Configuration):
        self.cfg = cfg
        self.b = [np.array([cfg.l1, -cfg.h]), np.array([cfg.l2, -cfg.h])]
        self.n = [np.array([-math.sin(p), math.cos(p)]) for p in (cfg.phi1, cfg.phi2)]
        self.tang = [np.array([math.cos(p), math.sin(p)]) for p in (cfg.phi1, cfg.phi2)]
        self.mass = np.array([cfg.m, cfg.m, cfg.m * cfg.rho ** 2])
        self.F = np.array([cfg.f_ex * math.sin(cfg.alpha),
                           -cfg.f_ex * math.cos(cfg.alpha),
                           cfg.tau_ex])
        self.acc_free = tuple(float(x) for x in self.F / self.mass)
        self.mu = (cfg.mu1, cfg.mu2)

    def rot(self, theta):
        c, s = math.cos(theta), math.sin(theta)
        return np.array([[c, -s], [s, c]])

    def point_disp(self, q, i):
        """World displacement of contact material point i from its reference spot."""
        c, s = math.cos(q[2]), math.sin(q[2])
        bx, bz = self.b[i]
        return np.array([q[0] + c * bx - s * bz - bx,
                         q[1] + s * bx + c * bz - bz])

    def gap(self, q, i):
        return self.gap_scalar(q[0], q[1], math.cos(q[2]), math.sin(q[2]), i)

    def gap_scalar(self, x, z, c, s, i):
        bx, bz = self.b[i]
        dx = x + c * bx - s * bz - bx
        dz = z + s * bx + c * bz - bz
        return self.n[i][0] * dx + self.n[i][1] * dz

    def tangential(self, q, i):
        d = self.point_disp(q, i)
        return float(self.tang[i][0] * d[0] + self.tang[i][1] * d[1])

    def jacobian_rows(self, q, i):
        """Rows mapping (vx, vz, omega) to the contact point's (normal, tangent) speed."""
        rb = self.rot(q[2]) @ self.b[i]
        perp = np.array([-rb[1], rb[0]])
        jn = np.array([self.n[i][0], self.n[i][1], float(self.n[i] @ perp)])
        jt = np.array([self.tang[i][0], self.tang[i][1], float(self.tang[i] @ perp)])
        return jn, jt

    def contact_rates(self, st: OracleState):
        """(dz1, dz2, dx2, dx1) at the exact current rotation, scalar path."""
        c, s = math.cos(st.theta), math.sin(st.theta)
        out = []
        for i in (0, 1):
            bx, bz = self.b[i]
            rx, rz = c * bx - s * bz, s * bx + c * bz
            vpx = st.vx - st.omega * rz
            vpz = st.vz + st.omega * rx
            out.append((self.n[i][0] * vpx + self.n[i][1] * vpz,
                        self.tang[i][0] * vpx + self.tang[i][1] * vpz))
        (dz1, dx1), (dz2, dx2) = out
        return dz1, dz2, dx2, dx1

    def contact_view(self, st: OracleState) -> ContactState:
        q = np.array([st.x, st.z, st.theta])
        dz1, dz2, dx2, _ = self.contact_rates(st)
        return ContactState(z1=max(self.gap(q, 0), 0.0),
                            z2=max(self.gap(q, 1), 0.0),
                            x2=self.tangential(q, 1),
                            dz1=dz1, dz2=dz2, dx2=dx2, t=st.t)


def _candidate_order(active):
    sets = []
    for size in range(len(active), -1, -1):
        for combo in _subsets(active, size):
            sets.append(combo)
    cands = []
    for act in sets:
        for regs in product("SPN", repeat=len(act)):
            cands.append((act, regs))
    cands.sort(key=lambda c: (-len(c[0]), c[0],
                              sum(1 for r in c[1] if r != "S"),
                              tuple("SPN".index(r) for r in c[1])))
    return cands


def _subsets(items, size):
    items = tuple(items)
    if size == 0:
        yield ()
        return
    for k, head in enumerate(items):
        for rest in _subsets(items[k + 1:], size - 1):
            yield (head,) + rest


def _solve_step(geo: _Geometry, q_mid, v_free, active, v_scale):
    """Impulse-complementarity solve for one step; first feasible candidate wins."""
    rows = {i: geo.jacobian_rows(q_mid, i) for i in active}
    Minv = 1.0 / geo.mass
    tol_v = 1e-9 * max(v_scale, 1e-12)
    for act, regs in _candidate_order(active):
        nimp = 2 * len(act)
        if nimp == 0:
            v_post = v_free
            P = {}
        else:
            # unknowns: (Pn_i, Pt_i) for i in act; v_post = v_free + Minv*(J^T P)
            cols = []
            for i in act:
                jn, jt = rows[i]
                cols.append(Minv * jn)
                cols.append(Minv * jt)
            H = np.column_stack(cols)      # v change per unit impulse component
            K = np.zeros((nimp, nimp))
            rhs = np.zeros(nimp)
            r = 0
            for i in act:
                jn, _ = rows[i]
                K[r] = jn @ H
                rhs[r] = -float(jn @ v_free)
                r += 1
            for k, i in enumerate(act):
                jn, jt = rows[i]
                if regs[k] == "S":
                    K[r] = jt @ H
                    rhs[r] = -float(jt @ v_free)
                else:
                    K[r, 2 * k + 1] = 1.0
                    K[r, 2 * k] = geo.mu[i] if regs[k] == "P" else -geo.mu[i]
                r += 1
            sv = np.linalg.svd(K, compute_uv=False)
            if sv[-1] < 1e-10 * sv[0]:
                Pv, *_ = np.linalg.lstsq(K, rhs, rcond=None)
            else:
                Pv = np.linalg.solve(K, rhs)
            v_post = v_free + H @ Pv
            P = {i: (Pv[2 * k], Pv[2 * k + 1]) for k, i in enumerate(act)}
        ok = True
        tol_p = 1e-9 * max(geo.mass[0] * v_scale, 1e-12)
        for k, i in enumerate(act):
            Pn, Pt = P[i]
            if Pn < -tol_p:
                ok = False
            if regs[k] == "S" and geo.mu[i] * Pn - abs(Pt) < -tol_p:
                ok = False
            _, jt = rows[i]
            slide = float(jt @ v_post)
            if regs[k] == "P" and slide < -tol_v:
                ok = False
            if regs[k] == "N" and slide > tol_v:
                ok = False
        for i in active:
            if i not in act:
                jn, _ = rows[i]
                if float(jn @ v_post) < -tol_v:
                    ok = False
        if ok:
            return v_post
    raise SolverFailure(f"no feasible contact impulse at q_mid={q_mid}")


def oracle_step(cfg: Configuration, state: OracleState, dt: float) -> OracleState:
    """One Moreau-Jean step of the full nonlinear dynamics."""
    if dt > 1e-5:
        raise ValueError("oracle step size limited to 1e-5 s")
    geo = _Geometry(cfg)
    return _step(geo, state, dt)


def _step(geo: _Geometry, st: OracleState, dt: float) -> OracleState:
    ax, az, aw = geo.acc_free
    xm = st.x + 0.5 * dt * st.vx
    zm = st.z + 0.5 * dt * st.vz
    thm = st.theta + 0.5 * dt * st.omega
    c, s = math.cos(thm), math.sin(thm)
    active = [i for i in (0, 1) if geo.gap_scalar(xm, zm, c, s, i) <= 0.0]
    if active:
        q_mid = np.array([xm, zm, thm])
        v = np.array([st.vx, st.vz, st.omega])
        v_free = v + dt * np.asarray(geo.acc_free)
        v_scale = max(np.max(np.abs(v)), np.max(np.abs(v_free)))
        v_new = _solve_step(geo, q_mid, v_free, active, v_scale)
        vx, vz, om = float(v_new[0]), float(v_new[1]), float(v_new[2])
    else:
        vx = st.vx + dt * ax
        vz = st.vz + dt * az
        om = st.omega + dt * aw
    return OracleState(x=xm + 0.5 * dt * vx, z=zm + 0.5 * dt * vz,
                       theta=thm + 0.5 * dt * om,
                       vx=vx, vz=vz, omega=om, t=st.t + dt)


def body_state_from_contact(cfg: Configuration, cs: ContactState) -> OracleState:
    """Invert the contact-coordinate chart near the reference pose.

    Positions come from a Newton solve of the three exact gap/tangential
    relations; velocities from the contact Jacobian at the solved pose.
    """
    geo = _Geometry(cfg)
    q = np.zeros(3)
    target = np.array([cs.z1, cs.z2, cs.x2])

    def residual(q):
        return np.array([geo.gap(q, 0), geo.gap(q, 1),
                         geo.tangential(q, 1)]) - target

    def jac(q):
        jn1, _ = geo.jacobian_rows(q, 0)
        jn2, jt2 = geo.jacobian_rows(q, 1)
        return np.vstack([jn1, jn2, jt2])

    for _ in range(50):
        r = residual(q)
        if np.max(np.abs(r)) < 1e-14 * max(1.0, np.max(np.abs(target))):
            break
        q = q - np.linalg.solve(jac(q), r)
    v = np.linalg.solve(jac(q), np.array([cs.dz1, cs.dz2, cs.dx2]))
    return OracleState(x=q[0], z=q[1], theta=q[2],
                       vx=v[0], vz=v[1], omega=v[2], t=cs.t)


@dataclass(frozen=True)
class OracleEvent:
    time: float
    contact: int            # 1 or 2
    speed: float            # normal approach speed just before activation


@dataclass(frozen=True)
class OracleRun:
    states: list[OracleState]
    contact_states: list[ContactState]
    events: list[OracleEvent]
    mode_words: list[str]
    word_intervals: list[tuple[str, float, float]]

    def dominant_word(self, t0: float, t1: float) -> str:
        """Longest-dwelling mode word within [t0, t1]."""
        best, best_len = "", -1.0
        for word, a, b in self.word_intervals:
            overlap = min(b, t1) - max(a, t0)
            if overlap > best_len:
                best, best_len = word, overlap
        return best


def run_oracle(cfg: Configuration, initial: ContactState, duration: float,
               dt: float = 1e-6, v_stick_tol: float | None = None,
               min_dwell: float | None = None) -> OracleRun:
    """Integrate and extract impact events plus the contact-mode word sequence.

    A contact 'activates' when its midpoint gap closes; the normal speed just
    before that step, when resolvable above the integration noise floor, is
    recorded as the impact speed. Mode words are classified per step (F when
    the gap is open, S/P/N by the tangential speed at closed contacts) and
    compressed to their sequence; words shorter than ``min_dwell`` are impact
    transients (the step solver smears instantaneous jumps over a step or two)
    and are dropped.
    """
    geo = _Geometry(cfg)
    st = body_state_from_contact(cfg, initial)
    n_steps = int(round(duration / dt))
    record_every = max(1, n_steps // 20_000)
    speed_scale = max(abs(initial.dz1), abs(initial.dz2), abs(initial.dx2),
                      math.sqrt(max(initial.z1, initial.z2, 0.0)
                                * max(abs(geo.F[1]) / geo.mass[0], 1e-12)))
    if v_stick_tol is None:
        v_stick_tol = 2e-2 * max(speed_scale, 1e-12)
    acc_scale = max(np.max(np.abs(geo.F / geo.mass)), 1e-12)
    v_event_tol = 20.0 * dt * acc_scale   # below this, landings drown in step noise
    if min_dwell is None:
        min_dwell = 5.0 * dt
    states = [st]
    contact_states = [geo.contact_view(st)]
    events: list[OracleEvent] = []
    raw_words: list[tuple[str, float]] = []   # (word, start time)
    was_active = [geo.gap(np.array([st.x, st.z, st.theta]), i) <= 0.0
                  for i in (0, 1)]
    prev_rates = geo.contact_rates(st)
    for k in range(n_steps):
        st = _step(geo, st, dt)
        rates = geo.contact_rates(st)
        c, s = math.cos(st.theta), math.sin(st.theta)
        letters = []
        for i in (0, 1):
            active_now = geo.gap_scalar(st.x, st.z, c, s, i) <= 0.0
            dz_pre = prev_rates[i]
            if active_now and not was_active[i] and dz_pre < -v_event_tol:
                events.append(OracleEvent(time=st.t, contact=i + 1,
                                          speed=-dz_pre))
            was_active[i] = active_now
            if not active_now:
                letters.append("F")
            else:
                slide = rates[2] if i == 1 else rates[3]
                if abs(slide) <= v_stick_tol:
                    letters.append("S")
                else:
                    letters.append("P" if slide > 0 else "N")
        prev_rates = rates
        word = "".join(letters)
        if not raw_words or raw_words[-1][0] != word:
            raw_words.append((word, st.t))
        if (k + 1) % record_every == 0 or k == n_steps - 1:
            states.append(st)
            contact_states.append(geo.contact_view(st))
    words: list[str] = []
    intervals: list[tuple[str, float, float]] = []
    for k, (word, t0) in enumerate(raw_words):
        t1 = raw_words[k + 1][1] if k + 1 < len(raw_words) else st.t
        intervals.append((word, t0, t1))
        if t1 - t0 >= min_dwell and (not words or words[-1] != word):
            words.append(word)
    return OracleRun(states=states, contact_states=contact_states,
                     events=events, mode_words=words, word_intervals=intervals)


def kinetic_energy(cfg: Configuration, st: OracleState) -> float:
    return 0.5 * (cfg.m * (st.vx ** 2 + st.vz ** 2)
                  + cfg.m * cfg.rho ** 2 * st.omega ** 2)
