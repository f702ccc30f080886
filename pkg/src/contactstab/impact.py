"""Instantaneous inelastic frictional impacts.

An impact maps pre-impact velocities to post-impact velocities through contact
impulses, using the same force-to-acceleration columns as continuous motion.
Each touching contact is either *active* (normal velocity absorbed completely,
non-negative normal impulse) or *passive* (zero impulse, non-penetrating
post-velocity), and active contacts carry a tangential regime: stick (letter
``S``), slip in +x (``P``) or slip in -x (``N``), with the tangential impulse
on the friction-cone boundary while slipping.

Candidate solutions are enumerated in a fixed preference order -- larger
active set first, more sticking contacts first -- and the first candidate
satisfying every constraint wins. This implements the tie-breaking rule for
the rare non-unique double impacts; for all other cases the winner is the
unique solution.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np

from .model import ContactState, ZodTableau, margin_lines, maxmin_linear_1d

logger = logging.getLogger(__name__)

TOL_GRAZE = 1e-10   # m/s: approach speeds in (-TOL_GRAZE, 0] do not trigger an impact
TOL_FEAS = 1e-9     # relative feasibility tolerance for candidate acceptance
TOL_TOUCH = 1e-12   # m: gap below which a contact counts as touching


class NoConsistentImpact(RuntimeError):
    """No candidate impulse solution satisfies the impact constraints."""


@dataclass(frozen=True)
class ImpactOutcome:
    """Result of resolving one impact."""

    post: tuple[float, float, float]          # (dz1+, dz2+, dx2+)
    impulses: tuple[float, float, float, float]  # (j1z, j1x, j2z, j2x), N*s
    active_set: tuple[int, ...]               # contact numbers, subset of (1, 2)
    regimes: tuple[str, ...]                  # per active contact: 'S', 'P' or 'N'
    slipping_double: bool
    slip_sign: int                            # sign of dx2+ for a slipping double

    @property
    def post_state_velocities(self):
        return self.post


def _candidate_order(touching: tuple[int, ...]):
    """All (active_set, regimes) candidates in preference order.

    Total order: more active contacts first; among equal sizes, contact 1's
    set first; then fewer slipping contacts; then regimes lexicographic in
    (S, P, N). The empty active set (no impact at all) comes last.
    """
    sets: list[tuple[int, ...]] = []
    if len(touching) == 2:
        sets = [(0, 1), (0,), (1,), ()]
    elif touching:
        sets = [touching, ()]
    else:
        sets = [()]
    cands = []
    for act in sets:
        for regs in product("SPN", repeat=len(act)):
            cands.append((act, regs))
    cands.sort(key=lambda c: (-len(c[0]), c[0],
                              sum(1 for r in c[1] if r != "S"),
                              tuple("SPN".index(r) for r in c[1])))
    return cands


@lru_cache(maxsize=128)
def _impact_operators(tab: ZodTableau):
    """Per-candidate linear operators mapping pre-velocity to impulses.

    For candidate (act, regs) with n = 2*len(act) impulse unknowns the
    constraints read K j = -S v, so j = L v with L = -K^{-1} S. The
    stick-stick double candidate is rank deficient (its four velocity
    constraints force the full velocity to zero and leave an internal squeeze
    impulse free); it is returned with the least-squares operator plus the
    null direction for the runtime feasibility search.
    """
    A = tab.A
    w = tab.w
    e = np.eye(3)
    ops = {}
    for touching in ((0,), (1,), (0, 1)):
        for act, regs in _candidate_order(touching):
            if (act, regs) in ops or not act:
                continue
            idx = [k for i in act for k in (2 * i, 2 * i + 1)]
            Asub = A[:, idx]
            n = len(idx)
            K = np.zeros((n, n))
            S = np.zeros((n, 3))
            row = 0
            for i in act:
                K[row] = Asub[i]
                S[row] = e[i]
                row += 1
            for k, i in enumerate(act):
                xsel = w if i == 0 else e[2]
                if regs[k] == "S":
                    K[row] = xsel @ Asub
                    S[row] = xsel
                else:
                    mu = tab.mu1 if i == 0 else tab.mu2
                    K[row, 2 * k + 1] = 1.0
                    K[row, 2 * k] = mu if regs[k] == "P" else -mu
                row += 1
            sv = np.linalg.svd(K, compute_uv=False)
            if sv[-1] < 1e-10 * sv[0]:
                if act == (0, 1) and regs == ("S", "S"):
                    L0 = -np.linalg.pinv(K) @ S
                    _, _, Vt = np.linalg.svd(K)
                    ops[(act, regs)] = ("family", L0, Vt[-1], Asub, idx)
                else:
                    ops[(act, regs)] = ("singular",)
                continue
            L = -np.linalg.solve(K, S)
            ops[(act, regs)] = ("unique", L, Asub, idx)
    return ops


def _try_candidate(tab, ops, act, regs, v, touching, tol_v, tol_j):
    """Solve one candidate and verify the impact constraints; None if violated."""
    if not act:
        j = np.zeros(4)
        post = np.asarray(v, dtype=float)
    else:
        op = ops[(act, regs)]
        if op[0] == "singular":
            return None
        if op[0] == "family":
            _, L0, null, Asub, idx = op
            j0 = L0 @ v
            t, margin = maxmin_linear_1d(margin_lines(j0, null, tab.mu1, tab.mu2))
            if margin < -tol_j:
                return None
            jsub = j0 + t * null
            post = np.zeros(3)
        else:
            _, L, Asub, idx = op
            jsub = L @ v
            post = v + Asub @ jsub
        j = np.zeros(4)
        j[idx] = jsub
    dx_post = (float(tab.w @ post), float(post[2]))
    for k, i in enumerate(act):
        mu = tab.mu1 if i == 0 else tab.mu2
        if j[2 * i] < -tol_j:
            return None
        if regs[k] == "S" and mu * j[2 * i] - abs(j[2 * i + 1]) < -tol_j:
            return None
        if regs[k] == "P" and dx_post[i] < -tol_v:
            return None
        if regs[k] == "N" and dx_post[i] > tol_v:
            return None
    for i in touching:
        if i not in act and post[i] < -tol_v:
            return None
    return j, post


def resolve_impact(tab: ZodTableau, pre: ContactState) -> ImpactOutcome:
    """Resolve the impact implied by ``pre`` (touching contacts approaching).

    Grazing approaches (speed within ``TOL_GRAZE`` of zero) are clamped to
    rest without an impulse. If no contact actually approaches, the identity
    outcome is returned.
    """
    z = (pre.z1, pre.z2)
    v = (pre.dz1, pre.dz2, pre.dx2)
    return resolve_impact_arrays(tab, z, v)


def resolve_impact_arrays(tab: ZodTableau, z, v) -> ImpactOutcome:
    touching = tuple(i for i in (0, 1) if z[i] <= TOL_TOUCH)
    v = np.array([v[0], v[1], v[2]], dtype=float)
    speed = max(abs(float(x)) for x in v)
    # grazing clamp
    for i in touching:
        if -TOL_GRAZE < v[i] < 0.0:
            v[i] = 0.0
    approaching = [i for i in touching if v[i] < 0.0]
    if not approaching:
        return ImpactOutcome(post=tuple(float(x) for x in v),
                             impulses=(0.0, 0.0, 0.0, 0.0), active_set=(),
                             regimes=(), slipping_double=False, slip_sign=0)
    tol_v = TOL_FEAS * max(speed, 1e-300)
    tol_j = TOL_FEAS * tab.m * max(speed, 1e-300)
    ops = _impact_operators(tab)
    winner = None
    audit = logger.isEnabledFor(logging.DEBUG)
    extra = []
    for act, regs in _candidate_order(touching):
        res = _try_candidate(tab, ops, act, regs, v, touching, tol_v, tol_j)
        if res is None:
            continue
        if winner is None:
            winner = (act, regs, *res)
            if not audit:
                break  # preference order: first satisfying candidate wins
        else:
            extra.append((act, regs))
    if extra:
        logger.debug("non-unique impact at v=%s: winner %s, also feasible %s",
                     tuple(v), winner[:2], extra)
    if winner is None:
        raise NoConsistentImpact(
            f"no impulse solution at z={tuple(z)}, v={tuple(v)} "
            f"(touching={touching})")
    act, regs, j, post = winner
    slipping_double = len(act) == 2 and abs(float(post[2])) > tol_v
    slip_sign = int(np.sign(post[2])) if slipping_double else 0
    if slipping_double:
        logger.debug("slipping double impact, post dx2=%g", post[2])
    return ImpactOutcome(post=tuple(float(x) for x in post),
                         impulses=tuple(float(x) for x in j),
                         active_set=tuple(i + 1 for i in act), regimes=regs,
                         slipping_double=slipping_double, slip_sign=slip_sign)


def kinetic_energy(tab: ZodTableau, dq) -> float:
    return tab.kinetic_energy(dq)


def energy_balance(tab: ZodTableau, pre: ContactState, out: ImpactOutcome) -> float:
    """Kinetic energy dissipated by the impact (non-negative up to roundoff)."""
    return tab.kinetic_energy(pre.dq) - tab.kinetic_energy(out.post)
