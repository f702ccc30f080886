"""Contact-mode admissibility, inequality consistency and equilibrium classification.

Because the zero-order dynamics are state-independent constants per mode,
whether a mode is consistent depends only on a small amount of discrete state
data: which contacts are touching and at rest, and the sign of the tangential
velocity there. Enumerating these qualitative states is therefore exact, and
classification reduces to a finite number of sign checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

from .model import (ALL_MODES, Configuration, ModeSolution, SingularMode,
                    ZodTableau, build_tableau, mode_dynamics)

TOL_CONS = 1e-8  # relative inequality tolerance for consistency checks

DOUBLE_SLIP_MODES = frozenset({"PP", "NN", "PN", "NP"})


class MarginalConsistency(RuntimeError):
    """A decisive consistency check sits within tolerance of equality."""


class ContactTouch(Enum):
    SEPARATED = "separated"
    TOUCHING_APPROACHING = "touching_approaching"
    TOUCHING_RESTING = "touching_resting"


SEPARATED = ContactTouch.SEPARATED
APPROACHING = ContactTouch.TOUCHING_APPROACHING
RESTING = ContactTouch.TOUCHING_RESTING


@dataclass(frozen=True)
class QualitativeState:
    """Discrete state class: per-contact touch status plus shared slip direction.

    ``slip_sign`` refers to the tangential velocity at the resting contact(s);
    with both contacts resting it is the sign of dx2, and the sign at contact 1
    follows through the kinematic coupling ratio.
    """

    contact1: ContactTouch
    contact2: ContactTouch
    slip_sign: int = 0

    def __post_init__(self):
        if self.slip_sign not in (-1, 0, 1):
            raise ValueError("slip_sign must be -1, 0 or +1")


REST_STATE = QualitativeState(RESTING, RESTING, 0)

#: Distinct non-static qualitative classes with well-defined continuous motion.
#: (Separated/separated admits every velocity; slip_sign is meaningless there
#: and canonicalized to 0.)
NON_STATIC_STATES = (
    QualitativeState(RESTING, RESTING, +1),
    QualitativeState(RESTING, RESTING, -1),
    QualitativeState(RESTING, SEPARATED, -1),
    QualitativeState(RESTING, SEPARATED, 0),
    QualitativeState(RESTING, SEPARATED, +1),
    QualitativeState(SEPARATED, RESTING, -1),
    QualitativeState(SEPARATED, RESTING, 0),
    QualitativeState(SEPARATED, RESTING, +1),
    QualitativeState(SEPARATED, SEPARATED, 0),
)


def _admissible_from_coupling(coupling: float) -> frozenset[str]:
    modes = {m for m in ALL_MODES if "F" in m} | {"SS"}
    modes |= {"PP", "NN"} if coupling > 0 else {"PN", "NP"}
    return frozenset(modes)


def admissible_modes(cfg: Configuration) -> frozenset[str]:
    """The kinematically admissible contact-mode words (exactly ten).

    With both contacts maintained the body has a single degree of freedom, so
    the tangential velocities at the two contacts are proportional; the sign
    of that ratio selects one of {PP, PN} and one of {NN, NP}, and rules out
    stick paired with slip (SP and friends). Any word containing F constrains
    at most one contact and is always admissible, as is SS.
    """
    tab = build_tableau(cfg)
    return _admissible_from_coupling(tab.coupling)


def _slip_at(qs: QualitativeState, i: int, coupling: float) -> int:
    both = qs.contact1 is RESTING and qs.contact2 is RESTING
    if i == 1:
        return qs.slip_sign if qs.contact2 is RESTING else 0
    if both:
        return int(math.copysign(1, coupling)) * qs.slip_sign if qs.slip_sign else 0
    return qs.slip_sign if qs.contact1 is RESTING else 0


def _compatible(mode: str, qs: QualitativeState, coupling: float) -> bool:
    for i, letter in enumerate(mode):
        touch = qs.contact1 if i == 0 else qs.contact2
        if touch is APPROACHING:
            return False  # an impact resolves this state, not continuous motion
        if touch is SEPARATED:
            if letter != "F":
                return False
            continue
        slip = _slip_at(qs, i, coupling)
        if letter == "S" and slip != 0:
            return False
        if letter == "P" and slip < 0:
            return False
        if letter == "N" and slip > 0:
            return False
    return True


def _check_mode(tab: ZodTableau, sol: ModeSolution, qs: QualitativeState,
                tol: float) -> tuple[ModeSolution | None, list[float]]:
    """Inequality checks for one solved mode at one qualitative state.

    Returns the solution with consistency flags filled in (or None when
    inconsistent) together with the normalized margins that were checked.
    Force margins are normalized by the external load, accelerations by
    load/mass; a value in [-tol, tol] makes the outcome marginal.
    """
    f_scale = _force_scale(tab)
    a_scale = f_scale / tab.m
    qdd = sol.qdd
    xdd = (float(tab.w[0] * qdd[0] + tab.w[1] * qdd[1] + tab.w[2] * qdd[2]), qdd[2])
    margins: list[float] = []
    if sol.mode == "SS":
        margins.append(sol.force_margin / f_scale)
    for i, letter in enumerate(sol.mode):
        touch = qs.contact1 if i == 0 else qs.contact2
        fz = sol.forces[2 * i]
        fx = sol.forces[2 * i + 1]
        mu = tab.mu1 if i == 0 else tab.mu2
        if letter == "F":
            if touch is RESTING:
                margins.append(qdd[i] / a_scale)  # must accelerate off the support
            continue
        if sol.mode != "SS":
            margins.append(fz / f_scale)
            if letter == "S":
                margins.append((mu * fz - abs(fx)) / f_scale)
        if letter in "PN" and _slip_at(qs, i, tab.coupling) == 0:
            # slip from rest must actually develop in the letter's direction
            margins.append((xdd[i] if letter == "P" else -xdd[i]) / a_scale)
    if any(m < -tol for m in margins):
        return None, margins
    marginal = any(m <= tol for m in margins)
    return replace(sol, consistent=True, marginal=marginal), margins


def _force_scale(tab: ZodTableau) -> float:
    b = max(abs(float(v)) for v in tab.b_ex)
    return max(b * tab.m, 1e-30)


def consistent_modes(tab: ZodTableau, cfg: Configuration,
                     qs: QualitativeState) -> list[ModeSolution]:
    """All admissible modes whose solved dynamics satisfy their inequalities at ``qs``.

    An empty list is a legal result and signals solution non-existence at that
    state (a Painleve symptom). Modes whose constraint system is singular are
    skipped for the same reason: they have no well-defined constant dynamics.
    """
    return _consistent_modes_margins(tab, qs)[0]


def _consistent_modes_margins(tab: ZodTableau, qs: QualitativeState):
    out = []
    seen_margins: list[float] = []
    admissible = _admissible_from_coupling(tab.coupling)
    for mode in ALL_MODES:
        if mode not in admissible or not _compatible(mode, qs, tab.coupling):
            continue
        try:
            sol = mode_dynamics(tab, mode)
        except SingularMode:
            continue
        checked, margins = _check_mode(tab, sol, qs, TOL_CONS)
        seen_margins += margins
        if checked is not None:
            out.append(checked)
    return out, seen_margins


@dataclass(frozen=True)
class EquilibriumClass:
    """Discrete classification of the reference equilibrium state."""

    is_equilibrium: bool
    is_ambiguous: bool
    ambiguity_witness: str | None
    is_painleve_free: bool
    is_persistent: bool
    is_weakly_persistent: bool
    marginal: bool
    min_margin: float  # smallest |normalized margin| across all decisive checks


def classify_equilibrium(cfg: Configuration, rg_evidence=None, *,
                         weak_condition2: bool | str = "auto",
                         strict: bool = False) -> EquilibriumClass:
    """Classify the reference state: equilibrium, ambiguity, Painleve, persistence.

    Weak persistence needs, per slip direction, either the persistence
    condition itself or evidence about the return map near grazing (endpoint
    behavior and the absence of slipping double impacts). That evidence is an
    :class:`~contactstab.poincare.RGMap`; pass one as ``rg_evidence`` to reuse
    an already-computed map, leave ``weak_condition2="auto"`` to compute one on
    demand, or set it to ``False`` to disable the return-map fallback (then
    weak persistence degenerates to plain persistence).

    With ``strict=True`` a marginal decisive check raises
    :class:`MarginalConsistency` instead of only being flagged.
    """
    tab = build_tableau(cfg)
    rest_modes, rest_margins = _consistent_modes_margins(tab, REST_STATE)
    rest_words = [s.mode for s in rest_modes]
    is_eq = "SS" in rest_words
    others = [w for w in rest_words if w != "SS"]
    is_ambiguous = is_eq and bool(others)
    witness = others[0] if is_ambiguous else None

    all_margins = list(rest_margins)
    per_state = {}
    for qs in NON_STATIC_STATES:
        sols, margins = _consistent_modes_margins(tab, qs)
        per_state[qs] = sols
        all_margins += margins
    painleve_free = all(len(v) == 1 for v in per_state.values())

    def condition1(sign: int) -> bool:
        sols = per_state[QualitativeState(RESTING, RESTING, sign)]
        return len(sols) == 1 and sols[0].mode in DOUBLE_SLIP_MODES

    cond1 = {s: condition1(s) for s in (+1, -1)}
    is_persistent = is_eq and cond1[+1] and cond1[-1]

    is_weak = is_eq and not is_ambiguous
    if is_weak and not (cond1[+1] and cond1[-1]):
        need = [s for s in (+1, -1) if not cond1[s]]
        if weak_condition2 is False:
            is_weak = is_persistent
        else:
            if rg_evidence is None:
                from . import poincare
                rg_evidence = poincare.compute_rg_map(cfg)
            for s in need:
                if not _weak_condition2(rg_evidence, s):
                    is_weak = False
                    break

    marginal = any(s.marginal for sols in per_state.values() for s in sols) \
        or any(s.marginal for s in rest_modes)
    if marginal and strict:
        raise MarginalConsistency("a decisive consistency check is within tolerance "
                                  "of equality; classification untrustworthy")
    min_margin = min((abs(m) for m in all_margins if not math.isnan(m)),
                     default=math.inf)
    return EquilibriumClass(
        is_equilibrium=is_eq, is_ambiguous=is_ambiguous, ambiguity_witness=witness,
        is_painleve_free=painleve_free, is_persistent=is_persistent,
        is_weakly_persistent=is_weak, marginal=marginal, min_margin=min_margin)


def _weak_condition2(rgmap, sign: int) -> bool:
    """Non-attractivity of the double-slip state with this slip direction.

    (a) entering it through an accumulation of grazing impacts is impossible:
    the endpoint limit of the return map stays interior, or its slope limit
    exceeds one; and (b) no sampled trajectory contained a slipping double
    impact with this direction.
    """
    rec = rgmap.endpoint_plus if sign > 0 else rgmap.endpoint_minus
    if rec is None or rec.set_id is None:
        return False
    if rec.set_id == 2:
        blocked = abs(rec.r_limit) < math.pi / 2
    else:
        blocked = rec.r_prime > 1.0
    if not blocked:
        return False
    return not any(sign in s.slip_double_signs for s in rgmap.samples)
