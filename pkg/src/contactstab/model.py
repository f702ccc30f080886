"""Physical model of a planar rigid body resting on two unilateral frictional contacts.

Coordinates and sign conventions (see docs/geometry.md):

* The body has mass ``m`` and radius of gyration ``rho``. Contact point ``p_i``
  sits at body-frame position ``(l_i, -h)`` relative to the center of mass,
  and its local support surface has normal direction tilted by ``phi_i`` from
  the body-frame +z axis. On a slope under gravity, ``phi1 = phi2 = 0``, the
  +x axis points downhill and ``alpha`` is the slope angle.
* Generalized coordinates are ``q = (z1, z2, x2)``: the normal displacements
  of both contact points and the tangential displacement of contact 2, all
  measured from the reference equilibrium, which is exactly ``q = qdot = 0``.
* Contact forces are ``(f_iz, f_ix)`` in each contact's local normal/tangent
  frame; positive ``f_iz`` pushes the body off the support.

All accelerations here are evaluated at the reference state (the zero-order
approximation), which makes them state-independent constants per contact mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_GRAVITY = 9.81  # m/s^2

TOL_GEOM = 1e-6   # minimum |cos(phi_i)| before geometry counts as degenerate
TOL_PEN = 1e-9    # m, allowed numerical penetration
TOL_SINGULAR = 1e-10  # relative pivot threshold for mode solves

#: All 16 two-letter contact mode words. Letters: F free, S stick,
#: P slip in +x, N slip in -x.
ALL_MODES = tuple(a + b for a in "FSPN" for b in "FSPN")

LETTERS = "FSPN"


class DegenerateGeometry(ValueError):
    """Contact geometry too close to a kinematically degenerate arrangement."""


class SingularMode(RuntimeError):
    """A contact mode's constraint system is singular (Painleve-type degeneracy)."""


@dataclass(frozen=True)
class Configuration:
    """Physical parameters of the body, contacts and external load (SI units).

    ``f_ex``/``alpha``/``tau_ex`` describe the constant external load: a force
    of magnitude ``f_ex`` at angle ``alpha`` from the -z axis plus a torque
    ``tau_ex``. For a body on a slope use :meth:`on_slope`.
    """

    m: float
    rho: float
    h: float
    l1: float
    l2: float
    mu1: float
    mu2: float
    f_ex: float
    alpha: float = 0.0
    tau_ex: float = 0.0
    phi1: float = 0.0
    phi2: float = 0.0

    def __post_init__(self):
        if not (self.m > 0 and self.rho > 0):
            raise ValueError(f"m and rho must be positive (m={self.m}, rho={self.rho})")
        if self.mu1 < 0 or self.mu2 < 0:
            raise ValueError("friction coefficients must be non-negative")
        for i, phi in ((1, self.phi1), (2, self.phi2)):
            if abs(math.cos(phi)) < TOL_GEOM:
                raise DegenerateGeometry(f"|cos(phi{i})| < {TOL_GEOM}: contact normal "
                                         "parallel to its surface")
        if self.phi1 == self.phi2 and not self.l1 < self.l2:
            raise DegenerateGeometry("contact points must be distinct with l1 < l2")

    @classmethod
    def on_slope(cls, m, rho, h, l1, l2, mu1, mu2, alpha,
                 g=DEFAULT_GRAVITY) -> "Configuration":
        """Body on an inclined plane under gravity; ``alpha`` is the slope angle."""
        return cls(m=m, rho=rho, h=h, l1=l1, l2=l2, mu1=mu1, mu2=mu2,
                   f_ex=m * g, alpha=alpha, tau_ex=0.0)


@dataclass(frozen=True)
class ContactState:
    """Generalized position/velocity ``(z1, z2, x2, dz1, dz2, dx2)`` at time ``t``."""

    z1: float = 0.0
    z2: float = 0.0
    x2: float = 0.0
    dz1: float = 0.0
    dz2: float = 0.0
    dx2: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        if self.z1 < -TOL_PEN or self.z2 < -TOL_PEN:
            raise ValueError(f"penetrating state: z1={self.z1}, z2={self.z2}")

    @property
    def q(self) -> tuple[float, float, float]:
        return (self.z1, self.z2, self.x2)

    @property
    def dq(self) -> tuple[float, float, float]:
        return (self.dz1, self.dz2, self.dx2)

    def is_rest(self, tol: float = 0.0) -> bool:
        return all(abs(v) <= tol for v in (self.z1, self.z2, self.dz1, self.dz2, self.dx2))


def delta_metric(state: ContactState) -> float:
    """Perturbation magnitude max(sqrt(z1), sqrt(z2), sqrt|x2|, |dz1|, |dz2|, |dx2|)."""
    return max(math.sqrt(max(state.z1, 0.0)), math.sqrt(max(state.z2, 0.0)),
               math.sqrt(abs(state.x2)),
               abs(state.dz1), abs(state.dz2), abs(state.dx2))


def pseudo_metric_D(state: ContactState) -> float:
    """Like :func:`delta_metric` but without the tangential-displacement term."""
    return max(math.sqrt(max(state.z1, 0.0)), math.sqrt(max(state.z2, 0.0)),
               abs(state.dz1), abs(state.dz2), abs(state.dx2))


def pseudo_metric_d(state: ContactState) -> float:
    """Normal-motion magnitude: drops both tangential terms."""
    return max(math.sqrt(max(state.z1, 0.0)), math.sqrt(max(state.z2, 0.0)),
               abs(state.dz1), abs(state.dz2))


@dataclass(frozen=True, eq=False)
class ZodTableau:
    """Constant-coefficient acceleration tableau evaluated at the reference state.

    ``qdd = b_ex + B1z*f1z + B1x*f1x + B2z*f2z + B2x*f2x`` for any contact
    forces; the same columns map impulses to velocity jumps. Because it is
    evaluated at the reference state it contains no state dependence at all.

    Derived members: ``A`` stacks the four force columns; ``w`` gives the
    tangential velocity of contact 1 as ``dx1 = w . (dz1, dz2, dx2)``;
    ``coupling = w[2]`` is the ratio dx1/dx2 during two-contact motion;
    ``mass_matrix`` is the kinetic-energy metric in generalized coordinates.
    """

    b_ex: np.ndarray
    B1z: np.ndarray
    B1x: np.ndarray
    B2z: np.ndarray
    B2x: np.ndarray
    eta1: float
    eta2: float
    xi1: float
    xi2: float
    m: float
    mu1: float
    mu2: float
    A: np.ndarray = field(repr=False, default=None)
    w: np.ndarray = field(repr=False, default=None)
    coupling: float = field(repr=False, default=None)
    mass_matrix: np.ndarray = field(repr=False, default=None)

    def kinetic_energy(self, dq) -> float:
        v = np.asarray(dq, dtype=float)
        return 0.5 * float(v @ self.mass_matrix @ v)


def build_tableau(cfg: Configuration) -> ZodTableau:
    """Assemble the reference-state acceleration tableau for ``cfg``.

    Raises :class:`DegenerateGeometry` when the contact arrangement does not
    define an invertible velocity map (e.g. coincident contact points or a
    vanishing two-contact tangential coupling).
    """
    c1, s1 = math.cos(cfg.phi1), math.sin(cfg.phi1)
    c2, s2 = math.cos(cfg.phi2), math.sin(cfg.phi2)
    eta1 = cfg.l1 * c1 - cfg.h * s1
    eta2 = cfg.l2 * c2 - cfg.h * s2
    xi1 = cfg.h * c1 + cfg.l1 * s1
    xi2 = cfg.h * c2 + cfg.l2 * s2
    r2 = cfg.rho ** -2
    m = cfg.m

    b_ex = (cfg.f_ex / m) * np.array([-math.cos(cfg.alpha - cfg.phi1),
                                      -math.cos(cfg.alpha - cfg.phi2),
                                      math.sin(cfg.alpha - cfg.phi2)]) \
        + (cfg.tau_ex / (m * cfg.rho ** 2)) * np.array([eta1, eta2, xi2])

    def col_normal(eta_i, phi_i):
        return np.array([math.cos(cfg.phi1 - phi_i) + r2 * eta_i * eta1,
                         math.cos(cfg.phi2 - phi_i) + r2 * eta_i * eta2,
                         math.sin(cfg.phi2 - phi_i) + r2 * eta_i * xi2]) / m

    def col_tangent(xi_i, phi_i):
        return np.array([math.sin(phi_i - cfg.phi1) + r2 * xi_i * eta1,
                         math.sin(phi_i - cfg.phi2) + r2 * xi_i * eta2,
                         math.cos(phi_i - cfg.phi2) + r2 * xi_i * xi2]) / m

    B1z = col_normal(eta1, cfg.phi1)
    B2z = col_normal(eta2, cfg.phi2)
    B1x = col_tangent(xi1, cfg.phi1)
    B2x = col_tangent(xi2, cfg.phi2)
    A = np.column_stack([B1z, B1x, B2z, B2x])

    # Columns for (f1z, f2z, f2x) are the inverse generalized mass matrix:
    # those forces are conjugate to (z1, z2, x2).
    Minv = np.column_stack([B1z, B2z, B2x])
    if abs(np.linalg.det(Minv)) < 1e-12 / m ** 3:
        raise DegenerateGeometry("contact velocity map is singular")
    mass_matrix = np.linalg.inv(Minv)
    w = np.linalg.solve(Minv, B1x)
    # components that are exactly zero in the parallel-normal case carry
    # solver residue that would masquerade as tangential coupling
    w[np.abs(w) < 1e-13 * np.max(np.abs(w))] = 0.0
    coupling = float(w[2])
    if abs(coupling) < TOL_GEOM or not math.isfinite(coupling):
        raise DegenerateGeometry("two-contact tangential coupling vanishes; "
                                 "slip-mode admissibility is ill-defined")

    return ZodTableau(b_ex=b_ex, B1z=B1z, B1x=B1x, B2z=B2z, B2x=B2x,
                      eta1=eta1, eta2=eta2, xi1=xi1, xi2=xi2, m=m,
                      mu1=cfg.mu1, mu2=cfg.mu2,
                      A=A, w=w, coupling=coupling, mass_matrix=mass_matrix)


@dataclass(frozen=True)
class ModeSolution:
    """Constant accelerations and contact forces solving one mode's constraints.

    ``consistent``/``marginal`` are left at their defaults here; the
    consistency layer fills them in after checking the mode's inequalities.
    ``force_margin`` carries the max-min feasibility margin for statically
    indeterminate solves (mode SS), otherwise ``nan``.
    """

    mode: str
    qdd: tuple[float, float, float]
    f1z: float
    f1x: float
    f2z: float
    f2x: float
    consistent: bool = False
    marginal: bool = False
    force_margin: float = float("nan")

    @property
    def forces(self) -> tuple[float, float, float, float]:
        return (self.f1z, self.f1x, self.f2z, self.f2x)


def _constraint_rows(tab: ZodTableau, mode: str):
    """Rows (in force unknowns) and rhs for the four per-mode equality constraints."""
    A, b, w = tab.A, tab.b_ex, tab.w
    rows, rhs = [], []
    selectors = (np.eye(3)[0], np.eye(3)[1], np.eye(3)[2])
    for i, letter in enumerate(mode):
        iz, ix = (0, 1) if i == 0 else (2, 3)
        z_sel = selectors[i]
        x_sel = w if i == 0 else selectors[2]
        mu = tab.mu1 if i == 0 else tab.mu2
        if letter == "F":
            for k in (iz, ix):
                r = np.zeros(4)
                r[k] = 1.0
                rows.append(r)
                rhs.append(0.0)
        elif letter == "S":
            rows.append(z_sel @ A)
            rhs.append(-float(z_sel @ b))
            rows.append(x_sel @ A)
            rhs.append(-float(x_sel @ b))
        elif letter in "PN":
            rows.append(z_sel @ A)
            rhs.append(-float(z_sel @ b))
            r = np.zeros(4)
            r[ix] = 1.0
            r[iz] = mu if letter == "P" else -mu
            rows.append(r)
            rhs.append(0.0)
        else:
            raise ValueError(f"unknown mode letter {letter!r}")
    return np.array(rows), np.array(rhs)


def force_margins(f, mu1: float, mu2: float) -> tuple[float, float, float, float]:
    """Unilaterality and friction-cone margins (>= 0 means satisfied), in Newtons."""
    f1z, f1x, f2z, f2x = f
    return (f1z, f2z, mu1 * f1z - abs(f1x), mu2 * f2z - abs(f2x))


def maxmin_linear_1d(lines: list[tuple[float, float]]) -> tuple[float, float]:
    """Maximize ``min_k (a_k*t + b_k)`` over t for a small set of lines.

    Returns ``(t*, value)``. The maximizer lies at a crossing of two lines
    unless the minimum is monotone, in which case the problem is unbounded on
    one side and we clamp at an (arbitrary, large) bracket -- physically this
    does not occur for two-contact force feasibility.
    """
    def value(t):
        return min(a * t + b for a, b in lines)

    cands = [0.0]
    n = len(lines)
    for i in range(n):
        ai, bi = lines[i]
        for j in range(i + 1, n):
            aj, bj = lines[j]
            if abs(ai - aj) > 1e-300:
                cands.append((bj - bi) / (ai - aj))
    best_t = max(cands, key=value)
    slopes = [a for a, _ in lines]
    if all(a > 0 for a in slopes) or all(a < 0 for a in slopes):
        big = 1e12
        t = big if all(a > 0 for a in slopes) else -big
        if value(t) > value(best_t):
            best_t = t
    return best_t, value(best_t)


def margin_lines(f0, n, mu1: float, mu2: float) -> list[tuple[float, float]]:
    """The six force-feasibility margins along ``f0 + t*n`` as exact lines.

    Each friction-cone margin mu*f_iz - |f_ix| is the minimum of the two lines
    mu*f_iz -/+ f_ix, so the pointwise minimum over all six lines equals the
    minimum of :func:`force_margins`.
    """
    return [
        (n[0], f0[0]),
        (n[2], f0[2]),
        (mu1 * n[0] - n[1], mu1 * f0[0] - f0[1]),
        (mu1 * n[0] + n[1], mu1 * f0[0] + f0[1]),
        (mu2 * n[2] - n[3], mu2 * f0[2] - f0[3]),
        (mu2 * n[2] + n[3], mu2 * f0[2] + f0[3]),
    ]


def _solve_family(tab: ZodTableau, mode: str, K: np.ndarray, rhs: np.ndarray) -> ModeSolution:
    """Resolve a rank-deficient mode solve (static indeterminacy, e.g. SS).

    The solution set is a one-parameter family ``f0 + t*n``; we return the
    member maximizing the minimum force margin, so feasibility of the family
    is equivalent to feasibility of the returned member.
    """
    f0, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    _, sv, Vt = np.linalg.svd(K)
    if sv[-2] < TOL_SINGULAR * sv[0]:
        raise SingularMode(f"mode {mode}: constraint system rank-deficient by more than one")
    n = Vt[-1]
    t, margin = maxmin_linear_1d(margin_lines(f0, n, tab.mu1, tab.mu2))
    f = f0 + t * n
    qdd = tab.b_ex + tab.A @ f
    return ModeSolution(mode=mode, qdd=tuple(float(v) for v in qdd),
                        f1z=float(f[0]), f1x=float(f[1]),
                        f2z=float(f[2]), f2x=float(f[3]),
                        force_margin=float(margin))


def mode_dynamics(tab: ZodTableau, mode: str) -> ModeSolution:
    """Solve the four equality constraints of ``mode`` against the tableau.

    Per letter: F fixes both force components to zero, S fixes the contact
    point's normal and tangential accelerations to zero, P/N fix the normal
    acceleration to zero and tie the tangential force to the friction cone
    boundary (f_ix = -mu*f_iz for P, +mu*f_iz for N).

    Mode SS is statically indeterminate (an internal squeeze force is
    unobservable in the accelerations); see :func:`_solve_family`.
    """
    if mode not in ALL_MODES:
        raise ValueError(f"unknown mode word {mode!r}")
    K, rhs = _constraint_rows(tab, mode)
    sv = np.linalg.svd(K, compute_uv=False)
    if sv[-1] < TOL_SINGULAR * sv[0]:
        if mode == "SS":
            return _solve_family(tab, mode, K, rhs)
        raise SingularMode(f"mode {mode}: constraint system singular "
                           f"(condition {sv[0] / max(sv[-1], 1e-300):.2e})")
    f = np.linalg.solve(K, rhs)
    qdd = tab.b_ex + tab.A @ f
    return ModeSolution(mode=mode, qdd=tuple(float(v) for v in qdd),
                        f1z=float(f[0]), f1x=float(f[1]),
                        f2z=float(f[2]), f2x=float(f[3]))
