"""Reduced return map R(phi), growth map G(phi) and the stability verdict.

Every pre-impact state with contact 1 sustained and contact 2 descending is
equivalent, up to the exact scaling invariance of the zero-order dynamics, to
the canonical state ``z = 0, dz1 = 0, dz2 = -1, dx2 = tan(phi)`` parametrized
by the impact angle ``phi = atan(dx2/|dz2|)``. Running the hybrid dynamics
from that state until the next such pre-impact state yields the scalar return
map ``R`` and the normal-impact-speed growth ratio ``G``; their fixed points,
endpoint asymptotics and safe/transient interval partitions decide finite-time
stability of the equilibrium.

The library's stability criteria are tagged Thm1..Thm5:

* Thm1-Ambiguity: several contact modes consistent at rest -> unstable.
* Thm2-ReverseChatter: a fixed point of R with growth ratio above one ->
  unstable (exponentially growing impact sequence).
* Thm3-GlobalG: persistent equilibrium with G < 1 wherever R is defined ->
  stable.
* Thm4a-StablePartition: weakly persistent equilibrium with a stable
  partition of the impact-angle interval -> stable.
* Thm5-MonotoneR: weakly persistent equilibrium, non-decreasing R and G < 1
  at every fixed point -> stable (a special case with an explicit partition).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .consistency import EquilibriumClass, classify_equilibrium
from .model import Configuration, ContactState
from .simulator import (EQUILIBRIUM, SECTION_CROSSING, HybridEngine,
                        PainleveEncountered, SimOptions)

HALF_PI = math.pi / 2

STABLE = "Stable"
UNSTABLE = "Unstable"
NO_EQUILIBRIUM = "NoEquilibrium"
DEGENERATE = "Degenerate"
INCONCLUSIVE = "Inconclusive"

JUSTIFICATIONS = ("Thm1-Ambiguity", "Thm2-ReverseChatter", "Thm3-GlobalG",
                  "Thm4a-StablePartition", "Thm5-MonotoneR", "None")


class UnclassifiableEndpoint(RuntimeError):
    """Neither endpoint asymptotics fit converged."""


@dataclass(frozen=True)
class MapOptions:
    n_grid: int = 2001
    phi_margin: float = 1e-3         # grid spans [-pi/2+margin, pi/2-margin]
    refine_factor: int = 10          # extra local density at features
    jump_threshold: float = 0.1      # rad; R jump flagged as a discontinuity
    margin: float = 1e-3             # robustness band for verdict inequalities
    fp_tol: float = 1e-6             # rad; fixed-point bisection tolerance
    endpoint_eps: tuple = (1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5)
    endpoint_residual_max: float = 0.10
    partition_eps_cap: float = 0.01
    sim: SimOptions = SimOptions(max_events=400)


@dataclass(frozen=True)
class RGSample:
    phi: float
    r: float | None
    g: float | None
    ss_exit: bool = False
    zeno_exit: bool = False
    slip_double_signs: frozenset[int] = frozenset()
    reason: str = ""

    @property
    def defined(self) -> bool:
        return self.r is not None


@dataclass(frozen=True)
class FixedPoint:
    phi: float
    g: float
    slope: float

    @property
    def attractive(self) -> bool:
        return abs(self.slope) < 1.0


@dataclass(frozen=True)
class EndpointRecord:
    """Asymptotics of (R, G) at one end of the impact-angle interval.

    ``set_id`` 1: R tends to the endpoint itself with slope limit equal to the
    constant G value ``g_limit``. ``set_id`` 2: R tends to the interior value
    ``r_limit`` while G diverges like ``g_eps_limit`` over the distance to the
    endpoint. ``None``: neither fit reached the residual threshold.
    """

    side: int
    set_id: int | None
    g_limit: float | None        # set 1: lim G
    r_limit: float | None        # set 2: lim R (interior)
    g_eps_limit: float | None    # set 2: lim G * (side*pi/2 - phi)
    r_prime: float               # finite-difference slope at the closest samples
    residual: float
    detail: str = ""

    @property
    def attractive(self) -> bool:
        return self.set_id == 1 and self.g_limit is not None and self.g_limit < 1.0


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    safe: bool
    transient: bool


@dataclass(frozen=True)
class Partition:
    breakpoints: tuple[float, ...]
    intervals: tuple[Interval, ...]
    edges: frozenset[tuple[int, int]]
    extremal_cut_applied: bool

    @property
    def stable(self) -> bool:
        return all(iv.safe or iv.transient for iv in self.intervals)


@dataclass(frozen=True)
class RGMap:
    samples: tuple[RGSample, ...]
    fixed_points: tuple[FixedPoint, ...]
    endpoint_minus: EndpointRecord | None
    endpoint_plus: EndpointRecord | None
    opts: MapOptions
    evaluator: object = field(repr=False, compare=False, default=None)

    def defined_samples(self):
        return [s for s in self.samples if s.defined]


@dataclass(frozen=True)
class StabilityVerdict:
    verdict: str
    justification: str
    equilibrium: EquilibriumClass | None
    fixed_points: tuple[FixedPoint, ...] = ()
    endpoint_minus: EndpointRecord | None = None
    endpoint_plus: EndpointRecord | None = None
    partition: Partition | None = None
    ambiguity_witness: str | None = None
    notes: tuple[str, ...] = ()
    grid_size: int = 0


def _section_state(phi: float) -> ContactState:
    return ContactState(z1=0.0, z2=0.0, x2=0.0,
                        dz1=0.0, dz2=-1.0, dx2=math.tan(phi), t=0.0)


def rg_eval(cfg: Configuration, phi: float, opts: MapOptions = MapOptions(),
            engine: HybridEngine | None = None) -> RGSample:
    """One sample of the return and growth maps at impact angle ``phi``.

    Undefined samples (``r is None``) signal trajectories that reach static
    equilibrium, diverge, or exhaust their event budget without crossing the
    pre-impact section again; the reason is recorded.
    """
    if abs(phi) >= HALF_PI:
        raise ValueError("phi must lie strictly inside (-pi/2, pi/2)")
    if engine is None:
        engine = HybridEngine(cfg)
    res = engine.run(_section_state(phi), opts.sim, stop_on_section=True)
    zeno_exit = any(e.kind == "ZenoPoint" for e in res.events)
    if res.terminal == SECTION_CROSSING:
        _, v_pre = res.crossing
        g = -v_pre[1]
        r = math.atan2(v_pre[2], g)
        return RGSample(phi=phi, r=r, g=g, zeno_exit=zeno_exit,
                        slip_double_signs=res.slip_double_signs)
    if res.terminal == EQUILIBRIUM:
        return RGSample(phi=phi, r=None, g=None, ss_exit=True,
                        zeno_exit=zeno_exit,
                        slip_double_signs=res.slip_double_signs,
                        reason="reached static equilibrium")
    return RGSample(phi=phi, r=None, g=None, zeno_exit=zeno_exit,
                    slip_double_signs=res.slip_double_signs,
                    reason=res.terminal)


def compute_rg_map(cfg: Configuration, opts: MapOptions = MapOptions()) -> RGMap:
    """Sample R and G on a dense grid with local refinement, locate fixed
    points and classify the endpoint asymptotics."""
    engine = HybridEngine(cfg)
    lo = -HALF_PI + opts.phi_margin
    hi = HALF_PI - opts.phi_margin
    n = max(opts.n_grid, 3)
    grid = [lo + (hi - lo) * k / (n - 1) for k in range(n)]
    samples = {phi: rg_eval(cfg, phi, opts, engine) for phi in grid}

    def feature(a: RGSample, b: RGSample) -> bool:
        if a.defined != b.defined:
            return True
        if not a.defined:
            return False
        if (a.r - a.phi) * (b.r - b.phi) < 0:
            return True
        return abs(b.r - a.r) > opts.jump_threshold

    ordered = [samples[p] for p in grid]
    for a, b in zip(ordered, ordered[1:]):
        if feature(a, b):
            step = (b.phi - a.phi) / opts.refine_factor
            for k in range(1, opts.refine_factor):
                phi = a.phi + k * step
                samples.setdefault(phi, rg_eval(cfg, phi, opts, engine))
    all_samples = tuple(samples[p] for p in sorted(samples))

    rgmap = RGMap(samples=all_samples, fixed_points=(),
                  endpoint_minus=None, endpoint_plus=None,
                  opts=opts, evaluator=lambda p: rg_eval(cfg, p, opts, engine))
    fps = find_fixed_points(rgmap)
    em, ep = endpoint_analysis(cfg, opts, engine=engine)
    return replace(rgmap, fixed_points=tuple(fps),
                   endpoint_minus=em, endpoint_plus=ep)


def find_fixed_points(rgmap: RGMap) -> list[FixedPoint]:
    """Sign changes of R(phi) - phi bracketed on the grid, refined by bisection.

    Discontinuities of R also produce sign changes; those brackets collapse
    onto a jump where |R - phi| stays large and are discarded by the residual
    check rather than reported as fixed points.
    """
    opts = rgmap.opts
    ev = rgmap.evaluator
    defined = rgmap.defined_samples()
    out: list[FixedPoint] = []

    def slope_at(phi_star: float) -> float:
        h = max(1e-5, 4 * opts.fp_tol)
        sl = ev(max(phi_star - h, -HALF_PI + opts.phi_margin / 2))
        sr = ev(min(phi_star + h, HALF_PI - opts.phi_margin / 2))
        if sl.defined and sr.defined:
            return (sr.r - sl.r) / (sr.phi - sl.phi)
        return math.nan

    def refine(a: RGSample, b: RGSample) -> None:
        fa = a.r - a.phi
        la, lb = a.phi, b.phi
        for _ in range(60):
            if lb - la <= 1e-13:
                break
            mid = 0.5 * (la + lb)
            sm = ev(mid)
            if not sm.defined:     # undefined pocket inside the bracket
                return
            fm = sm.r - mid
            if fm == 0.0:
                la = lb = mid
                break
            if (fm > 0) == (fa > 0):
                la = mid
            else:
                lb = mid
        phi_star = 0.5 * (la + lb)
        s = ev(phi_star)
        if not s.defined or abs(s.r - phi_star) >= opts.fp_tol:
            return
        out.append(FixedPoint(phi=phi_star, g=s.g, slope=slope_at(phi_star)))

    for a, b in zip(defined, defined[1:]):
        fa, fb = a.r - a.phi, b.r - b.phi
        if fa == 0.0:
            out.append(FixedPoint(phi=a.phi, g=a.g, slope=slope_at(a.phi)))
        elif fa * fb < 0:
            refine(a, b)
    # dedupe brackets that collapsed onto the same root
    out.sort(key=lambda f: f.phi)
    deduped: list[FixedPoint] = []
    for f in out:
        if deduped and abs(f.phi - deduped[-1].phi) < 10 * opts.fp_tol:
            continue
        deduped.append(f)
    return deduped


def _fit_endpoint(side: int, samples: list[RGSample], opts: MapOptions
                  ) -> EndpointRecord:
    """Fit the two candidate asymptotics at phi -> side*pi/2 and keep the better.

    Samples are ordered from farthest to closest to the endpoint; residuals
    are relative spreads over the closest samples of the quantities each
    asymptotics says must converge. Set 1: the endpoint gap ratio, the slope
    of R and the (constant) G value all share one limit. Set 2: R converges
    to an interior value and G grows inversely with the endpoint distance, so
    G times that distance converges.
    """
    defined = [s for s in samples if s.defined]
    if len(defined) < 4:
        return EndpointRecord(side=side, set_id=None, g_limit=None, r_limit=None,
                              g_eps_limit=None, r_prime=math.nan,
                              residual=math.inf,
                              detail="too few defined samples near endpoint")
    eps = [HALF_PI - side * s.phi for s in defined]
    gaps = [HALF_PI - side * s.r for s in defined]
    ratios = [gp / ep for gp, ep in zip(gaps, eps)]
    slopes = [(b.r - a.r) / (b.phi - a.phi)
              for a, b in zip(defined, defined[1:])]
    gvals = [s.g for s in defined]
    r_prime = slopes[-1]

    tail = slice(-3, None)
    g_est = sorted(gvals[tail])[1]
    cands1 = ratios[tail] + slopes[-2:] + gvals[tail]
    res1 = max(abs(c - g_est) / max(abs(g_est), 1e-12) for c in cands1) \
        if g_est > 0 else math.inf

    r_est = defined[-1].r
    prods = [g * ep for g, ep in zip(gvals, eps)]
    p_est = prods[-1]
    res2_prod = max(abs(p - p_est) / max(abs(p_est), 1e-12) for p in prods[tail])
    r_scale = max(abs(r_est), 0.05)
    res2_conv = max(abs(defined[-1].r - defined[-2].r),
                    abs(defined[-2].r - defined[-3].r)) / r_scale
    res2 = max(res2_prod, res2_conv)
    if abs(r_est) >= HALF_PI - 10 * opts.phi_margin:
        res2 = math.inf   # interior limit required for this asymptotics

    if res1 <= res2 and res1 <= opts.endpoint_residual_max:
        return EndpointRecord(side=side, set_id=1, g_limit=g_est, r_limit=None,
                              g_eps_limit=None, r_prime=r_prime, residual=res1)
    if res2 < res1 and res2 <= opts.endpoint_residual_max:
        return EndpointRecord(side=side, set_id=2, g_limit=None, r_limit=r_est,
                              g_eps_limit=p_est, r_prime=r_prime, residual=res2)
    return EndpointRecord(side=side, set_id=None, g_limit=None, r_limit=None,
                          g_eps_limit=None, r_prime=r_prime,
                          residual=min(res1, res2),
                          detail=f"residuals {res1:.3g}/{res2:.3g} above "
                                 f"{opts.endpoint_residual_max}")


def endpoint_analysis(cfg: Configuration, opts: MapOptions = MapOptions(), *,
                      engine: HybridEngine | None = None
                      ) -> tuple[EndpointRecord, EndpointRecord]:
    """Classify both endpoints from samples at a shrinking distance sequence."""
    if engine is None:
        engine = HybridEngine(cfg)
    records = []
    for side in (-1, +1):
        samples = [rg_eval(cfg, side * (HALF_PI - e), opts, engine)
                   for e in sorted(opts.endpoint_eps, reverse=True)]
        records.append(_fit_endpoint(side, samples, opts))
    return records[0], records[1]


def build_stable_partition(rgmap: RGMap) -> Partition | None:
    """Construct a safe/transient partition of the impact-angle interval.

    Breakpoints sit at every fixed point plus/minus a small spacing plus the
    residual sign-change points of R - phi; when an endpoint follows the
    interior-limit asymptotics and the adjacent extremal interval overlaps the
    range of R, that interval is cut so iterates cannot re-enter it. Returns
    None unless every interval is safe (G below one throughout) or transient
    (sign-constant displacement and acyclic in the interval graph).
    """
    opts = rgmap.opts
    defined = rgmap.defined_samples()
    if not defined:
        return None
    for rec in (rgmap.endpoint_minus, rgmap.endpoint_plus):
        if rec is not None and rec.set_id == 1 and rec.g_limit is not None \
                and abs(rec.g_limit - 1.0) <= opts.margin:
            return None   # endpoint growth indistinguishable from one

    lo = -HALF_PI
    hi = HALF_PI
    fps = sorted(f.phi for f in rgmap.fixed_points)
    eps = opts.partition_eps_cap
    if len(fps) > 1:
        eps = min(eps, min(b - a for a, b in zip(fps, fps[1:])) / 2.0)
    breaks: set[float] = set()
    for p in fps:
        breaks.add(p - eps)
        breaks.add(p + eps)

    cut_applied = False
    rmin = min(s.r for s in defined)
    rmax = max(s.r for s in defined)
    if rgmap.endpoint_plus is not None and rgmap.endpoint_plus.set_id == 2:
        upper = max(breaks) if breaks else lo
        if rmax > upper:
            breaks.add(rmax + min(0.01, (hi - rmax) / 2))
            cut_applied = True
    if rgmap.endpoint_minus is not None and rgmap.endpoint_minus.set_id == 2:
        lower = min(breaks) if breaks else hi
        if rmin < lower:
            breaks.add(rmin - min(0.01, (rmin - lo) / 2))
            cut_applied = True

    pts = sorted(b for b in breaks if lo < b < hi)
    bounds = [lo] + pts + [hi]
    n_iv = len(bounds) - 1

    def interval_of(phi: float) -> int:
        for k in range(n_iv):
            if bounds[k] <= phi <= bounds[k + 1]:
                return k
        return n_iv - 1

    by_iv: dict[int, list[RGSample]] = {k: [] for k in range(n_iv)}
    for s in defined:
        by_iv[interval_of(s.phi)].append(s)

    edges = set()
    for s in defined:
        j = interval_of(s.phi)
        k = interval_of(s.r)
        if j != k:     # the interval graph has no self-edges
            edges.add((j, k))

    on_cycle = _nodes_on_cycles(n_iv, edges)
    intervals = []
    for k in range(n_iv):
        ss = by_iv[k]
        safe = all(s.g < 1.0 - opts.margin for s in ss)
        signs = {1 if s.r > s.phi else (-1 if s.r < s.phi else 0) for s in ss}
        transient = bool(ss) and 0 not in signs and len(signs) == 1 \
            and k not in on_cycle
        intervals.append(Interval(lo=bounds[k], hi=bounds[k + 1],
                                  safe=safe, transient=transient))
    part = Partition(breakpoints=tuple(pts), intervals=tuple(intervals),
                     edges=frozenset(edges), extremal_cut_applied=cut_applied)
    return part if part.stable else None


def _nodes_on_cycles(n: int, edges: set[tuple[int, int]]) -> set[int]:
    """Nodes lying on some directed cycle (self-edges excluded by construction)."""
    adj: dict[int, set[int]] = {k: set() for k in range(n)}
    for a, b in edges:
        adj[a].add(b)
    reach: dict[int, set[int]] = {}

    def dfs(start):
        seen = set()
        stack = [start]
        while stack:
            u = stack.pop()
            for w in adj[u]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return seen

    for k in range(n):
        reach[k] = dfs(k)
    return {k for k in range(n) if k in reach[k]}


def stability_verdict(cfg: Configuration,
                      opts: MapOptions = MapOptions()) -> StabilityVerdict:
    """Full decision cascade from equilibrium classification through the maps.

    Order: no equilibrium; ambiguity (Thm1, unstable); a fixed point with
    growth above one (Thm2, unstable); then for weakly persistent equilibria
    the stability criteria Thm3 (persistent + global G < 1), Thm5
    (non-decreasing R, fixed-point growth below one) and Thm4a (stable
    partition). Decisive quantities within ``opts.margin`` of their thresholds
    degrade the verdict to Degenerate, with a sensitivity note.
    """
    notes: list[str] = []
    eq0 = classify_equilibrium(cfg, weak_condition2=False)
    if not eq0.is_equilibrium:
        return StabilityVerdict(NO_EQUILIBRIUM, "None", eq0,
                                notes=("SS infeasible at rest",))
    if eq0.is_ambiguous:
        v = UNSTABLE if not eq0.marginal else DEGENERATE
        if eq0.marginal:
            notes.append(f"marginal consistency (margin {eq0.min_margin:.2e})")
        return StabilityVerdict(v, "Thm1-Ambiguity" if v == UNSTABLE else "None",
                                eq0, ambiguity_witness=eq0.ambiguity_witness,
                                notes=tuple(notes))
    if eq0.marginal:
        return StabilityVerdict(DEGENERATE, "None", eq0,
                                notes=(f"marginal consistency "
                                       f"(margin {eq0.min_margin:.2e})",))

    try:
        rgmap = compute_rg_map(cfg, opts)
    except PainleveEncountered as exc:
        return StabilityVerdict(DEGENERATE, "None", eq0,
                                notes=(f"Painleve encountered: {exc}",))
    eq = classify_equilibrium(cfg, rg_evidence=rgmap)
    if not eq.is_painleve_free:
        notes.append("not Painleve-free: some state lacks a unique consistent mode")

    common = dict(equilibrium=eq, fixed_points=rgmap.fixed_points,
                  endpoint_minus=rgmap.endpoint_minus,
                  endpoint_plus=rgmap.endpoint_plus,
                  grid_size=len(rgmap.samples))

    for f in rgmap.fixed_points:
        if abs(f.g - 1.0) <= opts.margin:
            notes.append(f"fixed point at {f.phi:.4f} has growth within margin of 1")
            return StabilityVerdict(DEGENERATE, "None", notes=tuple(notes), **common)
    for f in rgmap.fixed_points:
        if f.g > 1.0 + opts.margin:
            return StabilityVerdict(UNSTABLE, "Thm2-ReverseChatter",
                                    notes=tuple(notes), **common)

    defined = rgmap.defined_samples()
    if not defined:
        notes.append("return map undefined everywhere")
        return StabilityVerdict(INCONCLUSIVE, "None", notes=tuple(notes), **common)

    if not eq.is_weakly_persistent:
        notes.append("not weakly persistent; stability criteria do not apply")
        return StabilityVerdict(INCONCLUSIVE, "None", notes=tuple(notes), **common)

    g_max = max(s.g for s in defined)
    if eq.is_persistent:
        if g_max < 1.0 - opts.margin:
            return StabilityVerdict(STABLE, "Thm3-GlobalG",
                                    notes=tuple(notes), **common)
        if g_max <= 1.0 + opts.margin:
            notes.append(f"max G {g_max:.6f} within margin of 1")

    slope_ok = all((b.r - a.r) >= -opts.margin * (b.phi - a.phi)
                   for a, b in zip(defined, defined[1:]))
    fps_below = all(f.g < 1.0 - opts.margin for f in rgmap.fixed_points)
    if slope_ok and fps_below:
        return StabilityVerdict(STABLE, "Thm5-MonotoneR",
                                notes=tuple(notes), **common)

    partition = build_stable_partition(rgmap)
    if partition is not None:
        return StabilityVerdict(STABLE, "Thm4a-StablePartition",
                                partition=partition, notes=tuple(notes), **common)

    notes.append("no applicable stability or instability criterion")
    return StabilityVerdict(INCONCLUSIVE, "None", notes=tuple(notes), **common)


def rgmap_rows(rgmap: RGMap):
    rows = []
    for s in rgmap.samples:
        flags = []
        if s.ss_exit:
            flags.append("ss_exit")
        if s.zeno_exit:
            flags.append("zeno_exit")
        for sign in sorted(s.slip_double_signs):
            flags.append(f"slip_double{'+' if sign > 0 else '-'}")
        rows.append((s.phi,
                     "" if s.r is None else s.r,
                     "" if s.g is None else s.g,
                     int(s.defined), ";".join(flags)))
    return rows


def write_rgmap_csv(rgmap: RGMap, path):
    import csv
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["phi", "R", "G", "defined", "flags"])
        for row in rgmap_rows(rgmap):
            wr.writerow(row)
