"""Composite geometry of the variable-structure test biped.

The biped is an elongated beam carrying two slender legs (feet at the bottom)
and two heavy cylindrical weights; legs and weights mount on a row of equally
spaced holes, so moving a weight shifts the center of mass along the beam and
changing the leg length shifts it normal to the support line. Total mass,
center of mass and radius of gyration follow from parallel-axis composition
of the parts: the beam and legs as uniform rods, the weights as discs with
their own gyration radius.

Coordinates: the contact line is y = 0 with +x downhill; the beam axis sits
at height ``leg_length``; part positions are x-offsets along the beam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .model import DEFAULT_GRAVITY, Configuration


@dataclass(frozen=True)
class BipedSpec:
    """Part masses and mounting positions (SI units)."""

    beam_mass: float = 0.124
    beam_length: float = 0.40
    beam_center: float = 0.030        # x of beam midpoint
    leg_mass: float = 0.040
    leg_length: float = 0.110         # feet-to-beam distance
    leg1_pos: float = 0.0             # upper (taped, lower-friction) foot
    leg2_pos: float = 0.060
    cyl_mass: float = 0.195
    cyl1_pos: float = -0.085          # fixed weight
    cyl2_pos: float = 0.020           # movable weight
    cyl_height: float = 0.048         # weight center above the beam axis
    cyl_gyradius: float = 0.014       # disc gyration radius (r/sqrt(2))
    mu1: float = 0.315
    mu2: float = 1.0
    alpha: float = math.radians(25.0)
    g: float = DEFAULT_GRAVITY

    def __post_init__(self):
        for name in ("beam_mass", "leg_mass", "cyl_mass", "beam_length",
                     "leg_length"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not self.leg1_pos < self.leg2_pos:
            raise ValueError("leg 1 must sit uphill of leg 2")

    def with_cyl2(self, pos: float) -> "BipedSpec":
        return replace(self, cyl2_pos=pos)

    def with_leg_length(self, length: float) -> "BipedSpec":
        return replace(self, leg_length=length)


def _parts(spec: BipedSpec):
    """(mass, x, y, own gyration radius squared) for each rigid part."""
    yb = spec.leg_length
    return [
        (spec.beam_mass, spec.beam_center, yb, spec.beam_length ** 2 / 12.0),
        (spec.leg_mass, spec.leg1_pos, yb / 2.0, spec.leg_length ** 2 / 12.0),
        (spec.leg_mass, spec.leg2_pos, yb / 2.0, spec.leg_length ** 2 / 12.0),
        (spec.cyl_mass, spec.cyl1_pos, yb + spec.cyl_height, spec.cyl_gyradius ** 2),
        (spec.cyl_mass, spec.cyl2_pos, yb + spec.cyl_height, spec.cyl_gyradius ** 2),
    ]


def com_and_gyration(spec: BipedSpec) -> tuple[float, float, float, float]:
    """Total mass, CoM (x_c, z_c) over the contact line, and gyration radius."""
    parts = _parts(spec)
    m = sum(p[0] for p in parts)
    xc = sum(p[0] * p[1] for p in parts) / m
    zc = sum(p[0] * p[2] for p in parts) / m
    inertia = sum(mk * (rk2 + (xk - xc) ** 2 + (yk - zc) ** 2)
                  for mk, xk, yk, rk2 in parts)
    return m, xc, zc, math.sqrt(inertia / m)


def biped_to_configuration(spec: BipedSpec) -> Configuration:
    """Derived two-contact model: feet are the contact points, normals upright."""
    m, xc, zc, rho = com_and_gyration(spec)
    return Configuration.on_slope(m=m, rho=rho, h=zc,
                                  l1=spec.leg1_pos - xc, l2=spec.leg2_pos - xc,
                                  mu1=spec.mu1, mu2=spec.mu2,
                                  alpha=spec.alpha, g=spec.g)
