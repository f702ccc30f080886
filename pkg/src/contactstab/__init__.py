"""Stability of a planar rigid body on two unilateral frictional contacts.

Event-driven hybrid simulation under the zero-order (reference-state)
dynamics, inelastic frictional impact resolution, and algorithmic
classification of two-contact frictional equilibria via the reduced return
map R(phi) and growth map G(phi).
"""

from .model import (ALL_MODES, Configuration, ContactState, DegenerateGeometry,
                    ModeSolution, SingularMode, ZodTableau, build_tableau,
                    delta_metric, mode_dynamics)
from .consistency import (EquilibriumClass, QualitativeState, admissible_modes,
                          classify_equilibrium, consistent_modes)
from .impact import ImpactOutcome, NoConsistentImpact, energy_balance, resolve_impact
from .simulator import (FtlsMetrics, SimOptions, Trajectory, detect_zeno,
                        metrics, simulate)
from .poincare import (MapOptions, Partition, RGMap, RGSample, StabilityVerdict,
                       build_stable_partition, compute_rg_map, endpoint_analysis,
                       find_fixed_points, rg_eval, stability_verdict)
from .biped import BipedSpec, biped_to_configuration

__version__ = "0.1.0"

__all__ = [
    "ALL_MODES", "Configuration", "ContactState", "DegenerateGeometry",
    "ModeSolution", "SingularMode", "ZodTableau", "build_tableau",
    "delta_metric", "mode_dynamics",
    "EquilibriumClass", "QualitativeState", "admissible_modes",
    "classify_equilibrium", "consistent_modes",
    "ImpactOutcome", "NoConsistentImpact", "energy_balance", "resolve_impact",
    "FtlsMetrics", "SimOptions", "Trajectory", "detect_zeno", "metrics",
    "simulate",
    "MapOptions", "Partition", "RGMap", "RGSample", "StabilityVerdict",
    "build_stable_partition", "compute_rg_map", "endpoint_analysis",
    "find_fixed_points", "rg_eval", "stability_verdict",
    "BipedSpec", "biped_to_configuration",
]
