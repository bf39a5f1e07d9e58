"""Bubble-tree decomposition of degenerating families of conformal immersions
of the sphere, at desk scale."""

__version__ = "0.1.0"

from .bubble_tree import BubbleTree, TreeConfig, decompose_family, validate_tree, verify_quantization
from .concentration import Family, concentration_report, find_neck
from .cut_fill import beltrami_normal_solve, biharmonic_fill, cut_and_fill
from .geom_core import Immersion, energies, identity_sphere, read_imm, write_imm
from .scenarios import ScenarioSpec, generate_scenario
from .sphere_gauge import MobiusMap, normalize_gauge

__all__ = [
    "BubbleTree", "Family", "Immersion", "MobiusMap", "ScenarioSpec", "TreeConfig",
    "beltrami_normal_solve", "biharmonic_fill", "concentration_report", "cut_and_fill",
    "decompose_family", "energies", "find_neck", "generate_scenario", "identity_sphere",
    "normalize_gauge", "read_imm", "validate_tree", "verify_quantization", "write_imm",
]
