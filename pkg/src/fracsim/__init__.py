"""Explicit finite element simulation of brittle fracture on tetrahedral meshes."""

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    DegenerateElementError,
    FracsimError,
    InvalidInputError,
    MaterialError,
    OrientationError,
    ParseError,
    RemeshAbort,
    SceneError,
    SimulationDiverged,
)
from .mesh import PRESETS, Material, TetMesh
from .fracture import FractureEvent, FractureLimits, fracture_pass
from .remesh import SnapThresholds, SplitPlan, split_node
from .collision import CollisionSettings
from .sim import EnergyReport, SimConfig, Simulation, energies, heuristic_dt, stable_dt, step

__all__ = [
    "PRESETS",
    "CollisionSettings",
    "ConfigurationError",
    "DegenerateElementError",
    "EnergyReport",
    "FracsimError",
    "FractureEvent",
    "FractureLimits",
    "InvalidInputError",
    "Material",
    "MaterialError",
    "OrientationError",
    "ParseError",
    "RemeshAbort",
    "SceneError",
    "SimConfig",
    "Simulation",
    "SimulationDiverged",
    "SnapThresholds",
    "SplitPlan",
    "TetMesh",
    "energies",
    "fracture_pass",
    "heuristic_dt",
    "split_node",
    "stable_dt",
    "step",
]
