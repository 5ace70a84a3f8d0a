"""Numerical Calabi-Yau problem on Vaisman manifolds.

Submodules:

* ``exterior``  dense alternating forms, wedge, contraction, complex structures
* ``models``    the diagonal Hopf manifold and a Heisenberg-type nilmanifold, with identity checks
* ``leafspace`` spectral grids on the leaf spaces (sphere, flat torus) and transversal operators
* ``solver``    damped Newton for the transversal Monge-Ampere equation
* ``pipeline``  volume form -> potential -> Vaisman metric, with verification
* ``cli``       ``vaisman-cy`` command line
"""
from .exterior import AlternatingForm, LinearComplexStructure, MetricTensor, Vector, wedge, interior
from .leafspace import BasicField, SphereGrid, TorusGrid
from .models import HopfModel, NilmanifoldModel, make_model
from .pipeline import VolumeSpec, run_pipeline
from .solver import SolverConfig, solve_transversal_ma

__version__ = "0.1.0"

__all__ = [
    "AlternatingForm", "LinearComplexStructure", "MetricTensor", "Vector", "wedge", "interior",
    "BasicField", "SphereGrid", "TorusGrid", "HopfModel", "NilmanifoldModel", "make_model",
    "VolumeSpec", "run_pipeline", "SolverConfig", "solve_transversal_ma",
]
