"""Sparse domination experiments for Calderón–Zygmund operators on finite
atomic measures of power growth."""
from .geometry import DyadicCube, GridFamily, make_grids, pair_metrics, cube_family
from .measure import MeasureModel, density, extend, carve_subset
from .haar import haar, modified_haar, analyze, project, telescope, plancherel
from .kernel import KernelSpec, TruncationSpec, Operator
from .sparse import StoppingConfig, build_family, packing_check, sparse_form, cz_decompose
from .fixtures import build_measure, fixture_measure

__version__ = "0.1.0"
