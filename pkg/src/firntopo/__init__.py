"""Topological features of firn micro-CT slices for depth prediction."""

from .binarize import binarize, distance_transform, otsu_threshold
from .cubical import ESSENTIAL, PersistenceDiagram, betti_at, build_complex, persistence, sublevel_persistence
from .curves import (
    DT_CURVES,
    SUBLEVEL_CURVES,
    CurveConfig,
    FeatureKind,
    FeatureVector,
    betti_curve,
    featurize,
    featurize_dt,
    featurize_sublevel,
    gaussian_curve,
)
from .experiments import Scenario, ScenarioSpec, make_split, run_grid
from .forest import Dataset, ForestConfig, Task, fit, predict
from .image import DEPTHS, GrayImage, gaussian_blur3, load_image, split_quadrants, synth_firn

__version__ = "0.1.0"
