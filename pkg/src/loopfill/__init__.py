"""Finite-resolution filling of same-label loops in classifier decision regions."""

from .boundary import BoundaryCurve, LoopSpec, build_curve, build_loop, curve_eval
from .classifiers import (
    Affine,
    Annulus,
    Ball,
    Constant,
    LShape,
    TinyMLP,
    UnionOfBalls,
    make_suite_classifier,
)
from .coons import CoonsPatch, area_ratio, coons_area, coons_eval, mesh_area
from .filling import FillConfig, SurfaceMesh, fill, fill_anchors
from .geometry import DyadicCoord, GreyCalibration, Quad, canonicalize, grey_distance, make_grey_calibration
from .repair import DEFAULT_REPAIR, STRONG_REPAIR, RepairConfig, repair_vertex

__version__ = "0.1.0"
