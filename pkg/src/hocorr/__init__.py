"""Classical high-order spatial intensity correlations from phase-masked laser arms."""

from hocorr.geometry import (
    BalanceReport,
    DetectorGrid,
    InvalidLayoutError,
    OpticalLayout,
    SourceGrid,
    build_source_grid,
    check_balance_condition,
    default_detector_grids,
)
from hocorr.masks import MaskMode, PhaseMaskSample, RngPolicy, generate_sample, verify_mode

__all__ = [
    "BalanceReport",
    "DetectorGrid",
    "InvalidLayoutError",
    "MaskMode",
    "OpticalLayout",
    "PhaseMaskSample",
    "RngPolicy",
    "SourceGrid",
    "build_source_grid",
    "check_balance_condition",
    "default_detector_grids",
    "generate_sample",
    "verify_mode",
]

__version__ = "0.1.0"
