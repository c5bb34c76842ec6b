"""Simulation and verification toolkit for stochastic delay equations with
flow conjugation, invariant domains, comparison and random dynamics."""
from .core import (NumericError, OrderFlag, RangeError, Segment, ShapeError, TimeGrid,
                   Trajectory, compare_segments, segment_at, segment_sup_norm)
from .flow import (ClosedFormFlow, DiffusionSpec, DriftSpec, FlowResult, Interpretation,
                   UnsupportedSystemError, flow_evolve, flow_inverse, ito_to_stratonovich,
                   stratonovich_to_ito)
from .noise import BrownianPath, sample_path, standard_normals, wiener_shift, window_grid
from .report import Status, VerificationReport
from .solver import (FlowMode, SddeRun, SolverId, SystemSpec, check_growth_condition,
                     check_semiflow, solve_conjugated, solve_direct)

__version__ = "0.1.0"
