"""Mutual-information analysis of anchor placements for range-based indoor localization."""
from .env import (GeometryError, GridMap, ReferencePlacement, Room, Scene, VisibilityTable,
                  build_grid, l_room, line_of_sight, square_room, validate_placement, visibility)
from .evaluation import (CorrelationReport, PlacementSuite, UndefinedCorrelationError, concordance,
                         consistency_study, convergence_study, generate_suite,
                         metric_correlation_study, pearson)
from .measure import MASK, MeasurementSet, NoiseModel, sample_measurements
from .mi_mc import MiEstimate, exact_mi, mc_mi, mi_map
from .mine import StatisticsNetwork, TrainConfig, fine_tune, train
from .mlat import locate, rmse_map
from .peb import SingularGeometryError, peb_2d, peb_map

__version__ = "0.1.0"
