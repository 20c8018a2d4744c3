"""Interpretable-by-approximation toolkit for fully-connected networks."""

from .activations import Activation, parse_activation
from .boundary import BoundaryPiece, Hyperplane, enumerate_boundaries, feasible, grid_boundary_2d, pairwise_plane
from .data import Dataset, filter_classes, load_idx, make_circles, make_moons
from .dnet import DNet, build_dnet, dnet_predict, dnet_state
from .errors import ContractError, FormatError, NumericError, SolverError, StaleCacheError
from .linearize import approximation_gap, linearize_network
from .nn import LossSpec, Network, TrainConfig, backward, cross_entropy, forward, kd_loss, saliency, train
from .pwl import Line, PiecewiseLinearFn, asymptote_lines, build_pwl, sup_error_argmax
from .regions import ActivationPattern, AffineMap, Polytope, RegionExplanation, activation_pattern, explain, \
    region_affine, region_polytope

__version__ = "0.1.0"
