"""Stereo disparity estimation with correlation cost volumes and two-stage residual refinement."""

__version__ = "0.1.0"

from .errors import ConfigError, ContractError, DimensionError, FadnetError, FormatError, NumericalError
from .network import FADNet, MultiScaleOutput, NetworkConfig, RBNetC, RBNetS, desk_config
from .stereo_ops import CorrelationConfig, CostVolume, patch_correlation, pointwise_correlation, warp_by_disparity
from .tensor import Tensor, backward, no_grad, precision
