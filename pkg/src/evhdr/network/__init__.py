from evhdr.network.deform import DeformConv2d, deform_conv2d
from evhdr.network.model import (
    ABLATIONS,
    PARAM_GROUPS,
    AblationConfig,
    HDRNet,
    ModelConfig,
    NetworkInput,
    count_parameters,
)
from evhdr.network.modules import DRDB, FusionNet, PCDAlign, PyramidEncoder, SpatialAttention

__all__ = [
    "ABLATIONS", "PARAM_GROUPS", "AblationConfig", "DRDB", "DeformConv2d", "FusionNet",
    "HDRNet", "ModelConfig", "NetworkInput", "PCDAlign", "PyramidEncoder",
    "SpatialAttention", "count_parameters", "deform_conv2d",
]
