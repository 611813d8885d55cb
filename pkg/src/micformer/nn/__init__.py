from .attention import (
    AttentionParams,
    WindowSet,
    deform_features,
    deformable_cross_attention,
    predict_offsets,
    relative_position_index,
    w_mca,
    w_msa,
    window_attention,
    window_partition,
    window_reverse,
)
from .ops import (
    ConvKernel3D,
    depthwise_conv3d,
    depthwise_separable_conv3d,
    final_expand,
    identity_lattice,
    layer_norm,
    linear,
    patch_embed,
    patch_expand,
    patch_merge,
    trilinear_sample,
)

__all__ = [
    "AttentionParams",
    "ConvKernel3D",
    "WindowSet",
    "deform_features",
    "deformable_cross_attention",
    "depthwise_conv3d",
    "depthwise_separable_conv3d",
    "final_expand",
    "identity_lattice",
    "layer_norm",
    "linear",
    "patch_embed",
    "patch_expand",
    "patch_merge",
    "predict_offsets",
    "relative_position_index",
    "trilinear_sample",
    "w_mca",
    "w_msa",
    "window_attention",
    "window_partition",
    "window_reverse",
]
