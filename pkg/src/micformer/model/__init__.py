from .network import (
    DualStreamState,
    cross_transformer_block,
    dual_stream_features,
    encode,
    micformer_forward,
    seg_head,
    single_stream_forward,
    swin_block,
)
from .params import (
    ParameterStore,
    ParamSpec,
    check_store,
    count_parameters,
    init_params,
    parameter_specs,
)

__all__ = [
    "DualStreamState",
    "ParamSpec",
    "ParameterStore",
    "check_store",
    "count_parameters",
    "cross_transformer_block",
    "dual_stream_features",
    "encode",
    "init_params",
    "micformer_forward",
    "parameter_specs",
    "seg_head",
    "single_stream_forward",
    "swin_block",
]
