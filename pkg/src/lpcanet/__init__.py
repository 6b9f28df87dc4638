"""lpcanet: lightweight dual-stream RGB-D rail surface defect segmentation
with a self-contained numpy tensor/autodiff core."""

from .model import LPCANet, ModelConfig, ablation_variant, build_model, count_params_flops, make_config
from .tensor import Tensor, gradcheck, no_grad

__version__ = "0.1.0"

__all__ = [
    "LPCANet",
    "ModelConfig",
    "Tensor",
    "ablation_variant",
    "build_model",
    "count_params_flops",
    "gradcheck",
    "make_config",
    "no_grad",
    "__version__",
]
