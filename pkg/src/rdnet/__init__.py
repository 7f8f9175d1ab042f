"""Residual dense network (RDN) for image restoration in plain numpy."""
from .model import (Ablation, RdnConfig, apply_ablation, count_params, init_params,
                    rdn_backward, rdn_forward, Trace)
from .tensor import ConvWeights

__all__ = ["Ablation", "ConvWeights", "RdnConfig", "Trace", "apply_ablation", "count_params",
           "init_params", "rdn_backward", "rdn_forward"]
__version__ = "0.1.0"
