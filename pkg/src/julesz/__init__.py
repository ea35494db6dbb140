"""Julesz-ensemble texture and stylization generator training.

A self-contained CPU implementation: a reverse-mode autodiff tensor core,
convolution and normalization layers, Gram-matrix texture statistics over a
seeded filter bank, a nearest-neighbor entropy term for sample diversity,
SGD trainers, and a CLI.
"""

__version__ = "0.1.0"

from .config import TrainConfig
from .tensor import Tensor, grad_check
from .layers import (LayerParams, batch_norm, conv2d, conv_transpose2d,
                     instance_norm, linear, scale_bias)
from .loss import (DiversityStats, FilterBank, StyleTarget, content_loss,
                   entropy_estimate, filter_responses, gram, julesz_objective,
                   nn_distances, style_loss, style_target, stylization_objective)
from .generators import (ArchDescriptor, GeneratorParams, build_stylizer,
                         build_texture_net, forward_stylized, forward_texture,
                         load_params, save_params)
from .trainer import (TrainReport, diversity_metric, optimize_direct, sgd_step,
                      train_stylizer, train_texture)

__all__ = [
    "ArchDescriptor", "DiversityStats", "FilterBank", "GeneratorParams",
    "LayerParams", "StyleTarget", "Tensor", "TrainConfig", "TrainReport",
    "batch_norm", "build_stylizer", "build_texture_net", "content_loss",
    "conv2d", "conv_transpose2d", "diversity_metric", "entropy_estimate",
    "filter_responses", "forward_stylized", "forward_texture", "grad_check",
    "gram", "instance_norm", "julesz_objective", "linear", "load_params",
    "nn_distances", "optimize_direct", "save_params", "scale_bias", "sgd_step",
    "style_loss", "style_target", "stylization_objective", "train_stylizer",
    "train_texture",
]
