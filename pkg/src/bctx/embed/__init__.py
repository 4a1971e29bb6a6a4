"""Image embedding backends."""

from .densecnn import DenseCnnConfig, dense_cnn_backward, embed_dense_cnn, init_params
from .texture import TEXTURE_DIM, embed_texture_grid

__all__ = ["DenseCnnConfig", "TEXTURE_DIM", "dense_cnn_backward", "embed_dense_cnn", "embed_texture_grid", "init_params"]
