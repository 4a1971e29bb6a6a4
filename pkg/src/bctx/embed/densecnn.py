"""A small densely connected CNN, forward and reverse mode, in numpy.

Layout: 3x3 stem + ReLU, then ``blocks`` dense blocks. Inside a block each
layer is a 3x3 convolution + ReLU over the channel concatenation of the block
input and every earlier layer's output. Blocks are separated (and the network
ends) by a transition: 1x1 convolution halving the channels, then 2x2 average
pooling. The embedding is the global average of the last transition output.

All tensors are (N, C, H, W) float64.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch
from ..image import BytecodeImage, box_downsample


@dataclass(frozen=True)
class DenseCnnConfig:
    input_side: int = 64
    stem_channels: int = 8
    blocks: int = 2
    layers_per_block: int = 3
    growth_rate: int = 4

    def layer_input_channels(self) -> list[list[int]]:
        """Input channel count of every dense layer, per block."""
        out = []
        c = self.stem_channels
        for _ in range(self.blocks):
            out.append([c + l * self.growth_rate for l in range(self.layers_per_block)])
            c = (c + self.layers_per_block * self.growth_rate) // 2
        return out

    @property
    def embedding_dim(self) -> int:
        c = self.stem_channels
        for _ in range(self.blocks):
            c = (c + self.layers_per_block * self.growth_rate) // 2
        return c

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {"stem.w": (self.stem_channels, 3, 3, 3), "stem.b": (self.stem_channels,)}
        c = self.stem_channels
        for b, ins in enumerate(self.layer_input_channels()):
            for l, cin in enumerate(ins):
                shapes[f"block{b}.layer{l}.w"] = (self.growth_rate, cin, 3, 3)
                shapes[f"block{b}.layer{l}.b"] = (self.growth_rate,)
            c_block = c + self.layers_per_block * self.growth_rate
            c = c_block // 2
            shapes[f"trans{b}.w"] = (c, c_block, 1, 1)
            shapes[f"trans{b}.b"] = (c,)
        return shapes

    def to_dict(self) -> dict:
        return asdict(self)


def init_params(config: DenseCnnConfig, seed: int) -> dict[str, np.ndarray]:
    """Glorot-uniform kernels, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in config.param_shapes().items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            k = shape[2] * shape[3]
            limit = np.sqrt(6.0 / (shape[1] * k + shape[0] * k))
            params[name] = rng.uniform(-limit, limit, size=shape)
    return params


def check_params(config: DenseCnnConfig, params: dict) -> None:
    for name, shape in config.param_shapes().items():
        if name not in params:
            raise ShapeMismatch(f"missing parameter {name}")
        if params[name].shape != shape:
            raise ShapeMismatch(f"{name}: expected {shape}, got {params[name].shape}")


# -- primitive layers ---------------------------------------------------------

def _conv3x3(x, w, b):
    n, c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (n, c, h, w, 3, 3)
    cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * wd, c * 9)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return out.reshape(n, h, wd, -1).transpose(0, 3, 1, 2), cols


def _conv3x3_backward(dout, cols, x_shape, w):
    n, c, h, wd = x_shape
    k = w.shape[0]
    dflat = dout.transpose(0, 2, 3, 1).reshape(-1, k)
    dw = (dflat.T @ cols).reshape(w.shape)
    db = dflat.sum(axis=0)
    dcols = (dflat @ w.reshape(k, -1)).reshape(n, h, wd, c, 3, 3)
    dxp = np.zeros((n, c, h + 2, wd + 2))
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + h, j:j + wd] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1], dw, db


def _conv1x1(x, w, b):
    return np.einsum("nchw,kc->nkhw", x, w[:, :, 0, 0]) + b[None, :, None, None]


def _conv1x1_backward(dout, x, w):
    dw = np.einsum("nkhw,nchw->kc", dout, x)[:, :, None, None]
    db = dout.sum(axis=(0, 2, 3))
    dx = np.einsum("nkhw,kc->nchw", dout, w[:, :, 0, 0])
    return dx, dw, db


def _avgpool2(x):
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    return x[:, :, :2 * h2, :2 * w2].reshape(n, c, h2, 2, w2, 2).mean(axis=(3, 5))


def _avgpool2_backward(dout, x_shape):
    n, c, h, w = x_shape
    dx = np.zeros(x_shape)
    h2, w2 = dout.shape[2], dout.shape[3]
    dx[:, :, :2 * h2, :2 * w2] = np.repeat(np.repeat(dout, 2, axis=2), 2, axis=3) / 4.0
    return dx


# -- network ------------------------------------------------------------------

def prepare_input(images, input_side: int) -> np.ndarray:
    """BytecodeImage(s) -> (N, 3, side, side) in [0, 1] via the shared box filter."""
    if isinstance(images, BytecodeImage):
        images = [images]
    out = []
    for im in images:
        px = im.pixels if isinstance(im, BytecodeImage) else np.asarray(im)
        if px.shape[0] != input_side:
            px = box_downsample(px, input_side)
        out.append(np.asarray(px, dtype=np.float64).transpose(2, 0, 1) / 255.0)
    return np.stack(out)


def forward(x: np.ndarray, params: dict, config: DenseCnnConfig, keep_cache: bool = False):
    """Embed a (N, 3, H, W) batch. Returns (N, D) or ((N, D), cache)."""
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeMismatch(f"expected (N, 3, H, W) input, got {x.shape}")
    check_params(config, params)
    cache = {"shapes": []}
    pre, cols = _conv3x3(x, params["stem.w"], params["stem.b"])
    h = np.maximum(pre, 0.0)
    cache["stem"] = (x.shape, cols, pre)
    for b in range(config.blocks):
        feats = [h]
        layers = []
        for l in range(config.layers_per_block):
            inp = np.concatenate(feats, axis=1)
            cache["shapes"].append(inp.shape[1])
            pre, cols = _conv3x3(inp, params[f"block{b}.layer{l}.w"], params[f"block{b}.layer{l}.b"])
            layers.append((inp.shape, cols, pre))
            feats.append(np.maximum(pre, 0.0))
        block_out = np.concatenate(feats, axis=1)
        t = _conv1x1(block_out, params[f"trans{b}.w"], params[f"trans{b}.b"])
        h = _avgpool2(t)
        cache[f"block{b}"] = ([f.shape[1] for f in feats], layers, block_out, t.shape)
    emb = h.mean(axis=(2, 3))
    cache["final"] = h.shape
    return (emb, cache) if keep_cache else emb


def backward(d_emb: np.ndarray, params: dict, config: DenseCnnConfig, cache: dict) -> dict[str, np.ndarray]:
    """Parameter gradients given the upstream gradient on the embedding."""
    n, c, hh, ww = cache["final"]
    if d_emb.shape != (n, c):
        raise ShapeMismatch(f"upstream gradient {d_emb.shape} does not match embedding {(n, c)}")
    grads = {}
    dh = np.broadcast_to(d_emb[:, :, None, None] / (hh * ww), cache["final"]).copy()
    for b in reversed(range(config.blocks)):
        widths, layers, block_out, t_shape = cache[f"block{b}"]
        dt = _avgpool2_backward(dh, t_shape)
        d_block, grads[f"trans{b}.w"], grads[f"trans{b}.b"] = _conv1x1_backward(dt, block_out, params[f"trans{b}.w"])
        bounds = np.cumsum([0] + widths)
        d_feats = [d_block[:, bounds[i]:bounds[i + 1]].copy() for i in range(len(widths))]
        for l in reversed(range(config.layers_per_block)):
            inp_shape, cols, pre = layers[l]
            d_pre = d_feats[l + 1] * (pre > 0)
            d_inp, grads[f"block{b}.layer{l}.w"], grads[f"block{b}.layer{l}.b"] = _conv3x3_backward(
                d_pre, cols, inp_shape, params[f"block{b}.layer{l}.w"])
            for i in range(l + 1):
                d_feats[i] += d_inp[:, bounds[i]:bounds[i + 1]]
        dh = d_feats[0]
    x_shape, cols, pre = cache["stem"]
    _, grads["stem.w"], grads["stem.b"] = _conv3x3_backward(dh * (pre > 0), cols, x_shape, params["stem.w"])
    return grads


def embed_dense_cnn(image: BytecodeImage, params: dict, config: DenseCnnConfig = DenseCnnConfig()) -> np.ndarray:
    return forward(prepare_input(image, config.input_side), params, config)[0]


def dense_cnn_backward(image, params: dict, upstream: np.ndarray,
                       config: DenseCnnConfig = DenseCnnConfig()) -> dict[str, np.ndarray]:
    """Gradients of ``<upstream, embedding>`` with respect to every parameter.

    ``image`` may be a BytecodeImage or an already prepared (3, H, W) or
    (N, 3, H, W) array.
    """
    if isinstance(image, BytecodeImage):
        x = prepare_input(image, config.input_side)
    else:
        x = np.asarray(image, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.ndim == 1:
        upstream = upstream[None]
    _, cache = forward(x, params, config, keep_cache=True)
    return backward(upstream, params, config, cache)

