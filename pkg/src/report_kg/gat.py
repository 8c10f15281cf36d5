"""Stacked graph-attention layers.

Each layer projects node features with W, scores every neighbour pair q of p
as LeakyReLU(w_att . [W h_p || W h_q]), normalises the scores with a masked
softmax over the neighbourhood (self-loops always included), and aggregates
h'_p = ELU(sum_q alpha_pq W h_q).  Dropout is applied to layer outputs in
training mode.  One attention head per layer; the first layer maps the
embedding dimension to the hidden size, all later layers are hidden->hidden.

Forward reductions over the node axis are permutation-stable, so encoding a
re-indexed graph yields exactly the re-indexed encoding.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .graph import ReportGraph
from .rng import derive_rng

DEFAULT_LEAKY_SLOPE = 0.2
DEFAULT_DROPOUT = 0.5


@dataclass
class GatLayerParams:
    W: T.Tensor  # (out_dim, in_dim)
    W_att: T.Tensor  # (2 * out_dim, 1)
    leaky_slope: float = DEFAULT_LEAKY_SLOPE

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]


@dataclass
class GatStack:
    layers: list
    dropout: float = DEFAULT_DROPOUT

    @property
    def hidden(self) -> int:
        return self.layers[-1].out_dim

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def parameters(self) -> list:
        out = []
        for i, layer in enumerate(self.layers):
            out.append((f"gat.{i}.W", layer.W))
            out.append((f"gat.{i}.W_att", layer.W_att))
        return out


def _glorot(rng, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def init_gat_stack(n_layers: int, input_dim: int, hidden: int, seed: int,
                   dropout: float = DEFAULT_DROPOUT,
                   leaky_slope: float = DEFAULT_LEAKY_SLOPE) -> GatStack:
    if n_layers < 1:
        raise ValueError("need at least one layer")
    layers = []
    for i in range(n_layers):
        in_dim = input_dim if i == 0 else hidden
        rng = derive_rng(seed, "gat-init", i)
        layers.append(GatLayerParams(
            W=T.Tensor(_glorot(rng, (hidden, in_dim)), requires_grad=True),
            W_att=T.Tensor(_glorot(rng, (2 * hidden, 1)), requires_grad=True),
            leaky_slope=leaky_slope))
    return GatStack(layers=layers, dropout=dropout)


def _neighbourhood_mask(adjacency: np.ndarray) -> np.ndarray:
    mask = np.asarray(adjacency, dtype=bool).copy()
    if mask.shape[0] != mask.shape[1]:
        raise ValueError("adjacency must be square")
    np.fill_diagonal(mask, True)  # mandatory self-loops
    return mask


def _attention(layer: GatLayerParams, wh: T.Tensor, mask: np.ndarray) -> T.Tensor:
    n = wh.shape[0]
    fp = layer.out_dim
    a_src = layer.W_att.slice_rows(0, fp)  # (fp, 1)
    a_dst = layer.W_att.slice_rows(fp, 2 * fp)
    s_src = wh.matmul(a_src)  # (n, 1)
    s_dst = wh.matmul(a_dst)
    ones_row = T.Tensor(np.ones((1, n)))
    ones_col = T.Tensor(np.ones((n, 1)))
    logits = s_src.matmul(ones_row) + ones_col.matmul(s_dst.transpose())
    return T.softmax(logits.leaky_relu(layer.leaky_slope), axis=1, mask=mask)


def attention_scores(layer: GatLayerParams, features, adjacency) -> T.Tensor:
    """Normalised attention matrix; non-neighbour entries are exactly zero."""
    feats = features if isinstance(features, T.Tensor) else T.Tensor(features)
    mask = _neighbourhood_mask(adjacency)
    wh = feats.matmul(layer.W.transpose())
    return _attention(layer, wh, mask)


def gat_layer_forward(layer: GatLayerParams, features, adjacency,
                      train: bool = False, rng=None,
                      dropout: float = DEFAULT_DROPOUT) -> T.Tensor:
    feats = features if isinstance(features, T.Tensor) else T.Tensor(features)
    mask = _neighbourhood_mask(adjacency)
    wh = feats.matmul(layer.W.transpose())
    alpha = _attention(layer, wh, mask)
    out = T.mix_rows(alpha, wh).elu()
    return T.dropout(out, dropout, rng, train)


def encode(stack: GatStack, features, adjacency, train: bool = False,
           rng=None) -> T.Tensor:
    h = features if isinstance(features, T.Tensor) else T.Tensor(features)
    for layer in stack.layers:
        h = gat_layer_forward(layer, h, adjacency, train=train, rng=rng,
                              dropout=stack.dropout)
    return h


def encode_graph(stack: GatStack, g: ReportGraph, train: bool = False,
                 rng=None) -> T.Tensor:
    """Encoded node representations, one row per graph node."""
    return encode(stack, g.features, g.adjacency(), train=train, rng=rng)
