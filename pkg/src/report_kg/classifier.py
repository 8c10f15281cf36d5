"""Classification head: max-pool over encoded nodes, then an MLP.

The pooled graph vector runs through hidden layers of width 512 and 256 with
ELU activations (dropout in training mode) into 14 independent logits, one
per finding label.  Loss is mean per-label binary cross-entropy computed from
the logits.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DataError
from .extract import N_LABELS
from .gat import GatStack, encode_graph, _glorot
from .graph import ReportGraph
from .rng import derive_rng

MLP_DIMS = (512, 256, N_LABELS)


@dataclass
class DenseLayer:
    W: T.Tensor  # (out_dim, in_dim)
    b: T.Tensor  # (1, out_dim)

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return x.matmul(self.W.transpose()) + self.b


@dataclass
class MlpParams:
    layers: list  # DenseLayer; ELU between layers, linear final output

    def parameters(self) -> list:
        out = []
        for i, layer in enumerate(self.layers):
            out.append((f"mlp.{i}.W", layer.W))
            out.append((f"mlp.{i}.b", layer.b))
        return out


@dataclass(frozen=True)
class Prediction:
    logits: np.ndarray  # (14,)
    probabilities: np.ndarray  # sigmoid of logits, elementwise


def init_dense(rng, in_dim: int, out_dim: int) -> DenseLayer:
    return DenseLayer(W=T.Tensor(_glorot(rng, (out_dim, in_dim)), requires_grad=True),
                      b=T.Tensor(np.zeros((1, out_dim)), requires_grad=True))


def init_mlp(input_dim: int, seed: int, dims=MLP_DIMS) -> MlpParams:
    layers = []
    in_dim = input_dim
    for i, out_dim in enumerate(dims):
        layers.append(init_dense(derive_rng(seed, "mlp-init", i), in_dim, out_dim))
        in_dim = out_dim
    return MlpParams(layers=layers)


def mlp_forward(mlp: MlpParams, x: T.Tensor, train: bool = False, rng=None,
                dropout: float = 0.5) -> T.Tensor:
    h = x
    last = len(mlp.layers) - 1
    for i, layer in enumerate(mlp.layers):
        h = layer(h)
        if i < last:
            h = T.dropout(h.elu(), dropout, rng, train)
    return h


def forward_logits(stack: GatStack, mlp: MlpParams, g: ReportGraph,
                   train: bool = False, rng=None) -> T.Tensor:
    if g.n_nodes == 0:
        raise DataError("empty graph: nothing to classify")
    encoded = encode_graph(stack, g, train=train, rng=rng)
    pooled = encoded.max_pool(axis=0, keepdims=True)  # (1, hidden)
    return mlp_forward(mlp, pooled, train=train, rng=rng, dropout=stack.dropout)


def classify_report(stack: GatStack, mlp: MlpParams, g: ReportGraph,
                    train: bool = False, rng=None) -> Prediction:
    logits = forward_logits(stack, mlp, g, train=train, rng=rng)
    row = logits.data[0].copy()
    return Prediction(logits=row, probabilities=_sigmoid(row))


def bce_loss(logits: T.Tensor, labels) -> T.Tensor:
    """Mean binary cross-entropy over the 14 labels, from raw logits."""
    y = np.asarray(labels, dtype=np.float64).reshape(1, -1)
    if y.shape[1] != N_LABELS:
        raise DataError(f"expected {N_LABELS} labels, got {y.shape[1]}")
    return T.bce_with_logits(logits, y)


def count_parameters(stack: GatStack, mlp: MlpParams | None = None) -> int:
    """Total element count over every weight tensor in the model."""
    total = sum(t.size for _, t in stack.parameters())
    if mlp is not None:
        total += sum(t.size for _, t in mlp.parameters())
    return total


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return T._stable_sigmoid(np.asarray(x, dtype=np.float64))
