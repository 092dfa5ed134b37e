"""Plaintext GraphSage with mean aggregation and the quadratic activation.

This is the reference computation the encrypted protocol must match. One
partitioned engine drives both modes:

* vanilla mode — a single block owns every weight row and every edge, which
  reduces to ordinary full-graph GraphSage (used for the isolated and
  combined baselines);
* split mode — two blocks, one per party, each owning a subset of weight
  rows and a subset of edges. Neighbor sums are taken per block over that
  block's edges and normalized by the *total* degree, the count-weighted
  combination the protocol assembles under encryption.

Training is full-batch SGD; the supervised objective is softmax
cross-entropy summed (not averaged) over the training fold, which is what
makes a 1e-5 learning rate move Glorot-scale weights within a ~100 epoch
budget. Dropout applies to hidden activations only, during training only.
"""

import math
import random
import struct
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .polyact import QuadActivation, act, act_deriv, fit_scale_param

CHECKPOINT_MAGIC = b"FEDVGCN-SAGE\x01\x00\x00\x00"

DEFAULT_HIDDEN = 64
DEFAULT_LEARNING_RATE = 1e-5
DEFAULT_DROPOUT = 0.5


class DimensionError(ValueError):
    """Shapes of weights/inputs disagree."""


# --- adjacency ---------------------------------------------------------------


class AdjIndex:
    """Directed index arrays over an undirected edge list."""

    def __init__(self, edges: Sequence[Tuple[int, int]], n_nodes: int):
        self.n_nodes = n_nodes
        if edges:
            e = np.asarray(edges, dtype=np.int64)
            self.src = np.concatenate([e[:, 0], e[:, 1]])
            self.dst = np.concatenate([e[:, 1], e[:, 0]])
        else:
            self.src = np.zeros(0, dtype=np.int64)
            self.dst = np.zeros(0, dtype=np.int64)
        self.degree = np.bincount(self.dst, minlength=n_nodes).astype(np.int64)

    def neighbor_sum(self, h: np.ndarray) -> np.ndarray:
        """Sum of h over each node's neighbors; zero rows for isolated nodes."""
        out = np.zeros((self.n_nodes, h.shape[1]))
        np.add.at(out, self.dst, h[self.src])
        return out

    def neighbor_lists(self) -> List[List[int]]:
        lists: List[List[int]] = [[] for _ in range(self.n_nodes)]
        for s, d in zip(self.src, self.dst):
            lists[d].append(int(s))
        return lists


# --- model -------------------------------------------------------------------


@dataclass
class SageLayer:
    w_self: np.ndarray  # (in_dim, out_dim)
    w_neigh: np.ndarray  # (in_dim, out_dim)

    def __post_init__(self):
        if self.w_self.shape != self.w_neigh.shape:
            raise DimensionError("w_self and w_neigh must share a shape")
        if not (np.all(np.isfinite(self.w_self)) and np.all(np.isfinite(self.w_neigh))):
            raise DimensionError("layer weights must be finite")

    @property
    def in_dim(self) -> int:
        return self.w_self.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w_self.shape[1]


@dataclass
class SageModel:
    layers: List[SageLayer]
    activation: QuadActivation
    dropout_rate: float = DEFAULT_DROPOUT
    learning_rate: float = DEFAULT_LEARNING_RATE

    def __post_init__(self):
        for lower, upper in zip(self.layers, self.layers[1:]):
            if lower.out_dim != upper.in_dim:
                raise DimensionError(
                    f"layer widths disagree: {lower.out_dim} feeds {upper.in_dim}"
                )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_dim

    def copy(self) -> "SageModel":
        return SageModel(
            [SageLayer(l.w_self.copy(), l.w_neigh.copy()) for l in self.layers],
            self.activation,
            self.dropout_rate,
            self.learning_rate,
        )


def glorot_init(
    in_dim: int,
    num_classes: int,
    activation: QuadActivation,
    seed: int,
    hidden: int = DEFAULT_HIDDEN,
    dropout_rate: float = DEFAULT_DROPOUT,
    learning_rate: float = DEFAULT_LEARNING_RATE,
) -> SageModel:
    """Fresh (in, hidden), (hidden, hidden), (hidden, classes) stack."""
    rng = np.random.default_rng(seed)
    dims = [(in_dim, hidden), (hidden, hidden), (hidden, num_classes)]
    layers = []
    for fan_in, fan_out in dims:
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        layers.append(
            SageLayer(
                rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                rng.uniform(-bound, bound, size=(fan_in, fan_out)),
            )
        )
    return SageModel(layers, activation, dropout_rate, learning_rate)


# --- spec-level per-node operations -------------------------------------------


def mean_aggregate(h, node, neighbors) -> np.ndarray:
    """Arithmetic mean of the neighbor vectors; zeros when there are none."""
    h = np.asarray(h, dtype=float)
    if not neighbors:
        return np.zeros(h.shape[1])
    return h[np.asarray(list(neighbors))].mean(axis=0)


def layer_forward(
    layer: SageLayer, activation: QuadActivation, h_self: np.ndarray, h_agg: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """One node through one layer: z = w_self.h_self + w_neigh.h_agg, out = act(z).

    z is returned alongside the activation so callers can split it into
    per-party shares.
    """
    h_self = np.asarray(h_self, dtype=float)
    h_agg = np.asarray(h_agg, dtype=float)
    if h_self.shape != (layer.in_dim,) or h_agg.shape != (layer.in_dim,):
        raise DimensionError(
            f"inputs must have shape ({layer.in_dim},), got {h_self.shape} and {h_agg.shape}"
        )
    z = h_self @ layer.w_self + h_agg @ layer.w_neigh
    return z, act(activation, z)


def _log_sigmoid(x: float) -> float:
    # stable -softplus(-x)
    if x >= 0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


def unsup_loss(z, u, v, negatives) -> float:
    """Graph-based unsupervised loss for one positive pair and Q negatives.

    -log sigmoid(z_u . z_v) - sum over negatives of log sigmoid(-z_u . z_vn)
    """
    z = np.asarray(z, dtype=float)
    loss = -_log_sigmoid(float(z[u] @ z[v]))
    for w in negatives:
        loss -= _log_sigmoid(-float(z[u] @ z[w]))
    return loss


def random_walk_pairs(
    edges: Sequence[Tuple[int, int]], length: int, seed: int, n_nodes: Optional[int] = None
) -> List[Tuple[int, int]]:
    """One fixed-length walk per node; emits (start, visited) for every step.

    Isolated nodes emit nothing. Deterministic per seed.
    """
    if length < 1:
        raise ValueError("walk length must be at least 1")
    if n_nodes is None:
        n_nodes = max((max(e) for e in edges), default=-1) + 1
    adj = AdjIndex(edges, n_nodes).neighbor_lists()
    rng = random.Random(seed)
    pairs = []
    for start in range(n_nodes):
        if not adj[start]:
            continue
        cur = start
        for _ in range(length):
            cur = rng.choice(adj[cur])
            pairs.append((start, cur))
    return pairs


def negative_sampler(degree: np.ndarray, exponent: float = 0.75) -> Callable:
    """Unigram sampler over nodes with probability proportional to degree^exponent."""
    weights = np.maximum(degree.astype(float), 0.0) ** exponent
    total = weights.sum()
    if total <= 0:
        raise ValueError("no positive-degree nodes to sample negatives from")
    probs = weights / total

    def sample(q: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(len(probs), size=q, p=probs)

    return sample


@dataclass(frozen=True)
class WalkConfig:
    walk_length: int = 3
    negatives_q: int = 5
    negative_exponent: float = 0.75

    def __post_init__(self):
        if self.walk_length < 1 or self.negatives_q < 1:
            raise ValueError("walk_length and negatives_q must be >= 1")


def supervised_loss(logits: np.ndarray, label: int) -> Tuple[float, np.ndarray]:
    """Softmax cross-entropy for one node; gradient is softmax - one_hot."""
    logits = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    if not 0 <= label < logits.shape[0]:
        raise ValueError(f"label {label} out of range for {logits.shape[0]} classes")
    shifted = logits - logits.max()
    log_z = math.log(np.exp(shifted).sum())
    loss = log_z - shifted[label]
    grad = np.exp(shifted - log_z)
    grad[label] -= 1.0
    return float(loss), grad


def softmax_xent_batch(
    logits: np.ndarray, labels: np.ndarray, idx: np.ndarray
) -> Tuple[float, np.ndarray]:
    """Summed cross-entropy over the rows in idx; dL/dlogits is zero elsewhere."""
    shifted = logits[idx] - logits[idx].max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(idx))
    loss = float((log_z - shifted[rows, labels[idx]]).sum())
    grad = np.zeros_like(logits)
    sm = np.exp(shifted - log_z[:, None])
    sm[rows, labels[idx]] -= 1.0
    grad[idx] = sm
    return loss, grad


# --- partitioned forward/backward engine --------------------------------------


@dataclass(frozen=True)
class Block:
    """One party's stake in the computation: per-layer weight-row ownership
    (separately for the self and neighbor matrices) plus an edge subset."""

    name: str
    rows_self: List[np.ndarray]
    rows_neigh: List[np.ndarray]
    adj: AdjIndex


@dataclass
class ForwardCache:
    inputs: List[np.ndarray]  # H-tilde fed to each layer (post-dropout)
    preacts: List[np.ndarray]  # Z per layer
    aggregates: List[List[np.ndarray]]  # per layer, per block: F (already /dtot)
    hidden: List[np.ndarray]  # act(Z) for hidden layers (pre-dropout)
    logits: np.ndarray = None


def make_vanilla_blocks(model: SageModel, edges, n_nodes: int) -> List[Block]:
    rows = [np.arange(l.in_dim) for l in model.layers]
    return [Block("full", rows, rows, AdjIndex(edges, n_nodes))]


HIDDEN_NEIGH_SHARE = 4  # passive party owns in_dim // 4 neighbor rows above layer 0


def make_party_blocks(
    model: SageModel, n_feat_a: int, edges_a, edges_b, n_nodes: int
) -> List[Block]:
    """Two-party ownership: layer-0 rows follow feature ownership (A's
    columns first in the model's input ordering). Above layer 0 the input
    is the shared hidden state, so the self matrix belongs entirely to the
    label holder B, while the neighbor matrix splits because each party can
    only aggregate over its own edges; the passive party takes the smaller
    slice since every row it owns rides the encrypted gradient path."""
    in_dim = model.layers[0].in_dim
    if not 0 < n_feat_a < in_dim:
        raise DimensionError("party A must own a proper, non-empty column subset")
    empty = np.arange(0)
    rows_self_a = [np.arange(n_feat_a)]
    rows_self_b = [np.arange(n_feat_a, in_dim)]
    rows_neigh_a = [np.arange(n_feat_a)]
    rows_neigh_b = [np.arange(n_feat_a, in_dim)]
    for layer in model.layers[1:]:
        cut = max(1, layer.in_dim // HIDDEN_NEIGH_SHARE)
        rows_self_a.append(empty)
        rows_self_b.append(np.arange(layer.in_dim))
        rows_neigh_a.append(np.arange(cut))
        rows_neigh_b.append(np.arange(cut, layer.in_dim))
    return [
        Block("A", rows_self_a, rows_neigh_a, AdjIndex(edges_a, n_nodes)),
        Block("B", rows_self_b, rows_neigh_b, AdjIndex(edges_b, n_nodes)),
    ]


def total_degree(blocks: Sequence[Block]) -> np.ndarray:
    deg = np.zeros(blocks[0].adj.n_nodes, dtype=np.int64)
    for b in blocks:
        deg += b.adj.degree
    return deg


def dropout_masks(
    model: SageModel, n_nodes: int, rng: np.random.Generator
) -> Optional[List[np.ndarray]]:
    """Inverted-dropout masks for the hidden layers; None when rate is 0."""
    if model.dropout_rate == 0.0:
        return None
    keep = 1.0 - model.dropout_rate
    return [
        (rng.random((n_nodes, layer.out_dim)) < keep) / keep for layer in model.layers[:-1]
    ]


def engine_forward(
    model: SageModel,
    x: np.ndarray,
    blocks: Sequence[Block],
    masks: Optional[List[np.ndarray]] = None,
) -> ForwardCache:
    """Full-graph forward pass. masks=None means evaluation mode."""
    if x.shape[1] != model.layers[0].in_dim:
        raise DimensionError(
            f"input width {x.shape[1]} != layer-0 width {model.layers[0].in_dim}"
        )
    dtot = total_degree(blocks)
    scale = np.where(dtot > 0, 1.0 / np.maximum(dtot, 1), 0.0)[:, None]
    cache = ForwardCache(inputs=[], preacts=[], aggregates=[], hidden=[])
    h = x
    n_layers = len(model.layers)
    for l, layer in enumerate(model.layers):
        cache.inputs.append(h)
        z = np.zeros((x.shape[0], layer.out_dim))
        aggs = []
        for b in blocks:
            f = b.adj.neighbor_sum(h) * scale
            rs, rn = b.rows_self[l], b.rows_neigh[l]
            z += h[:, rs] @ layer.w_self[rs] + f[:, rn] @ layer.w_neigh[rn]
            aggs.append(f)
        cache.aggregates.append(aggs)
        cache.preacts.append(z)
        if l == n_layers - 1:
            cache.logits = z
        else:
            hidden = act(model.activation, z)
            cache.hidden.append(hidden)
            h = hidden * masks[l] if masks is not None else hidden
    return cache


def engine_backward(
    model: SageModel,
    cache: ForwardCache,
    delta_top: np.ndarray,
    blocks: Sequence[Block],
    masks: Optional[List[np.ndarray]] = None,
    extra_hidden_grad: Optional[np.ndarray] = None,
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Analytic gradients for every w_self/w_neigh, top layer downward.

    delta_top is dL/dZ at the output layer. extra_hidden_grad, when given,
    is an additional dL/dH term at the last hidden layer (auxiliary
    unsupervised objective).
    """
    dtot = total_degree(blocks)
    scale = np.where(dtot > 0, 1.0 / np.maximum(dtot, 1), 0.0)[:, None]
    grads: List[Tuple[np.ndarray, np.ndarray]] = [None] * len(model.layers)
    delta = delta_top
    for l in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[l]
        h_in = cache.inputs[l]
        gw_self = h_in.T @ delta
        gw_neigh = np.zeros_like(layer.w_neigh)
        for b, f in zip(blocks, cache.aggregates[l]):
            rows = b.rows_neigh[l]
            gw_neigh[rows] = f[:, rows].T @ delta
        grads[l] = (gw_self, gw_neigh)
        if l == 0:
            break
        u = delta @ layer.w_self.T
        spread = delta * scale
        for b in blocks:
            rows = b.rows_neigh[l]
            u[:, rows] += b.adj.neighbor_sum(spread) @ layer.w_neigh[rows].T
        if masks is not None:
            u = u * masks[l - 1]
        if extra_hidden_grad is not None and l == len(model.layers) - 1:
            u = u + extra_hidden_grad
        delta = u * act_deriv(model.activation, cache.preacts[l - 1])
    return grads


def backward(
    model: SageModel,
    x: np.ndarray,
    edges,
    labels: np.ndarray,
    batch_idx: np.ndarray,
) -> Tuple[float, List[Tuple[np.ndarray, np.ndarray]]]:
    """Loss and gradients of the supervised objective on one batch (no dropout)."""
    blocks = make_vanilla_blocks(model, edges, x.shape[0])
    cache = engine_forward(model, x, blocks)
    loss, delta = softmax_xent_batch(cache.logits, labels, batch_idx)
    return loss, engine_backward(model, cache, delta, blocks)


def sgd_step(model: SageModel, grads, lr: Optional[float] = None) -> None:
    lr = model.learning_rate if lr is None else lr
    for layer, (g_self, g_neigh) in zip(model.layers, grads):
        layer.w_self -= lr * g_self
        layer.w_neigh -= lr * g_neigh


def accuracy(model: SageModel, x, blocks, labels, idx) -> float:
    logits = engine_forward(model, x, blocks).logits
    return float((logits[idx].argmax(axis=1) == labels[idx]).mean())


# --- unsupervised auxiliary term ----------------------------------------------


def unsup_batch_grad(
    z: np.ndarray,
    pairs: Sequence[Tuple[int, int]],
    negatives: Sequence[np.ndarray],
) -> Tuple[float, np.ndarray]:
    """Summed unsupervised loss and its gradient with respect to z."""
    loss = 0.0
    grad = np.zeros_like(z)
    for (u, v), negs in zip(pairs, negatives):
        s = float(z[u] @ z[v])
        loss -= _log_sigmoid(s)
        coeff = -(1.0 - _sigmoid(s))
        grad[u] += coeff * z[v]
        grad[v] += coeff * z[u]
        for w in negs:
            t = float(z[u] @ z[w])
            loss -= _log_sigmoid(-t)
            c = _sigmoid(t)
            grad[u] += c * z[w]
            grad[w] += c * z[u]
    return loss, grad


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


# --- training driver -----------------------------------------------------------


@dataclass
class TrainResult:
    fold_accuracies: List[float]
    mean_accuracy: float
    models: List[SageModel] = field(default_factory=list)
    losses: List[List[float]] = field(default_factory=list)


def resolve_activation(
    spec, x: np.ndarray, edges, in_dim: int, num_classes: int, seed: int, hidden: int
) -> QuadActivation:
    """Turn an activation spec ('auto' or a number) into a QuadActivation.

    'auto' runs the first layer of a fresh seeded model over the data in
    plaintext and fits the scale to the observed pre-activation range.
    """
    if isinstance(spec, QuadActivation):
        return spec
    if spec != "auto":
        return QuadActivation(float(spec))
    probe = glorot_init(in_dim, num_classes, QuadActivation(1.0), seed, hidden=hidden)
    blocks = make_vanilla_blocks(probe, edges, x.shape[0])
    dtot = total_degree(blocks)
    scale = np.where(dtot > 0, 1.0 / np.maximum(dtot, 1), 0.0)[:, None]
    f = blocks[0].adj.neighbor_sum(x) * scale
    z1 = x @ probe.layers[0].w_self + f @ probe.layers[0].w_neigh
    return fit_scale_param(z1.ravel())


def train_plaintext(
    x: np.ndarray,
    edges,
    labels: np.ndarray,
    num_classes: int,
    folds,
    epochs: int,
    seed: int,
    activation="auto",
    hidden: int = DEFAULT_HIDDEN,
    learning_rate: float = DEFAULT_LEARNING_RATE,
    dropout_rate: float = DEFAULT_DROPOUT,
    unsup_weight: float = 0.0,
    walk_config: Optional[WalkConfig] = None,
) -> TrainResult:
    """Per-fold full-batch SGD; returns per-fold test accuracies and their mean."""
    act_q = resolve_activation(activation, x, edges, x.shape[1], num_classes, seed, hidden)
    fold_accs: List[float] = []
    models: List[SageModel] = []
    losses: List[List[float]] = []
    for fold in folds:
        model = glorot_init(
            x.shape[1],
            num_classes,
            act_q,
            seed + fold.fold_index,
            hidden=hidden,
            dropout_rate=dropout_rate,
            learning_rate=learning_rate,
        )
        blocks = make_vanilla_blocks(model, edges, x.shape[0])
        rng = np.random.default_rng(seed * 977 + fold.fold_index)
        walk = walk_config or WalkConfig()
        fold_losses: List[float] = []
        for epoch in range(epochs):
            masks = dropout_masks(model, x.shape[0], rng)
            cache = engine_forward(model, x, blocks, masks)
            loss, delta = softmax_xent_batch(cache.logits, labels, fold.train_ids)
            extra = None
            if unsup_weight > 0.0:
                pairs = random_walk_pairs(
                    edges, walk.walk_length, seed + epoch, n_nodes=x.shape[0]
                )
                sampler = negative_sampler(blocks[0].adj.degree, walk.negative_exponent)
                negs = [sampler(walk.negatives_q, rng) for _ in pairs]
                z_top = cache.hidden[-1]
                u_loss, u_grad = unsup_batch_grad(z_top, pairs, negs)
                loss += unsup_weight * u_loss
                extra = unsup_weight * u_grad
            grads = engine_backward(model, cache, delta, blocks, masks, extra)
            sgd_step(model, grads)
            fold_losses.append(loss)
        fold_accs.append(accuracy(model, x, blocks, labels, fold.test_ids))
        models.append(model)
        losses.append(fold_losses)
    return TrainResult(fold_accs, float(np.mean(fold_accs)), models, losses)


# --- checkpoints ---------------------------------------------------------------


def save_model(model: SageModel, path: str) -> None:
    """Flat binary checkpoint: magic, layer count, dims, then row-major f64."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(model.layers)))
        for layer in model.layers:
            fh.write(struct.pack("<II", layer.in_dim, layer.out_dim))
        fh.write(
            struct.pack("<ddd", model.activation.a, model.dropout_rate, model.learning_rate)
        )
        for layer in model.layers:
            fh.write(layer.w_self.astype("<f8").tobytes())
            fh.write(layer.w_neigh.astype("<f8").tobytes())


def load_model(path: str) -> SageModel:
    with open(path, "rb") as fh:
        magic = fh.read(16)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint (bad magic)")
        (n_layers,) = struct.unpack("<I", fh.read(4))
        dims = [struct.unpack("<II", fh.read(8)) for _ in range(n_layers)]
        a, dropout_rate, lr = struct.unpack("<ddd", fh.read(24))
        layers = []
        for in_dim, out_dim in dims:
            count = in_dim * out_dim
            w_self = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(in_dim, out_dim)
            w_neigh = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(in_dim, out_dim)
            layers.append(SageLayer(w_self.copy(), w_neigh.copy()))
    return SageModel(layers, QuadActivation(a), dropout_rate, lr)
