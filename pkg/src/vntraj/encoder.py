"""Hierarchical polyline encoder.

Node-level message passing within each polyline (max aggregation, MLP
messages, concatenation update), max-pool readout per polyline, then one
multi-head graph-transformer convolution over all polylines of a scene.

Batches are flattened: the nodes of every polyline of every scene are rows of
one matrix, and each polyline occupies a contiguous block of rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from vntraj.core import tensor as T
from vntraj.core.layers import MLP, LayerNorm, Linear
from vntraj.core.params import ParamStore
from vntraj.vectorize import NODE_DIM, VectorizedScene


@dataclass(frozen=True)
class EncoderConfig:
    mp_layers: int = 3
    mp_hidden: int = 64
    attn_heads: int = 2
    attn_head_dim: int = 64
    head_combine: str = "average"

    def __post_init__(self):
        if min(self.mp_layers, self.mp_hidden, self.attn_heads, self.attn_head_dim) <= 0:
            raise ValueError("encoder dimensions must be positive")
        if self.head_combine != "average":
            raise ValueError("only head averaging is supported")

    @property
    def embed_dim(self) -> int:
        return self.attn_head_dim


@dataclass(frozen=True)
class Partition:
    """Polyline membership of flattened node rows.

    ``pair_i``/``pair_j`` enumerate (node, neighbor) pairs.  Pairs are grouped
    by neighborhood size so that the neighborhoods of equal size form one
    contiguous block; ``groups`` holds ``(start, count, length, nodes)`` for
    each block.  A single-node polyline gets the self pair ``(i, i)``.
    """

    node_starts: np.ndarray
    pair_i: np.ndarray
    pair_j: np.ndarray
    groups: tuple[tuple[int, int, int, np.ndarray], ...]
    num_nodes: int

    @property
    def num_polylines(self) -> int:
        return len(self.node_starts)

    @classmethod
    def from_sizes(cls, sizes: Sequence[int]) -> "Partition":
        sizes = np.asarray(sizes, dtype=np.int64)
        if len(sizes) == 0 or np.any(sizes < 1):
            raise ValueError("every polyline needs at least one node")
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        pi, pj, groups = [], [], []
        pos = 0
        for n in np.unique(sizes):
            offs = starts[sizes == n]
            if n == 1:
                pi.append(offs)
                pj.append(offs)
                groups.append((pos, len(offs), 1, offs))
                pos += len(offs)
                continue
            ii, jj = np.divmod(np.arange(n * n), n)
            keep = ii != jj
            ii, jj = ii[keep], jj[keep]
            pi.append((offs[:, None] + ii).ravel())
            pj.append((offs[:, None] + jj).ravel())
            nodes = (offs[:, None] + np.arange(n)).ravel()
            groups.append((pos, len(nodes), int(n - 1), nodes))
            pos += len(nodes) * int(n - 1)
        return cls(starts, np.concatenate(pi), np.concatenate(pj), tuple(groups), int(sizes.sum()))


@dataclass(frozen=True)
class GraphBatch:
    scene_ids: tuple[str, ...]
    x: np.ndarray
    partition: Partition
    poly_index: np.ndarray
    poly_mask: np.ndarray
    target_slots: np.ndarray

    @property
    def batch_size(self) -> int:
        return len(self.scene_ids)


def build_batch(scenes: Sequence[VectorizedScene]) -> GraphBatch:
    rows, sizes = [], []
    n_poly = [len(vs.subgraphs) for vs in scenes]
    width = max(n_poly)
    poly_index = np.zeros((len(scenes), width), dtype=np.int64)
    poly_mask = np.zeros((len(scenes), width), dtype=bool)
    offset = 0
    for b, vs in enumerate(scenes):
        for sg in vs.subgraphs:
            rows.append(sg.node_matrix())
            sizes.append(sg.num_nodes)
        poly_index[b, :n_poly[b]] = np.arange(offset, offset + n_poly[b])
        poly_mask[b, :n_poly[b]] = True
        offset += n_poly[b]
    x = np.vstack(rows) if rows else np.zeros((0, NODE_DIM))
    targets = np.array([vs.target_index for vs in scenes], dtype=np.int64)
    return GraphBatch(tuple(vs.scene_id for vs in scenes), x, Partition.from_sizes(sizes),
                      poly_index, poly_mask, targets)


# ---------------------------------------------------------------- layers

NodeFn = Callable[[T.Tensor], T.Tensor]
MessageFn = Callable[[T.Tensor, np.ndarray, np.ndarray], T.Tensor]


def subgraph_layer(h, partition: Partition, node_fn: NodeFn, message_fn: MessageFn) -> T.Tensor:
    """One message-passing step: ``node_fn(h_i) | max_j message_fn(h_i, h_j)``."""
    messages = message_fn(h, partition.pair_i, partition.pair_j)
    agg = T.grouped_segment_max(messages, partition.groups, partition.num_nodes)
    return T.concat([node_fn(h), agg], axis=-1)


def polyline_readout(h, partition: Partition) -> T.Tensor:
    return T.maxpool_rows(h, partition.node_starts)


class MessageMLP:
    """MLP over ``h_i | h_j``.

    The first linear layer is split into self and neighbor halves so it runs
    per node instead of per pair; the result equals the concatenated form.
    """

    def __init__(self, store: ParamStore, name: str, fan_in: int, hidden: int, rng: np.random.Generator):
        full = store.glorot(f"{name}.fc1.weight", (2 * fan_in, hidden), rng)
        self.fc1_weight = full
        self.fan_in = fan_in
        self.fc1_bias = store.zeros(f"{name}.fc1.bias", (hidden,))
        self.norm = LayerNorm(store, f"{name}.norm", hidden)
        self.fc2 = Linear(store, f"{name}.fc2", hidden, hidden, rng)

    def __call__(self, h, pair_i: np.ndarray, pair_j: np.ndarray) -> T.Tensor:
        w_self = T.index(self.fc1_weight, slice(0, self.fan_in))
        w_nbr = T.index(self.fc1_weight, slice(self.fan_in, 2 * self.fan_in))
        a = T.matmul(h, w_self)
        b = T.matmul(h, w_nbr) + self.fc1_bias
        return T.pair_mlp(a, b, pair_i, pair_j, self.norm.gamma, self.norm.beta,
                          self.fc2.weight, self.fc2.bias)

    def unfused(self, h, pair_i: np.ndarray, pair_j: np.ndarray) -> T.Tensor:
        """Same messages through the literal concatenation ``MLP(h_i | h_j)``."""
        z = T.concat([T.gather_rows(h, pair_i), T.gather_rows(h, pair_j)], axis=-1)
        z = T.matmul(z, self.fc1_weight) + self.fc1_bias
        return self.fc2(T.relu(self.norm(z)))


class SubgraphLayer:
    def __init__(self, store: ParamStore, name: str, fan_in: int, hidden: int, rng: np.random.Generator):
        self.node = MLP(store, f"{name}.node", fan_in, hidden, hidden, rng)
        self.message = MessageMLP(store, f"{name}.msg", fan_in, hidden, rng)

    def __call__(self, h, partition: Partition) -> T.Tensor:
        return subgraph_layer(h, partition, self.node, self.message)


class GlobalAttention:
    """Graph-transformer convolution over a fully connected polyline graph.

    Per head: ``d'_k = W1 d_k + sum_l softmax_l((W3 d_k)^T (W4 d_l) / sqrt(dh)) W2 d_l``;
    heads are averaged.
    """

    def __init__(self, store: ParamStore, name: str, fan_in: int, heads: int, head_dim: int,
                 rng: np.random.Generator):
        self.heads, self.head_dim = heads, head_dim
        self.w = [store.glorot(f"{name}.w{m}", (heads, fan_in, head_dim), rng) for m in (1, 2, 3, 4)]

    def attention_weights(self, d, mask: np.ndarray | None = None) -> T.Tensor:
        d4 = T.reshape(d, (d.shape[0], 1, d.shape[1], d.shape[2]))
        q = T.matmul(d4, self.w[2])
        k = T.matmul(d4, self.w[3])
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(self.head_dim))
        keep = None if mask is None else mask[:, None, None, :]
        return T.softmax_rows(scores, keep)

    def __call__(self, d, mask: np.ndarray | None = None) -> T.Tensor:
        """``d``: (B, P, fan_in) padded polyline matrix; ``mask``: (B, P), True = real."""
        d = T.as_tensor(d)
        d4 = T.reshape(d, (d.shape[0], 1, d.shape[1], d.shape[2]))
        alpha = self.attention_weights(d, mask)
        out = T.matmul(d4, self.w[0]) + T.matmul(alpha, T.matmul(d4, self.w[1]))
        return T.mean(out, axis=1)


@dataclass(frozen=True)
class SceneEmbedding:
    polyline_embeddings: np.ndarray
    target_embedding: np.ndarray

    @property
    def dim(self) -> int:
        return self.polyline_embeddings.shape[1]


class Encoder:
    """Input projection -> message-passing layers -> readout -> global attention."""

    def __init__(self, store: ParamStore, cfg: EncoderConfig, rng: np.random.Generator, name: str = "encoder"):
        self.cfg = cfg
        H = cfg.mp_hidden
        self.input_proj = Linear(store, f"{name}.input", NODE_DIM, H, rng)
        self.layers = [SubgraphLayer(store, f"{name}.mp{i}", H if i == 0 else 2 * H, H, rng)
                       for i in range(cfg.mp_layers)]
        self.attention = GlobalAttention(store, f"{name}.attn", 2 * H, cfg.attn_heads, cfg.attn_head_dim, rng)

    def polylines(self, batch: GraphBatch) -> T.Tensor:
        """Padded per-polyline vectors before global attention, (B, P, 2H)."""
        h = self.input_proj(T.Tensor(batch.x))
        for layer in self.layers:
            h = layer(h, batch.partition)
        d = polyline_readout(h, batch.partition)
        B, P = batch.poly_index.shape
        return T.reshape(T.gather_rows(d, batch.poly_index.reshape(-1)), (B, P, d.shape[1]))

    def __call__(self, batch: GraphBatch) -> T.Tensor:
        """Polyline embeddings after global attention, (B, P, D)."""
        return self.attention(self.polylines(batch), batch.poly_mask)

    def target_rows(self, emb: T.Tensor, batch: GraphBatch) -> T.Tensor:
        return T.index(emb, (np.arange(batch.batch_size), batch.target_slots))

    def embed(self, scenes: Sequence[VectorizedScene]) -> list[SceneEmbedding]:
        batch = build_batch(scenes)
        emb = self(batch).data
        return [SceneEmbedding(emb[b, batch.poly_mask[b]].copy(), emb[b, batch.target_slots[b]].copy())
                for b in range(batch.batch_size)]


def encode(vs: VectorizedScene, encoder: Encoder) -> SceneEmbedding:
    return encoder.embed([vs])[0]
