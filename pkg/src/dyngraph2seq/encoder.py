"""Dynamic graph encoder: bidirectional k-hop convolution, pooling, recurrent pass.

All functions accept arbitrary leading batch axes, so one code path serves a
single snapshot, one user's sequence, and a padded batch of users.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import DimensionError, Tensor
from .model import Batch, EncoderConfig, ModelConfig, neighbour_means


@dataclass
class EncoderTrace:
    """Encoder activations for a batch; attention fields are None when disabled."""

    graph_embeddings: Tensor  # (B, T, 2d)
    hiddens: Tensor  # (B, T, d_enc)
    final_cell: Tensor  # (B, d_enc)
    step_mask: np.ndarray  # (B, T)
    node_embeddings: Tensor | None = None  # (B, T, N, 2d)
    node_attention: Tensor | None = None  # (B, T, N)

    def for_sample(self, b):
        """Numpy views of sample ``b`` trimmed to its true length."""
        T = int(self.step_mask[b].sum())
        out = {
            "graph_embeddings": self.graph_embeddings.data[b, :T],
            "hiddens": self.hiddens.data[b, :T],
            "final_cell": self.final_cell.data[b],
        }
        if self.node_embeddings is not None:
            out["node_embeddings"] = self.node_embeddings.data[b, :T]
        if self.node_attention is not None:
            out["node_attention"] = self.node_attention.data[b, :T]
        return out


def convolve(features, fwd_mean, bwd_mean, store, config: EncoderConfig) -> Tensor:
    """k hops of forward/backward neighbour-mean aggregation with ReLU.

    ``features`` is (..., N, D); the neighbour matrices are (..., N, N).
    Each hop maps node inputs through a per-direction affine layer and ReLU,
    averages over that direction's neighbours, and concatenates both halves.
    """
    x = dc.as_tensor(features)
    if x.shape[-1] != config.in_features:
        raise DimensionError(
            f"node features have width {x.shape[-1]}, encoder expects {config.in_features}")
    for k in range(1, config.hops + 1):
        halves = []
        for direction, mean in (("fwd", fwd_mean), ("bwd", bwd_mean)):
            z = dc.relu(x @ store[f"enc.hop{k}.{direction}.W"] + store[f"enc.hop{k}.{direction}.b"])
            halves.append(dc.matmul(mean, z))
        x = dc.concat(halves, axis=-1)
    return x


def encode_snapshot(snapshot, store, config: EncoderConfig) -> Tensor:
    """Node embeddings (N, 2d) of one snapshot graph."""
    A = np.asarray(snapshot.adjacency, dtype=np.float64)
    F = np.asarray(snapshot.node_features, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or F.shape[0] != A.shape[0]:
        raise DimensionError(f"adjacency {list(A.shape)} does not match features {list(F.shape)}")
    fwd, bwd = neighbour_means(A)
    return convolve(F, fwd, bwd, store, config)


def pool_max(h, store) -> Tensor:
    """Element-wise max over nodes of the projected node embeddings."""
    h = dc.as_tensor(h)
    if h.shape[-2] == 0:
        raise DimensionError("pool_max over zero nodes")
    return dc.max(h @ store["pool.W"] + store["pool.b"], axis=-2)


def node_scores(h, store) -> Tensor:
    e = dc.tanh(h @ store["pool.W1"] + store["pool.b1"]) @ store["pool.w2"]
    return e.reshape(e.shape[:-1])


def pool_attention(h, store):
    """Feed-forward attention over nodes; returns ``(g, alpha)``."""
    h = dc.as_tensor(h)
    if h.shape[-2] == 0:
        raise DimensionError("pool_attention over zero nodes")
    alpha = dc.softmax(node_scores(h, store), axis=-1)
    lead = alpha.shape[:-1]
    g = dc.matmul(alpha.reshape(lead + (1, alpha.shape[-1])), h)
    return g.reshape(lead + (h.shape[-1],)), alpha


def encode_sequence(g, store, step_mask=None):
    """Run the encoder LSTM over graph embeddings ``g`` (B, T, d_in).

    Returns ``(o, C_T)`` with ``o`` (B, T, d_enc).  Where ``step_mask`` is
    False the state is carried unchanged, so padding never alters ``C_T``.
    Unbatched input (T, d_in) is accepted and returns unbatched results.
    """
    g = dc.as_tensor(g)
    unbatched = g.ndim == 2
    if unbatched:
        g = g.reshape((1,) + g.shape)
        step_mask = None if step_mask is None else np.asarray(step_mask)[None]
    B, T = g.shape[:2]
    if T == 0:
        raise DimensionError("encode_sequence needs T >= 1")
    H = store["enc.lstm.Wh"].shape[0]
    h = Tensor(np.zeros((B, H)))
    c = Tensor(np.zeros((B, H)))
    Wx, Wh, b = store["enc.lstm.Wx"], store["enc.lstm.Wh"], store["enc.lstm.b"]
    outs = []
    for t in range(T):
        h_new, c_new = dc.recurrent_cell(g[:, t], h, c, Wx, Wh, b)
        if step_mask is None or step_mask[:, t].all():
            h, c = h_new, c_new
        else:
            keep = step_mask[:, t][:, None]
            h, c = dc.where(keep, h_new, h), dc.where(keep, c_new, c)
        outs.append(h)
    o = dc.stack(outs, axis=1)
    if unbatched:
        return o.reshape(o.shape[1:]), c.reshape((H,))
    return o, c


def encode_batch(batch: Batch, store, config: ModelConfig) -> EncoderTrace:
    if config.mode == "sequence_only":
        g = dc.embedding(store["enc.token_emb"], batch.tokens)
        o, C = encode_sequence(g, store, batch.step_mask)
        return EncoderTrace(g, o, C, batch.step_mask)
    h = convolve(batch.features, batch.fwd_mean, batch.bwd_mean, store, config.encoder)
    alpha = None
    if config.pooling == "node_attention":
        g, alpha = pool_attention(h, store)
    else:
        g = pool_max(h, store)
    o, C = encode_sequence(g, store, batch.step_mask)
    return EncoderTrace(g, o, C, batch.step_mask, h, alpha)
