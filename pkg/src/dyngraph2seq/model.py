"""Model configuration, parameter layout, and batch collation."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .diffcore import ParamStore, init_uniform
from .graphdata import VOCAB, ConfigError, DataError, aggregate_static, flatten_to_sequence

MODES = ("dynamic", "static_aggregate", "sequence_only")
POOLINGS = ("max_pool", "node_attention")


@dataclass(frozen=True)
class EncoderConfig:
    hops: int
    hidden: int
    pooling: str
    in_features: int

    def __post_init__(self):
        if self.hops < 1:
            raise ConfigError("hops must be >= 1")
        if self.hidden < 1:
            raise ConfigError("hidden must be >= 1")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"pooling must be one of {POOLINGS}")

    @property
    def node_width(self):
        return 2 * self.hidden


@dataclass(frozen=True)
class ModelConfig:
    num_nodes: int
    in_features: int
    hops: int = 2
    hidden: int = 16
    pooling: str = "node_attention"
    graph_attention: bool = True
    mode: str = "dynamic"
    max_len: int = 12
    vocab_size: int = len(VOCAB)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.max_len < 1:
            raise ConfigError("max_len must be >= 1")
        self.encoder  # validates the encoder fields

    @property
    def encoder(self) -> EncoderConfig:
        return EncoderConfig(self.hops, self.hidden, self.pooling, self.in_features)

    @property
    def d_enc(self):
        return 2 * self.hidden

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def init_params(config: ModelConfig, seed=0) -> ParamStore:
    """Glorot-uniform weights, zero biases, in a fixed slot order."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    d, H, V = config.hidden, config.d_enc, config.vocab_size

    def weight(name, shape, fan_in=None, fan_out=None):
        store.add(name, init_uniform(rng, shape, fan_in, fan_out))

    def bias(name, n):
        store.add(name, np.zeros(n))

    if config.mode == "sequence_only":
        weight("enc.token_emb", (config.num_nodes, H))
    else:
        width = config.in_features
        for k in range(1, config.hops + 1):
            for direction in ("fwd", "bwd"):
                weight(f"enc.hop{k}.{direction}.W", (width, d))
                bias(f"enc.hop{k}.{direction}.b", d)
            width = 2 * d
        if config.pooling == "max_pool":
            weight("pool.W", (H, H))
            bias("pool.b", H)
        else:
            weight("pool.W1", (H, d))
            bias("pool.b1", d)
            weight("pool.w2", (d, 1))
    weight("enc.lstm.Wx", (H, 4 * H), H, H)
    weight("enc.lstm.Wh", (H, 4 * H), H, H)
    bias("enc.lstm.b", 4 * H)

    weight("dec.emb", (V, d))
    weight("dec.lstm.Wx", (d, 4 * H), d, H)
    weight("dec.lstm.Wh", (H, 4 * H), H, H)
    bias("dec.lstm.b", 4 * H)
    if config.graph_attention:
        weight("dec.attn.Wa", (H, H))
        weight("dec.comb.W", (2 * H, H))
    else:
        weight("dec.comb.W", (H, H))
    bias("dec.comb.b", H)
    weight("dec.out.W", (H, V))
    bias("dec.out.b", V)
    return store


@dataclass
class Batch:
    """Padded arrays for a group of samples.

    ``fwd_mean``/``bwd_mean`` hold the row-normalised neighbour indicator
    matrices, so ``fwd_mean @ X`` is the per-node mean over forward
    neighbours (an all-zero row for a node without neighbours).
    """

    user_ids: list
    step_mask: np.ndarray  # (B, T) bool
    fwd_mean: np.ndarray | None = None  # (B, T, N, N)
    bwd_mean: np.ndarray | None = None
    features: np.ndarray | None = None  # (B, T, N, D)
    tokens: np.ndarray | None = None  # (B, T) int, sequence_only mode
    dec_in: np.ndarray | None = None  # (B, L) int
    dec_out: np.ndarray | None = None
    dec_mask: np.ndarray | None = None  # (B, L) bool

    @property
    def size(self):
        return len(self.user_ids)

    @property
    def lengths(self):
        return self.step_mask.sum(axis=1)


def neighbour_means(adjacency):
    """Row-normalised forward and backward neighbour indicators of ``A``."""
    fwd = (adjacency > 0).astype(np.float64)
    bwd = np.swapaxes(fwd, -1, -2).copy()
    for m in (fwd, bwd):
        deg = m.sum(axis=-1, keepdims=True)
        np.divide(m, deg, out=m, where=deg > 0)
    return fwd, bwd


@dataclass
class PreparedSample:
    """One sample reduced for a model mode, with neighbour means precomputed."""

    user_id: str
    target: list
    fwd_mean: np.ndarray | None = None  # (T, N, N)
    bwd_mean: np.ndarray | None = None
    features: np.ndarray | None = None
    tokens: np.ndarray | None = None

    @property
    def num_steps(self):
        return len(self.tokens) if self.tokens is not None else self.features.shape[0]


def prepare(sample, mode, config: ModelConfig | None = None) -> PreparedSample:
    if mode == "sequence_only":
        toks = np.asarray(flatten_to_sequence(sample), dtype=np.int64)
        if toks.size == 0:
            raise DataError(f"sample {sample.user_id!r} has no activity to flatten")
        return PreparedSample(sample.user_id, list(sample.target), tokens=toks)
    snaps = [aggregate_static(sample)] if mode == "static_aggregate" else sample.snapshots
    A = np.stack([s.adjacency for s in snaps])
    F = np.stack([s.node_features for s in snaps])
    if config is not None and (A.shape[1] != config.num_nodes or F.shape[2] != config.in_features):
        raise DataError(
            f"sample {sample.user_id!r}: N={A.shape[1]}, D={F.shape[2]} but model expects "
            f"N={config.num_nodes}, D={config.in_features}")
    fwd, bwd = neighbour_means(A)
    return PreparedSample(sample.user_id, list(sample.target), fwd, bwd, F)


def collate(prepared, vocab=VOCAB, with_targets=True, max_len=None) -> Batch:
    """Pad prepared samples along time (zero snapshots) and target length (PAD)."""
    B = len(prepared)
    T = max(p.num_steps for p in prepared)
    step_mask = np.zeros((B, T), dtype=bool)
    for b, p in enumerate(prepared):
        step_mask[b, :p.num_steps] = True
    batch = Batch([p.user_id for p in prepared], step_mask)
    if prepared[0].tokens is not None:
        toks = np.zeros((B, T), dtype=np.int64)
        for b, p in enumerate(prepared):
            toks[b, :p.num_steps] = p.tokens
        batch.tokens = toks
    else:
        N, D = prepared[0].features.shape[1:]
        batch.fwd_mean = np.zeros((B, T, N, N))
        batch.bwd_mean = np.zeros((B, T, N, N))
        batch.features = np.zeros((B, T, N, D))
        for b, p in enumerate(prepared):
            t = p.num_steps
            batch.fwd_mean[b, :t] = p.fwd_mean
            batch.bwd_mean[b, :t] = p.bwd_mean
            batch.features[b, :t] = p.features
    if with_targets:
        if max_len is not None:
            for p in prepared:
                if len(p.target) > max_len:
                    raise DataError(
                        f"sample {p.user_id!r}: target length {len(p.target)} exceeds max_len {max_len}")
        L = max(len(p.target) for p in prepared) + 1
        batch.dec_in = np.full((B, L), vocab.pad, dtype=np.int64)
        batch.dec_out = np.full((B, L), vocab.pad, dtype=np.int64)
        batch.dec_mask = np.zeros((B, L), dtype=bool)
        for b, p in enumerate(prepared):
            m = len(p.target)
            batch.dec_in[b, :m + 1] = [vocab.bos] + p.target
            batch.dec_out[b, :m + 1] = p.target + [vocab.eos]
            batch.dec_mask[b, :m + 1] = True
    return batch
