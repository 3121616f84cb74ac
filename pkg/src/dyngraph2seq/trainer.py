"""Mini-batch Adam training with validation BLEU-1 model selection."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import diffcore as dc
from .decoder import greedy_decode, teacher_forced_loss
from .encoder import encode_batch
from .graphdata import ConfigError, DataError
from .metrics import EvalReport, bleu, score_all
from .model import MODES, POOLINGS, ModelConfig, collate, init_params, prepare

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 50
    max_epochs: int = 300
    seed: int = 0
    mode: str = "dynamic"
    pooling: str = "node_attention"
    graph_attention: bool = True
    hops: int = 2
    hidden: int = 16
    patience: int = 20
    clip_norm: float = 5.0
    max_len: int = 12

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.patience < 0:
            raise ConfigError("patience must be >= 0")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"pooling must be one of {POOLINGS}")

    @property
    def node_attention(self):
        return self.pooling == "node_attention"

    def model_config(self, num_nodes, in_features) -> ModelConfig:
        return ModelConfig(num_nodes=num_nodes, in_features=in_features, hops=self.hops,
                           hidden=self.hidden, pooling=self.pooling,
                           graph_attention=self.graph_attention, mode=self.mode,
                           max_len=self.max_len)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown training config field(s): {sorted(unknown)}")
        return cls(**d)


@dataclass
class RunLog:
    train_loss: list = field(default_factory=list)
    val_bleu1: list = field(default_factory=list)
    train_token_accuracy: list = field(default_factory=list)
    best_epoch: int = -1
    wall_clock_seconds: float = 0.0

    @property
    def epochs(self):
        return len(self.train_loss)

    def records(self):
        """Line records (epoch is 1-based); wall-clock is left out so exports are reproducible."""
        return [{"epoch": i + 1, "loss": l, "val_bleu1": b}
                for i, (l, b) in enumerate(zip(self.train_loss, self.val_bleu1))]


@dataclass
class TrainResult:
    best: dc.ParamStore
    last: dc.ParamStore
    log: RunLog
    model_config: ModelConfig


def data_shape(samples):
    s = samples[0].snapshots[0]
    return s.num_nodes, s.num_features


def batch_loss(prepared, store, config: ModelConfig):
    batch = collate(prepared, max_len=config.max_len)
    trace = encode_batch(batch, store, config)
    return teacher_forced_loss(batch, trace, store, config)


def predict_prepared(prepared, store, config: ModelConfig, chunk=256, with_trace=False):
    """Greedy decodes for prepared samples; optionally the encoder traces too."""
    results, traces = [], []
    for i in range(0, len(prepared), chunk):
        batch = collate(prepared[i:i + chunk], with_targets=False)
        trace = encode_batch(batch, store, config)
        results.extend(greedy_decode(trace, store, config))
        if with_trace:
            traces.extend((trace, b) for b in range(batch.size))
    return (results, traces) if with_trace else results


def decode_tokens(prepared, store, config):
    return [r.tokens for r in predict_prepared(prepared, store, config)]


def train(train_samples, val_samples, config: TrainConfig, init_store=None):
    """Fit a model; returns a :class:`TrainResult` holding the best-BLEU-1 weights.

    With ``init_store`` the parameters and optimizer moments are copied from
    it (resume); otherwise weights come from ``config.seed``.
    """
    if not train_samples or not val_samples:
        raise DataError("train and validation splits must be non-empty")
    N, D = data_shape(train_samples)
    mcfg = config.model_config(N, D)
    train_prep = [prepare(s, mcfg.mode, mcfg) for s in train_samples]
    val_prep = [prepare(s, mcfg.mode, mcfg) for s in val_samples]
    val_refs = [p.target for p in val_prep]
    store = init_params(mcfg, config.seed) if init_store is None else init_store.copy()
    if init_store is not None and set(init_store.names()) != set(store.names()):
        raise ConfigError("resume checkpoint does not match the model layout")

    rng = np.random.default_rng([config.seed, 7919])
    runlog = RunLog()
    best_score, best_values, since_best = -np.inf, None, 0
    start = time.perf_counter()
    n = len(train_prep)
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        losses, sizes, correct, positions = [], [], 0, 0
        for bi, lo in enumerate(range(0, n, config.batch_size)):
            chunk = [train_prep[i] for i in order[lo:lo + config.batch_size]]
            store.zero_grad()
            with dc.Tape() as tape:
                loss, info = batch_loss(chunk, store, mcfg)
            value = loss.item()
            if not np.isfinite(value):
                raise dc.TrainingError(f"non-finite loss at epoch {epoch + 1}, batch {bi}")
            tape.backward(loss, store)
            dc.clip_grad_norm(store, config.clip_norm)
            dc.adam_step(store, config.learning_rate)
            losses.append(value)
            sizes.append(len(chunk))
            correct += info.correct
            positions += info.positions
        epoch_loss = float(np.average(losses, weights=sizes))
        val_bleu = bleu(decode_tokens(val_prep, store, mcfg), val_refs, 1)
        runlog.train_loss.append(epoch_loss)
        runlog.val_bleu1.append(val_bleu)
        runlog.train_token_accuracy.append(correct / positions)
        log.debug("epoch %d loss %.5f val BLEU-1 %.2f", epoch + 1, epoch_loss, val_bleu)
        if val_bleu > best_score:
            best_score, best_values, since_best = val_bleu, store.values(), 0
            runlog.best_epoch = epoch
        else:
            since_best += 1
            if since_best > config.patience:
                break
    runlog.wall_clock_seconds = time.perf_counter() - start
    best = init_params(mcfg, config.seed)
    best.load_values(best_values)
    return TrainResult(best, store, runlog, mcfg)


def evaluate_store(samples, store, model_config: ModelConfig):
    """Metric dict for one parameter set on ``samples``."""
    if not samples:
        raise DataError("empty test split")
    prep = [prepare(s, model_config.mode, model_config) for s in samples]
    cands = decode_tokens(prep, store, model_config)
    return score_all(cands, [p.target for p in prep])


def evaluate(test_samples, runs=1, seeds=None, checkpoint=None, train_samples=None,
             val_samples=None, config: TrainConfig | None = None, resplit=None):
    """Mean and SD of test metrics over ``runs``.

    With ``checkpoint`` (a ``(store, model_config)`` pair) every run evaluates
    the same weights.  Otherwise each run trains from its own seed; if
    ``resplit`` is given it is called as ``resplit(seed)`` and must return
    ``(train, val, test)`` for that run.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if not test_samples and resplit is None:
        raise DataError("empty test split")
    seeds = list(range(runs)) if seeds is None else list(seeds)
    if len(seeds) < runs:
        raise ValueError(f"need {runs} seeds, got {len(seeds)}")
    report = EvalReport()
    for seed in seeds[:runs]:
        if checkpoint is not None:
            store, mcfg = checkpoint
            report.add(evaluate_store(test_samples, store, mcfg))
            continue
        tr, va, te = (train_samples, val_samples, test_samples)
        if resplit is not None:
            tr, va, te = resplit(seed)
        cfg = TrainConfig.from_dict({**(config or TrainConfig()).to_dict(), "seed": seed})
        result = train(tr, va, cfg)
        report.add(evaluate_store(te, result.best, result.model_config))
    return report
