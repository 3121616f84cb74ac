"""scikit-learn compatible estimator wrapping the dynamic graph-to-sequence model."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .checkpoint import load_checkpoint, save_checkpoint
from .graphdata import VOCAB
from .metrics import bleu
from .model import collate, prepare
from .trainer import TrainConfig, predict_prepared, train
from .validation import check_samples


class DynGraph2Seq(BaseEstimator):
    """Map a sequence of snapshot graphs to a sequence of stage tokens.

    ``X`` is a list of :class:`~dyngraph2seq.graphdata.DynGraphSample` or of
    snapshot lists (each snapshot a ``SnapshotGraph`` or an
    ``(adjacency, features)`` pair).  ``y`` is a list of stage-token lists.

    Parameters
    ----------
    mode : {"dynamic", "static_aggregate", "sequence_only"}
        ``static_aggregate`` sums all snapshots into one graph and
        ``sequence_only`` feeds the flattened subforum visit sequence; both
        are baselines sharing the decoder.
    pooling : {"node_attention", "max_pool"}
    graph_attention : bool
        Decoder attention over encoder steps.
    """

    def __init__(self, mode="dynamic", pooling="node_attention", graph_attention=True, hops=2,
                 hidden=16, learning_rate=0.001, batch_size=50, max_epochs=300, patience=20,
                 clip_norm=5.0, max_len=12, random_state=0):
        self.mode = mode
        self.pooling = pooling
        self.graph_attention = graph_attention
        self.hops = hops
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.clip_norm = clip_norm
        self.max_len = max_len
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            max_epochs=self.max_epochs, seed=self.random_state, mode=self.mode,
            pooling=self.pooling, graph_attention=self.graph_attention, hops=self.hops,
            hidden=self.hidden, patience=self.patience, clip_norm=self.clip_norm,
            max_len=self.max_len)

    def fit(self, X, y=None, eval_set=None):
        """Train; model selection uses ``eval_set=(X_val, y_val)`` or the training data."""
        samples = check_samples(X, y)
        if eval_set is None:
            val = samples
        else:
            X_val, y_val = eval_set
            val = check_samples(X_val, y_val, samples[0].snapshots[0].num_nodes,
                                samples[0].snapshots[0].num_features)
        result = train(samples, val, self._train_config())
        self.params_ = result.best
        self.model_config_ = result.model_config
        self.run_log_ = result.log
        self.n_nodes_ = result.model_config.num_nodes
        self.n_features_in_ = result.model_config.in_features
        return self

    def _prepared(self, X):
        check_is_fitted(self, "params_")
        samples = check_samples(X, None, self.n_nodes_, self.n_features_in_, require_targets=False)
        return [prepare(s, self.model_config_.mode, self.model_config_) for s in samples]

    def decode(self, X):
        """Greedy :class:`~dyngraph2seq.decoder.DecodeResult` per sample."""
        return predict_prepared(self._prepared(X), self.params_, self.model_config_)

    def predict(self, X):
        return [VOCAB.decode(r.tokens) for r in self.decode(X)]

    def transform(self, X):
        """Final encoder cell state per sample, shape (n_samples, 2 * hidden)."""
        from .encoder import encode_batch

        prep = self._prepared(X)
        out = []
        for i in range(0, len(prep), 256):
            batch = collate(prep[i:i + 256], with_targets=False)
            out.append(encode_batch(batch, self.params_, self.model_config_).final_cell.data)
        return np.concatenate(out, axis=0)

    def score(self, X, y=None):
        """Corpus BLEU-1 (0-100) of greedy predictions."""
        samples = check_samples(X, y)
        preds = [r.tokens for r in self.decode(samples)]
        return bleu(preds, [s.target for s in samples], 1)

    def save(self, path):
        check_is_fitted(self, "params_")
        save_checkpoint(path, self.params_, self.model_config_, self._train_config())

    @classmethod
    def load(cls, path):
        store, mcfg, tcfg = load_checkpoint(path)
        kwargs = {}
        if tcfg:
            kwargs = {k: v for k, v in tcfg.items() if k != "seed"}
            kwargs["random_state"] = tcfg.get("seed", 0)
        est = cls(**kwargs)
        est.params_ = store
        est.model_config_ = mcfg
        est.n_nodes_ = mcfg.num_nodes
        est.n_features_in_ = mcfg.in_features
        return est
