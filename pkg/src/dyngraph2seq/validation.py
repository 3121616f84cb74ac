"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np

from .graphdata import VOCAB, DataError, DynGraphSample, SnapshotGraph


def check_snapshot(snapshot, n_nodes=None, n_features=None):
    if not isinstance(snapshot, SnapshotGraph):
        A, F = snapshot
        snapshot = SnapshotGraph(np.asarray(A, dtype=np.float64), np.asarray(F, dtype=np.float64))
    A, F = snapshot.adjacency, snapshot.node_features
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DataError(f"adjacency must be square, got shape {list(A.shape)}")
    if F.ndim != 2 or F.shape[0] != A.shape[0]:
        raise DataError(f"features {list(F.shape)} do not match adjacency {list(A.shape)}")
    if np.any(A < 0):
        raise DataError("adjacency weights must be non-negative")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(F))):
        raise DataError("snapshot contains non-finite values")
    if n_nodes is not None and A.shape[0] != n_nodes:
        raise DataError(f"expected {n_nodes} nodes, got {A.shape[0]}")
    if n_features is not None and F.shape[1] != n_features:
        raise DataError(f"expected {n_features} node features, got {F.shape[1]}")
    return snapshot


def check_samples(X, y=None, n_nodes=None, n_features=None, require_targets=True):
    """Coerce ``X`` (samples or snapshot lists) and ``y`` into DynGraphSamples.

    ``y`` holds stage-token sequences (strings) and overrides any targets
    already on the samples.  Without targets, a placeholder target is used
    when ``require_targets`` is False.
    """
    if y is not None and len(y) != len(X):
        raise DataError(f"X has {len(X)} samples but y has {len(y)}")
    if len(X) == 0:
        raise DataError("no samples")
    out = []
    for i, x in enumerate(X):
        if isinstance(x, DynGraphSample):
            snaps, uid, target = x.snapshots, x.user_id, list(x.target)
        else:
            snaps, uid, target = list(x), str(i), None
        snaps = [check_snapshot(s, n_nodes, n_features) for s in snaps]
        if y is not None:
            target = VOCAB.encode(y[i])
        if not target:
            if require_targets:
                raise DataError(f"sample {uid!r} has no target sequence")
            target = [VOCAB.stage_ids[0]]
        sample = DynGraphSample(uid, snaps, target)
        if isinstance(x, DynGraphSample):
            sample.visit_sequences = x.visit_sequences
            sample.window_stages = x.window_stages
        n_nodes, n_features = snaps[0].num_nodes, snaps[0].num_features
        out.append(sample)
    return out
