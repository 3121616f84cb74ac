import numpy as np
import pytest

from dyngraph2seq.graphdata import DynGraphSample, SnapshotGraph
from dyngraph2seq.model import ModelConfig, collate, init_params, prepare


def random_snapshot(rng, N, D, density=0.5):
    A = (rng.random((N, N)) < density) * rng.integers(1, 4, size=(N, N))
    np.fill_diagonal(A, 0)
    F = rng.uniform(-1, 1, size=(N, D))
    return SnapshotGraph(A.astype(np.float64), F)


def random_sample(rng, N=3, D=2, T=2, M=2, uid="s"):
    snaps = [random_snapshot(rng, N, D) for _ in range(T)]
    target = [int(x) for x in rng.integers(0, 6, size=M)]
    return DynGraphSample(uid, snaps, target)


def randomize(store, rng, low=-1.0, high=1.0):
    store.load_values({k: rng.uniform(low, high, size=t.shape) for k, t in store.params.items()})
    return store


def tiny_model(seed, pooling="node_attention", graph_attention=True, mode="dynamic",
               N=3, D=2, T=2, hops=2, hidden=4, n_samples=2):
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(num_nodes=N, in_features=D, hops=hops, hidden=hidden, pooling=pooling,
                      graph_attention=graph_attention, mode=mode)
    store = randomize(init_params(cfg, seed), rng)
    samples = [random_sample(rng, N, D, T=T - (i % 2 if T > 1 else 0), uid=f"s{i}")
               for i in range(n_samples)]
    if mode == "sequence_only":
        for s in samples:
            s.visit_sequences = [list(rng.integers(0, N, size=3)) for _ in s.snapshots]
    batch = collate([prepare(s, mode, cfg) for s in samples])
    return cfg, store, samples, batch


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
