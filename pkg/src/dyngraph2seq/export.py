"""Attention exports as plain numeric CSV matrices.

Each file starts with one ``#`` header line naming the row and column
dimensions, e.g.::

    # beta rows=timestep:4 cols=token:2 labels=Dx|Surgery
    0.1,0.7
    ...

followed by comma-separated rows written at full float precision.
"""

from __future__ import annotations

import numpy as np

from .graphdata import VOCAB
from .model import prepare
from .trainer import predict_prepared


def write_matrix(path, name, matrix, row_dim, col_dim, labels=None):
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    rows, cols = matrix.shape
    header = f"# {name} rows={row_dim}:{rows} cols={col_dim}:{cols}"
    if labels is not None:
        header += " labels=" + "|".join(labels)
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in matrix:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def read_matrix(path):
    """Return ``(header_fields, matrix)`` for a file written by :func:`write_matrix`."""
    with open(path) as fh:
        header = fh.readline().strip()
        body = [line.strip() for line in fh if line.strip()]
    if not header.startswith("#"):
        raise ValueError(f"{path}: missing header line")
    parts = header[1:].split()
    meta = {"name": parts[0]}
    for p in parts[1:]:
        key, _, val = p.partition("=")
        meta[key] = val
    rows = int(meta["rows"].split(":")[1])
    cols = int(meta["cols"].split(":")[1])
    matrix = np.array([[float(x) for x in line.split(",")] for line in body]).reshape(rows, cols)
    return meta, matrix


def explain_sample(sample, store, model_config):
    """Decode one sample and collect its attention weights.

    Returns a dict with ``tokens``, ``beta`` (T x M', one column per decoded
    token), ``alpha`` (T x N or None) and ``attended`` (per-timestep argmax
    node and its weight, or None without node attention).
    """
    prep = [prepare(sample, model_config.mode, model_config)]
    results, traces = predict_prepared(prep, store, model_config, with_trace=True)
    result = results[0]
    trace, b = traces[0]
    alpha = trace.for_sample(b).get("node_attention")
    beta = None if result.graph_attention is None else result.graph_attention.T
    attended = None
    if alpha is not None:
        idx = alpha.argmax(axis=1)
        attended = np.stack([idx, alpha[np.arange(len(idx)), idx]], axis=1)
    return {"tokens": VOCAB.decode(result.tokens), "token_ids": result.tokens,
            "beta": beta, "alpha": alpha, "attended": attended}
