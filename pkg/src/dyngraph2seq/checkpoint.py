"""JSON checkpoint container.

Layout (format_version 1)::

    {
      "format_version": 1,
      "model_config": {...ModelConfig fields...},
      "train_config": {...} | null,
      "vocabulary": ["Dx", ..., "<pad>"],
      "params": {name: {"shape": [..], "values": [..row-major..]}},
      "optimizer": {"step": int, "m": {name: [..]}, "v": {name: [..]}} | absent
    }

Floats are written with ``repr`` precision, so values round-trip bit-exactly.
"""

from __future__ import annotations

import json

import numpy as np

from .diffcore import ParamStore
from .graphdata import VOCAB
from .model import ModelConfig, init_params

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _flat(arr):
    return [float(x) for x in np.asarray(arr).reshape(-1)]


def save_checkpoint(path, store: ParamStore, model_config: ModelConfig, train_config=None,
                    with_optimizer=False):
    doc = {
        "format_version": FORMAT_VERSION,
        "model_config": model_config.to_dict(),
        "train_config": None if train_config is None else train_config.to_dict(),
        "vocabulary": VOCAB.tokens,
        "params": {k: {"shape": list(t.shape), "values": _flat(t.data)}
                   for k, t in store.params.items()},
    }
    if with_optimizer:
        doc["optimizer"] = {
            "step": store.step,
            "m": {k: _flat(v) for k, v in store.m.items()},
            "v": {k: _flat(v) for k, v in store.v.items()},
        }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Return ``(store, model_config, train_config_dict_or_None)``."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {doc.get('format_version')!r}")
    if doc.get("vocabulary") != VOCAB.tokens:
        raise CheckpointError("checkpoint vocabulary does not match the stage vocabulary")
    mcfg = ModelConfig.from_dict(doc["model_config"])
    store = init_params(mcfg)
    values = {}
    for k, rec in doc["params"].items():
        values[k] = np.array(rec["values"], dtype=np.float64).reshape(rec["shape"])
    store.load_values(values)
    opt = doc.get("optimizer")
    if opt is not None:
        store.step = int(opt["step"])
        for k in store.names():
            shape = store[k].shape
            store.m[k] = np.array(opt["m"][k], dtype=np.float64).reshape(shape)
            store.v[k] = np.array(opt["v"][k], dtype=np.float64).reshape(shape)
    return store, mcfg, doc.get("train_config")
