"""Dynamic activity graphs: ingestion, synthetic generation, baseline reductions."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

WINDOW_SECONDS = 2_592_000  # 30 days

STAGES = ("Dx", "Chemotherapy", "Targeted", "Hormonal", "Radiation", "Surgery")


class DataError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class StageVocabulary:
    """Six stage tokens followed by BOS, EOS and PAD (ids 6, 7, 8)."""

    def __init__(self, stages=STAGES):
        if tuple(stages) != STAGES:
            raise ConfigError(f"stage tokens must be exactly {STAGES}")
        self.tokens = list(stages) + ["<bos>", "<eos>", "<pad>"]
        self.token_to_id = {t: i for i, t in enumerate(self.tokens)}
        self.id_to_token = dict(enumerate(self.tokens))
        self.bos = self.token_to_id["<bos>"]
        self.eos = self.token_to_id["<eos>"]
        self.pad = self.token_to_id["<pad>"]

    def __len__(self):
        return len(self.tokens)

    @property
    def stage_ids(self):
        return list(range(len(STAGES)))

    def encode(self, tokens):
        try:
            return [self.token_to_id[t] for t in tokens]
        except KeyError as err:
            raise DataError(f"unknown stage token {err.args[0]!r}") from None

    def decode(self, ids):
        return [self.id_to_token[int(i)] for i in ids]


VOCAB = StageVocabulary()


@dataclass(frozen=True)
class EventRecord:
    user_id: str
    timestamp: int
    subforum_id: int
    action: str = "post"

    def __post_init__(self):
        if self.action not in ("post", "reply"):
            raise DataError(f"unknown action {self.action!r}")
        if self.timestamp < 0:
            raise DataError(f"negative timestamp {self.timestamp}")


@dataclass
class SubforumProfile:
    subforum_id: int
    topic_vector: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.topic_vector, dtype=np.float64)
        if np.any(vec < 0):
            raise DataError(f"subforum {self.subforum_id}: negative keyword weight")
        total = vec.sum()
        self.topic_vector = vec / total if total > 0 else vec


@dataclass
class SnapshotGraph:
    adjacency: np.ndarray
    node_features: np.ndarray

    @property
    def num_nodes(self):
        return self.adjacency.shape[0]

    @property
    def num_features(self):
        return self.node_features.shape[1]


@dataclass
class DynGraphSample:
    user_id: str
    snapshots: list
    target: list
    window_stages: list | None = field(default=None, compare=False)
    visit_sequences: list | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.snapshots:
            raise DataError(f"sample {self.user_id!r} has no snapshots")
        n, d = self.snapshots[0].num_nodes, self.snapshots[0].num_features
        for s in self.snapshots:
            if s.adjacency.shape != (n, n) or s.node_features.shape != (n, d):
                raise DataError(f"sample {self.user_id!r}: snapshots disagree on N or D")

    @property
    def num_steps(self):
        return len(self.snapshots)


# ------------------------------------------------------------------ ingestion


def build_dynamic_graph(events, profiles, window_seconds=WINDOW_SECONDS):
    """Turn one user's time-sorted events into a list of snapshot graphs.

    Windows are aligned to multiples of ``window_seconds`` since the epoch and
    span the first event's window through the last event's window.  Within a
    window, each consecutive pair of distinct subforum visits adds 1 to the
    directed edge weight.  Node features are the subforum's topic vector times
    the window activity count, followed by the raw count.
    """
    if not events:
        raise DataError("at least one event is required")
    if window_seconds <= 0:
        raise ConfigError("window_seconds must be positive")
    for a, b in zip(events, events[1:]):
        if b.timestamp < a.timestamp:
            raise DataError("events must be sorted by timestamp")
    N = len(profiles)
    topics = np.stack([p.topic_vector for p in profiles])
    for e in events:
        if not 0 <= e.subforum_id < N:
            raise DataError(f"subforum_id {e.subforum_id} out of range [0, {N})")

    first = events[0].timestamp // window_seconds
    last = events[-1].timestamp // window_seconds
    visits = [[] for _ in range(last - first + 1)]
    for e in events:
        visits[e.timestamp // window_seconds - first].append(e.subforum_id)

    return [_snapshot_from_visits(v, topics) for v in visits]


def _snapshot_from_visits(visits, topics):
    N, K = topics.shape
    adj = np.zeros((N, N))
    for u, v in zip(visits, visits[1:]):
        if u != v:
            adj[u, v] += 1.0
    counts = np.bincount(np.asarray(visits, dtype=np.int64), minlength=N).astype(np.float64)
    feats = np.concatenate([topics * counts[:, None], counts[:, None]], axis=1)
    return SnapshotGraph(adj, feats)


def aggregate_static(sample: DynGraphSample) -> SnapshotGraph:
    """Collapse all snapshots into one graph by summing adjacency and features."""
    adj = np.sum([s.adjacency for s in sample.snapshots], axis=0)
    feats = np.sum([s.node_features for s in sample.snapshots], axis=0)
    return SnapshotGraph(adj, feats)


def window_visit_sequence(snapshot: SnapshotGraph):
    """Recover the duplicate-collapsed visit order of one window from its edges.

    Snapshots keep transition counts, not visit order, so the walk is rebuilt
    as an Eulerian trail over the edge multiset (the order is unique whenever
    the window is a simple path of switches; otherwise the lowest-id
    successor is taken first).  A window without edges but with activity
    yields its single active subforum.
    """
    adj = snapshot.adjacency
    counts = snapshot.node_features[:, -1]
    if not adj.any():
        active = np.flatnonzero(counts > 0)
        return [int(active[0])] if active.size else []
    remaining = np.rint(adj).astype(np.int64)
    out_deg = remaining.sum(axis=1)
    in_deg = remaining.sum(axis=0)
    starts = np.flatnonzero(out_deg - in_deg == 1)
    start = int(starts[0]) if starts.size else int(np.flatnonzero(out_deg > 0)[0])
    # Hierholzer's algorithm with lowest-id successor preference.
    stack, trail = [start], []
    while stack:
        u = stack[-1]
        nxt = np.flatnonzero(remaining[u] > 0)
        if nxt.size:
            v = int(nxt[0])
            remaining[u, v] -= 1
            stack.append(v)
        else:
            trail.append(stack.pop())
    return trail[::-1]


def flatten_to_sequence(sample: DynGraphSample):
    """Concatenate each window's collapsed visit sequence in time order.

    Uses the stored ``visit_sequences`` when the sample was built from raw
    events, otherwise reconstructs them from the snapshot edges.
    """
    seqs = sample.visit_sequences
    if seqs is None:
        seqs = [window_visit_sequence(s) for s in sample.snapshots]
    out = []
    for seq in seqs:
        out.extend(_collapse(seq))
    return out


def _collapse(seq):
    out = []
    for x in seq:
        if not out or out[-1] != x:
            out.append(int(x))
    return out


def build_sample(user_id, events, profiles, target_tokens, window_seconds=WINDOW_SECONDS,
                 vocab=VOCAB):
    snaps = build_dynamic_graph(events, profiles, window_seconds)
    target = vocab.encode(target_tokens)
    if not target:
        raise DataError(f"user {user_id!r} has an empty stage history")
    sample = DynGraphSample(str(user_id), snaps, target)
    first = events[0].timestamp // window_seconds
    visits = [[] for _ in snaps]
    for e in events:
        visits[e.timestamp // window_seconds - first].append(e.subforum_id)
    sample.visit_sequences = [_collapse(v) for v in visits]
    return sample


# ------------------------------------------------------------------ synthetic


@dataclass
class SyntheticConfig:
    num_users: int = 200
    N: int = 10
    D: int = 8
    T_min: int = 3
    T_max: int = 8
    stage_count: int = 6
    emission_strength: float = 0.8
    switch_prob: float = 0.5
    events_per_window: float = 30.0
    seed: int = 0

    def validate(self):
        if self.num_users < 1:
            raise ConfigError("num_users must be >= 1")
        if self.stage_count < 1 or self.stage_count > len(STAGES):
            raise ConfigError(f"stage_count must be in [1, {len(STAGES)}]")
        if self.N < self.stage_count:
            raise ConfigError("N must be >= stage_count")
        if not 0 < self.emission_strength <= 1:
            raise ConfigError("emission_strength must be in (0, 1]")
        if not 0 < self.switch_prob <= 1:
            raise ConfigError("switch_prob must be in (0, 1]")
        if not 1 <= self.T_min <= self.T_max:
            raise ConfigError("need 1 <= T_min <= T_max")
        if self.D < 1:
            raise ConfigError("D must be >= 1")
        if self.events_per_window <= 0:
            raise ConfigError("events_per_window must be positive")

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synthetic config field(s): {sorted(unknown)}")
        return cls(**d)


@dataclass
class SyntheticDataset:
    samples: list
    stage_to_subforum: dict
    profiles: list
    config: SyntheticConfig


def generate_synthetic(config: SyntheticConfig | dict) -> SyntheticDataset:
    """Sample users whose subforum activity follows a hidden stage chain.

    Each user visits stages in a random order without revisits; after every
    window the chain moves to the next unused stage with probability
    ``switch_prob`` (so a stage lasts a geometric number of windows).  Each
    event lands on the current stage's planted subforum with probability
    ``emission_strength``, otherwise on a uniformly random subforum.
    Node features have ``D + 1`` columns (``D`` keyword weights plus count).
    """
    if isinstance(config, dict):
        config = SyntheticConfig.from_dict(config)
    config.validate()
    master = np.random.default_rng(config.seed)
    planted = master.choice(config.N, size=config.stage_count, replace=False)
    stage_to_subforum = {int(s): int(f) for s, f in enumerate(planted)}
    profiles = [SubforumProfile(i, master.gamma(0.5, size=config.D) + 1e-3)
                for i in range(config.N)]

    samples = []
    for u in range(config.num_users):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, u]))
        samples.append(_synthetic_user(u, rng, config, planted, profiles))
    return SyntheticDataset(samples, stage_to_subforum, profiles, config)


def _synthetic_user(u, rng, cfg, planted, profiles):
    T = int(rng.integers(cfg.T_min, cfg.T_max + 1))
    order = rng.permutation(cfg.stage_count)
    chain, pos = [], 0
    for t in range(T):
        if t > 0 and pos + 1 < cfg.stage_count and rng.random() < cfg.switch_prob:
            pos += 1
        chain.append(int(order[pos]))

    base_window = int(rng.integers(0, 96))
    events = []
    for t, stage in enumerate(chain):
        k = int(rng.poisson(cfg.events_per_window))
        if t == 0:
            k = max(k, 1)
        forums = np.where(rng.random(k) < cfg.emission_strength,
                          planted[stage], rng.integers(0, cfg.N, size=k))
        start = (base_window + t) * WINDOW_SECONDS
        stamps = np.sort(rng.integers(start, start + WINDOW_SECONDS, size=k))
        events.extend(EventRecord(f"u{u:05d}", int(ts), int(f), "post")
                      for ts, f in zip(stamps, forums))
    # Trailing empty windows fall outside the event span; pad them back in.
    target = [STAGES[s] for s in _collapse(chain)]
    sample = build_sample(f"u{u:05d}", events, profiles, target)
    while sample.num_steps < T:
        N = cfg.N
        sample.snapshots.append(SnapshotGraph(np.zeros((N, N)), np.zeros((N, cfg.D + 1))))
        sample.visit_sequences.append([])
    sample.window_stages = chain
    return sample


def geometric_persistence_estimate(samples, stage_count):
    """Estimate mean stage persistence (windows) from hidden chains.

    Counts switch opportunities only while unused stages remain, which is
    the censoring-correct estimator for the generator's switch process.
    """
    switches = opportunities = 0
    for s in samples:
        chain = s.window_stages
        used = 1
        for a, b in zip(chain, chain[1:]):
            if used >= stage_count:
                break
            opportunities += 1
            if a != b:
                switches += 1
                used += 1
    return opportunities / switches if switches else math.inf


# ------------------------------------------------------------------ splits


def split_dataset(samples, ratios=(0.70, 0.10, 0.20), seed=0):
    """Shuffle users and cut them into train/validation/test partitions."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {sum(ratios)}")
    n = len(samples)
    if n < len(ratios):
        raise DataError(f"need at least {len(ratios)} samples to split, got {n}")
    sizes = [int(round(n * r)) for r in ratios[:-1]]
    sizes.append(n - sum(sizes))
    for i, s in enumerate(sizes):
        while sizes[i] <= 0:
            j = int(np.argmax(sizes))
            sizes[j] -= 1
            sizes[i] += 1
    order = np.random.default_rng(seed).permutation(n)
    parts, start = [], 0
    for s in sizes:
        parts.append([samples[i] for i in order[start:start + s]])
        start += s
    return tuple(parts)


# ------------------------------------------------------------------ file formats


def read_events(path):
    """Read line-delimited JSON events grouped by user, each group time-sorted."""
    by_user = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                ev = EventRecord(str(rec["user_id"]), int(rec["timestamp"]),
                                 int(rec["subforum_id"]), rec.get("action", "post"))
            except (KeyError, ValueError, TypeError) as err:
                raise DataError(f"{path}:{lineno}: bad event record ({err})") from None
            by_user.setdefault(ev.user_id, []).append(ev)
    for evs in by_user.values():
        evs.sort(key=lambda e: e.timestamp)
    return by_user


def read_profiles(path):
    """Read ``subforum_id,w0,w1,...`` CSV rows into profiles ordered by id."""
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "subforum_id":
            raise DataError(f"{path}: first column must be subforum_id")
        for row in reader:
            if row:
                rows[int(row[0])] = [float(x) for x in row[1:]]
    if sorted(rows) != list(range(len(rows))):
        raise DataError(f"{path}: subforum ids must be 0..N-1")
    return [SubforumProfile(i, rows[i]) for i in range(len(rows))]


def write_profiles(path, profiles):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        K = len(profiles[0].topic_vector)
        w.writerow(["subforum_id"] + [f"w{j}" for j in range(K)])
        for p in profiles:
            w.writerow([p.subforum_id] + [repr(float(x)) for x in p.topic_vector])


def sample_to_record(sample: DynGraphSample, split=None, vocab=VOCAB):
    rec = {
        "user_id": sample.user_id,
        "snapshots": [{"adjacency": s.adjacency.tolist(),
                       "features": s.node_features.tolist()} for s in sample.snapshots],
        "target": vocab.decode(sample.target),
    }
    seqs = sample.visit_sequences
    if seqs is not None:
        rec["visits"] = seqs
    if sample.window_stages is not None:
        rec["window_stages"] = [STAGES[s] for s in sample.window_stages]
    if split is not None:
        rec["split"] = split
    return rec


def sample_from_record(rec, vocab=VOCAB):
    try:
        snaps = [SnapshotGraph(np.asarray(s["adjacency"], dtype=np.float64),
                               np.asarray(s["features"], dtype=np.float64))
                 for s in rec["snapshots"]]
        sample = DynGraphSample(str(rec["user_id"]), snaps, vocab.encode(rec["target"]))
    except (KeyError, TypeError, ValueError) as err:
        raise DataError(f"bad sample record: {err}") from None
    if "visits" in rec:
        sample.visit_sequences = [list(v) for v in rec["visits"]]
    if "window_stages" in rec:
        sample.window_stages = [STAGES.index(s) for s in rec["window_stages"]]
    return sample


def write_dataset(path, samples, splits=None):
    """Write one JSON record per line; ``splits`` maps user_id -> partition name."""
    with open(path, "w") as fh:
        for s in samples:
            split = None if splits is None else splits.get(s.user_id)
            fh.write(json.dumps(sample_to_record(s, split), separators=(",", ":")) + "\n")


def read_dataset(path):
    """Return ``(samples, splits)`` where ``splits`` maps user_id -> partition name."""
    samples, splits = [], {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as err:
                raise DataError(f"{path}:{lineno}: {err}") from None
            s = sample_from_record(rec)
            samples.append(s)
            if "split" in rec:
                splits[s.user_id] = rec["split"]
    if not samples:
        raise DataError(f"{path}: no samples")
    return samples, splits


def partition(samples, splits):
    parts = {"train": [], "validation": [], "test": []}
    for s in samples:
        name = splits.get(s.user_id)
        if name in parts:
            parts[name].append(s)
    return parts["train"], parts["validation"], parts["test"]
