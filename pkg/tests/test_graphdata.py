import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyngraph2seq.graphdata import (
    STAGES, VOCAB, WINDOW_SECONDS, ConfigError, DataError, DynGraphSample, EventRecord,
    SnapshotGraph, SubforumProfile, SyntheticConfig, aggregate_static, build_dynamic_graph,
    build_sample, flatten_to_sequence, generate_synthetic, geometric_persistence_estimate,
    read_dataset, read_events, read_profiles, split_dataset, window_visit_sequence,
    write_dataset, write_profiles,
)

from conftest import random_sample

W = WINDOW_SECONDS


def profiles(N=6, D=3, seed=0):
    rng = np.random.default_rng(seed)
    return [SubforumProfile(i, rng.random(D) + 0.1) for i in range(N)]


def ev(t, f, uid="u"):
    return EventRecord(uid, t, f)


class TestVocabulary:
    def test_stage_tokens_and_specials(self):
        assert tuple(VOCAB.tokens[:6]) == STAGES
        assert len({VOCAB.bos, VOCAB.eos, VOCAB.pad}) == 3
        assert len(VOCAB) == 9

    def test_round_trip(self):
        assert VOCAB.decode(VOCAB.encode(["Dx", "Surgery"])) == ["Dx", "Surgery"]

    def test_unknown_stage(self):
        with pytest.raises(DataError):
            VOCAB.encode(["Dx", "Lunch"])


class TestBuildDynamicGraph:
    def test_single_window_hand_example(self):
        prof = profiles()
        (snap,) = build_dynamic_graph([ev(0, 2), ev(10, 2), ev(20, 5)], prof)
        expected = np.zeros((6, 6))
        expected[2, 5] = 1.0
        assert np.array_equal(snap.adjacency, expected)
        nonzero = np.flatnonzero(np.abs(snap.node_features).sum(axis=1))
        assert nonzero.tolist() == [2, 5]
        assert snap.node_features[2, -1] == 2 and snap.node_features[5, -1] == 1
        np.testing.assert_allclose(snap.node_features[2, :-1], 2 * prof[2].topic_vector)
        assert snap.num_features == 4

    def test_single_subforum_has_no_edges(self):
        (snap,) = build_dynamic_graph([ev(0, 3), ev(5, 3), ev(9, 3)], profiles())
        assert not snap.adjacency.any()
        assert (np.abs(snap.node_features).sum(axis=1) > 0).sum() == 1

    def test_middle_window_empty(self):
        snaps = build_dynamic_graph([ev(0, 1), ev(1, 2), ev(2 * W + 5, 4)], profiles())
        assert len(snaps) == 3
        assert not snaps[1].adjacency.any() and not snaps[1].node_features.any()
        assert snaps[0].adjacency[1, 2] == 1 and snaps[2].node_features[4, -1] == 1

    def test_no_edge_across_window_boundary(self):
        snaps = build_dynamic_graph([ev(W - 1, 1), ev(W, 2)], profiles())
        assert all(not s.adjacency.any() for s in snaps)

    def test_unsorted_rejected(self):
        with pytest.raises(DataError, match="sorted"):
            build_dynamic_graph([ev(10, 1), ev(0, 2)], profiles())

    def test_subforum_out_of_range(self):
        with pytest.raises(DataError, match="out of range"):
            build_dynamic_graph([ev(0, 6)], profiles())

    def test_negative_timestamp(self):
        with pytest.raises(DataError):
            ev(-1, 0)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 3 * W), st.integers(0, 5)), min_size=1, max_size=40))
    def test_edge_weight_and_count_invariants(self, raw):
        raw = sorted(raw)
        events = [ev(t, f) for t, f in raw]
        snaps = build_dynamic_graph(events, profiles())
        first = raw[0][0] // W
        for w, snap in enumerate(snaps):
            visits = [f for t, f in raw if t // W - first == w]
            switches = sum(a != b for a, b in zip(visits, visits[1:]))
            assert snap.adjacency.sum() == switches
            assert np.all(snap.adjacency >= 0)
            active = set(visits)
            for i in range(6):
                assert (np.abs(snap.node_features[i]).sum() > 0) == (i in active)
        assert sum(s.node_features[:, -1].sum() for s in snaps) == len(events)


class TestReductions:
    def test_aggregate_single_snapshot_identity(self, rng):
        s = random_sample(rng, T=1)
        agg = aggregate_static(s)
        assert np.array_equal(agg.adjacency, s.snapshots[0].adjacency)
        assert np.array_equal(agg.node_features, s.snapshots[0].node_features)

    def test_aggregate_disjoint_union(self):
        a = np.zeros((3, 3))
        b = np.zeros((3, 3))
        a[0, 1], b[2, 0] = 2.0, 3.0
        f = np.zeros((3, 2))
        s = DynGraphSample("x", [SnapshotGraph(a, f), SnapshotGraph(b, f)], [0])
        agg = aggregate_static(s).adjacency
        assert agg[0, 1] == 2.0 and agg[2, 0] == 3.0 and agg.sum() == 5.0

    def test_aggregate_keeps_every_positive_entry(self, rng):
        for _ in range(20):
            s = random_sample(rng, N=5, T=4)
            agg = aggregate_static(s).adjacency
            for snap in s.snapshots:
                for i, j in zip(*np.nonzero(snap.adjacency > 0)):
                    assert agg[i, j] > 0

    def test_aggregate_order_independent(self, rng):
        s = random_sample(rng, N=4, T=4)
        rev = DynGraphSample("r", s.snapshots[::-1], s.target)
        np.testing.assert_allclose(aggregate_static(s).adjacency, aggregate_static(rev).adjacency)

    def test_flatten_collapses_duplicates(self):
        s = build_sample("a", [ev(0, 2), ev(1, 2), ev(2, 5)], profiles(), ["Dx"])
        assert flatten_to_sequence(s) == [2, 5]

    def test_flatten_multi_window(self):
        events = [ev(0, 1), ev(1, 1), ev(2, 3), ev(W + 1, 4), ev(3 * W, 0), ev(3 * W + 1, 2),
                  ev(3 * W + 2, 2)]
        s = build_sample("a", events, profiles(), ["Dx", "Surgery"])
        assert len(s.snapshots) == 4
        assert flatten_to_sequence(s) == [1, 3] + [4] + [] + [0, 2]

    def test_flatten_from_edges_matches_stored_visits(self):
        events = [ev(0, 1), ev(1, 3), ev(2, 0), ev(W + 1, 4), ev(W + 2, 5)]
        s = build_sample("a", events, profiles(), ["Dx"])
        stored = flatten_to_sequence(s)
        s.visit_sequences = None
        assert flatten_to_sequence(s) == stored == [1, 3, 0, 4, 5]

    def test_window_visit_sequence_empty(self):
        assert window_visit_sequence(SnapshotGraph(np.zeros((3, 3)), np.zeros((3, 2)))) == []


class TestSynthetic:
    def test_deterministic(self):
        a = generate_synthetic(SyntheticConfig(num_users=5, seed=3))
        b = generate_synthetic(SyntheticConfig(num_users=5, seed=3))
        for x, y in zip(a.samples, b.samples):
            assert x.target == y.target
            for s, t in zip(x.snapshots, y.snapshots):
                assert np.array_equal(s.adjacency, t.adjacency)
                assert np.array_equal(s.node_features, t.node_features)
        assert a.stage_to_subforum == b.stage_to_subforum

    def test_full_emission_concentrates_on_planted(self):
        ds = generate_synthetic(SyntheticConfig(num_users=20, emission_strength=1.0, seed=1))
        for s in ds.samples:
            for stage, snap in zip(s.window_stages, s.snapshots):
                counts = snap.node_features[:, -1]
                if counts.sum():
                    assert np.flatnonzero(counts).tolist() == [ds.stage_to_subforum[stage]]
                assert not snap.adjacency.any()

    def test_shapes_and_target_invariants(self):
        cfg = SyntheticConfig(num_users=50, N=8, D=4, seed=2)
        ds = generate_synthetic(cfg)
        for s in ds.samples:
            assert cfg.T_min <= s.num_steps <= cfg.T_max
            assert all(snap.node_features.shape == (8, 5) for snap in s.snapshots)
            assert 1 <= len(s.target) <= s.num_steps
            assert len(set(s.target)) == len(s.target)  # never revisited
            runs = 1 + sum(a != b for a, b in zip(s.window_stages, s.window_stages[1:]))
            assert len(s.target) == runs

    def test_persistence_matches_geometric_mean(self):
        cfg = SyntheticConfig(num_users=1000, switch_prob=0.4, T_min=8, T_max=8,
                              events_per_window=1.0, seed=0)
        est = geometric_persistence_estimate(generate_synthetic(cfg).samples, cfg.stage_count)
        assert abs(est - 1 / cfg.switch_prob) / (1 / cfg.switch_prob) < 0.05

    @pytest.mark.parametrize("field,value", [("stage_count", 7), ("N", 3),
                                             ("emission_strength", 0.0)])
    def test_invalid_config(self, field, value):
        with pytest.raises(ConfigError, match=field if field != "N" else "N must"):
            generate_synthetic(SyntheticConfig(**{field: value}))

    def test_unknown_field(self):
        with pytest.raises(ConfigError, match="colour"):
            SyntheticConfig.from_dict({"colour": 1})


class TestSplit:
    def test_ten_users(self):
        tr, va, te = split_dataset(list(range(10)), seed=0)
        assert (len(tr), len(va), len(te)) == (7, 1, 2)

    def test_deterministic(self):
        assert split_dataset(list(range(30)), seed=4) == split_dataset(list(range(30)), seed=4)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(3, 200), st.integers(0, 10_000))
    def test_partition_property(self, n, seed):
        parts = split_dataset(list(range(n)), seed=seed)
        flat = [x for p in parts for x in p]
        assert sorted(flat) == list(range(n))
        assert all(len(p) >= 1 for p in parts)

    def test_too_few(self):
        with pytest.raises(DataError):
            split_dataset([1, 2])


class TestFiles:
    def test_events_and_profiles(self, tmp_path):
        p = tmp_path / "events.jsonl"
        p.write_text('{"user_id": "a", "timestamp": 20, "subforum_id": 5, "action": "reply"}\n'
                     '{"user_id": "a", "timestamp": 0, "subforum_id": 2, "action": "post"}\n'
                     '{"user_id": "b", "timestamp": 3, "subforum_id": 1, "action": "post"}\n')
        by_user = read_events(p)
        assert [e.timestamp for e in by_user["a"]] == [0, 20]
        prof = profiles()
        write_profiles(tmp_path / "p.csv", prof)
        back = read_profiles(tmp_path / "p.csv")
        for a, b in zip(prof, back):
            assert np.array_equal(a.topic_vector, b.topic_vector)

    def test_bad_event_line(self, tmp_path):
        p = tmp_path / "events.jsonl"
        p.write_text('{"user_id": "a"}\n')
        with pytest.raises(DataError, match=":1:"):
            read_events(p)

    def test_dataset_round_trip(self, tmp_path):
        ds = generate_synthetic(SyntheticConfig(num_users=4, seed=9))
        write_dataset(tmp_path / "d.jsonl", ds.samples)
        back, _ = read_dataset(tmp_path / "d.jsonl")
        for a, b in zip(ds.samples, back):
            assert a.user_id == b.user_id and a.target == b.target
            for s, t in zip(a.snapshots, b.snapshots):
                assert np.array_equal(s.adjacency, t.adjacency)
                assert np.array_equal(s.node_features, t.node_features)
            assert flatten_to_sequence(a) == flatten_to_sequence(b)
