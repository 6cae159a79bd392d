import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.csgraph import shortest_path
from scipy.stats import chisquare

from dgrec.graphs import build_inter_user_graph, build_item_hypergraph, normalized_adjacency
from dgrec.model import ModelConfig
from dgrec.privacy import EncodedGradient, LdpConfig, PrivacyAccountant, clip, rdp_epsilon
from dgrec.protocol import (
    CostMeter,
    MessageBus,
    ProtocolConfig,
    ProtocolError,
    SampledNeighborhood,
    TrainingState,
    UserData,
    communication_cost,
    geometric_count,
    init_models,
    neighbor_sampling,
    propagate,
    sample_probabilities,
    training_round,
)


def fresh_state(users=()):
    return TrainingState(models={}, users={u: None for u in users})


def encodings_for(users, n_s=3):
    return {u: EncodedGradient(np.ones(n_s), u) for u in users}


def distances(nbhd):
    U = nbhd.participants
    idx = {u: k for k, u in enumerate(U)}
    A = np.zeros((len(U), len(U)))
    for u in U:
        for v in nbhd.neighbors(u):
            A[idx[u], idx[v]] = 1
    return U, shortest_path(A, unweighted=True, directed=False)


class TestSampleProbabilities:
    def test_examples(self):
        np.testing.assert_allclose(sample_probabilities([(1, 0), (1, 0)]), [0.5, 0.5])
        np.testing.assert_allclose(sample_probabilities([(2, 0), (1, 0)]), [2 / 3, 1 / 3])
        np.testing.assert_allclose(sample_probabilities([(1, math.e - 1), (1, 0)]), [1 / 3, 2 / 3])

    def test_all_zero_falls_back_to_uniform(self, caplog):
        np.testing.assert_allclose(sample_probabilities([(0, 0), (0, 5), (0, 1)]), 1 / 3)
        assert "uniform" in caplog.text

    def test_negative_loss(self):
        with pytest.raises(ValueError):
            sample_probabilities([(-1, 0)])

    @given(st.lists(st.tuples(st.floats(0.01, 100), st.integers(0, 1000)), min_size=1, max_size=10))
    def test_normalized(self, pairs):
        p = sample_probabilities(pairs)
        assert p.sum() == pytest.approx(1.0)
        assert (p > 0).all()


class TestNeighborSampling:
    def test_chain(self, rng):
        g = build_inter_user_graph([(0, 1)])
        nb = neighbor_sampling(g, fresh_state([0, 1]), 0, 1, 1, rng)
        assert nb.sampled == {0: {1}, 1: {0}}
        assert nb.participants == [0, 1]

    def test_star_exhausts_leaves(self, rng):
        g = build_inter_user_graph([(0, 1), (0, 2), (0, 3)])
        nb = neighbor_sampling(g, fresh_state(range(4)), 0, 1, 3, rng)
        assert nb.neighbors(0) == [1, 2, 3]

    def test_path_two_hops(self):
        g = build_inter_user_graph([(0, 1), (1, 2)])
        seen = set()
        for seed in range(40):
            nb = neighbor_sampling(g, fresh_state(range(3)), 0, 2, 1, np.random.default_rng(seed))
            assert 1 in nb.neighbors(0)
            seen.add(tuple(nb.participants))
        assert seen == {(0, 1), (0, 1, 2)}

    def test_isolated_initiator(self, rng, caplog):
        g = build_inter_user_graph([(1, 2)], users=[0, 1, 2])
        nb = neighbor_sampling(g, fresh_state(range(3)), 0, 2, 3, rng)
        assert nb.participants == [0] and not nb.sampled
        assert "isolated" in caplog.text

    def test_unknown_initiator(self, rng):
        with pytest.raises(ProtocolError):
            neighbor_sampling(build_inter_user_graph([(0, 1)]), fresh_state(), 9, 1, 1, rng)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 3))
    def test_symmetric_and_within_h_hops(self, seed, H, n_u):
        rng = np.random.default_rng(seed)
        n = 15
        edges = {(i, (i + 1) % n) for i in range(n)} | {tuple(sorted(rng.choice(n, 2, replace=False))) for _ in range(12)}
        g = build_inter_user_graph(sorted(edges))
        nb = neighbor_sampling(g, fresh_state(range(n)), 0, H, n_u, rng)
        for v, ws in nb.sampled.items():
            for w in ws:
                assert v in nb.sampled[w]
                assert w in g.neighbors(v)
        U, D = distances(nb)
        assert D[U.index(0)].max() <= H

    def test_chi_square_against_closed_form(self):
        # weights 2/(ln1+1), 1/(ln1+1), 2/(ln e + 1) -> (2, 1, 1)
        g = build_inter_user_graph([(0, 1), (0, 2), (0, 3)])
        st_ = fresh_state(range(4))
        st_.last_loss.update({1: 2.0, 2: 1.0, 3: 2.0})
        st_.train_count[3] = math.e - 1
        expected = sample_probabilities([(2.0, 0), (1.0, 0), (2.0, math.e - 1)])
        np.testing.assert_allclose(expected, [0.5, 0.25, 0.25])
        # a single 1%-level test fails 1% of the time; over 10 seeded repetitions
        # a correct sampler has P(two or more failures) < 0.5%
        failures = 0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            draws = Counter(neighbor_sampling(g, st_, 0, 1, 1, rng).neighbors(0)[0] for _ in range(10_000))
            failures += chisquare([draws[1], draws[2], draws[3]], 10_000 * expected).pvalue <= 0.01
        assert failures <= 1


class TestPropagate:
    def test_single_participant(self):
        nb = SampledNeighborhood(5)
        out = propagate(encodings_for([5]), nb, H=2)
        assert [e.origin for e in out[5]] == [5]

    def test_line_trace(self):
        nb = SampledNeighborhood.from_edges(0, [(0, 1), (1, 2)])
        enc = encodings_for([0, 1, 2])
        bus = MessageBus()
        out = propagate(enc, nb, 1, bus)
        assert all(len(v) == 3 for v in out.values())
        # step 0: every node sends its singleton; step 1: node 1 forwards all three
        step0 = {(m.sender, m.receiver): m.payload_bits for m in bus.trace if m.round == 0}
        step1 = {(m.sender, m.receiver): m.payload_bits for m in bus.trace if m.round == 1}
        assert step0 == {(0, 1): 3, (1, 0): 3, (1, 2): 3, (2, 1): 3}
        assert step1 == {(0, 1): 6, (1, 0): 9, (1, 2): 9, (2, 1): 6}

    def test_triangle(self):
        nb = SampledNeighborhood.from_edges(0, [(0, 1), (1, 2), (0, 2)])
        bus = MessageBus()
        out = propagate(encodings_for([0, 1, 2]), nb, 1, bus)
        assert all(len(v) == 3 for v in out.values())
        assert {m.payload_bits for m in bus.trace if m.round == 1} == {9}

    def test_missing_encoding(self):
        nb = SampledNeighborhood.from_edges(0, [(0, 1)])
        with pytest.raises(ProtocolError, match=r"\[1\]"):
            propagate(encodings_for([0]), nb, 1)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 30), st.integers(1, 3))
    def test_held_sets_are_distance_balls(self, seed, n, H):
        """After step t a node holds exactly the origins within distance t."""
        rng = np.random.default_rng(seed)
        edges = [(int(rng.integers(0, k)), k) for k in range(1, n)]  # random tree keeps it connected
        edges += [tuple(rng.choice(n, 2, replace=False)) for _ in range(int(rng.integers(0, n)))]
        nb = SampledNeighborhood.from_edges(0, [(int(a), int(b)) for a, b in edges])
        U, D = distances(nb)
        bus = MessageBus()
        out = propagate(encodings_for(U, n_s=1), nb, H, bus)
        for i, u in enumerate(U):
            assert {e.origin for e in out[u]} == {U[j] for j in range(len(U)) if D[i, j] <= 2 * H}
        for m in bus.trace:
            i = U.index(m.sender)
            assert m.payload_bits == int((D[i] <= m.round).sum())


class TestCommunicationCost:
    def test_examples(self):
        assert communication_cost("dgrec", 3, 3, 10) == 780
        assert communication_cost("federated", 3, 3, 10, 64) == 8320
        assert communication_cost("decentralized", 3, 3, 10, 64) == 8320
        assert communication_cost("dgrec", 4, 1, 1) == 32

    @given(st.integers(1, 8), st.integers(1, 6))
    def test_geometric_count(self, H, n_u):
        assert geometric_count(H, n_u) == sum(n_u**k for k in range(H))

    def test_errors(self):
        with pytest.raises(ValueError):
            communication_cost("gossip", 1, 1, 1)
        with pytest.raises(ValueError):
            geometric_count(0, 2)

    def test_meter_counts_wire_bits(self):
        meter = CostMeter()
        bus = MessageBus(meter)
        bus.send(0, 1, [EncodedGradient(np.ones(10), 0)], 0)
        assert meter.bits_sent[0] == 8 * (16 + 2)
        assert meter.payload_bits_sent[0] == 10
        assert meter.total_bits == bus.total_bytes * 8


def toy_users(n, identical=True, seed=0):
    rng = np.random.default_rng(seed)
    tags = {i: frozenset({i % 3}) for i in range(8)}
    users = {}
    for u in range(n):
        own = [0, 1, 2] if identical else sorted(rng.choice(8, 3, replace=False).tolist())
        hg = build_item_hypergraph(u, own, {}, tags)
        neg = np.array([i for i in range(8) if i not in own])
        users[u] = UserData(hg, normalized_adjacency(hg), np.array(own), neg)
    return users


CFG = ModelConfig(n_items=8, d=4, d_i=3, n_i=2)


class TestTrainingRound:
    def test_symmetric_users_stay_identical(self):
        users = toy_users(2)
        state = TrainingState(init_models(users, CFG, 0), users, seed=0)
        # identical negatives for both users: same seed substream is keyed by user, so
        # force equality by giving each a single possible negative
        for d in users.values():
            d.negative_pool = d.negative_pool[:1]
        g = build_inter_user_graph([(0, 1)])
        acc = PrivacyAccountant(CFG.n_params, LdpConfig())
        rep = training_round(state, g, 0, ProtocolConfig(H=1, n_u=1, lr=0.5), LdpConfig(), acc)
        assert rep.participants == [0, 1]
        np.testing.assert_array_equal(state.models[0].theta, state.models[1].theta)
        assert acc.cumulative_epsilon(0) == pytest.approx(rdp_epsilon(CFG.n_params, 0.1, 1.0))
        assert dict(state.train_count) == {0: 1, 1: 1}
        assert state.last_loss[0] == rep.losses[0]

    def test_isolated_initiator_trains_locally(self):
        users = toy_users(2)
        state = TrainingState(init_models(users, CFG, 0), users)
        before = state.models[0].theta.copy()
        acc = PrivacyAccountant(CFG.n_params, LdpConfig())
        g = build_inter_user_graph([], users=[0, 1])
        training_round(state, g, 0, ProtocolConfig(lr=0.1), LdpConfig(), acc)
        assert not np.array_equal(before, state.models[0].theta)
        np.testing.assert_array_equal(state.models[1].theta, before)
        assert acc.cumulative_epsilon() == 0.0

    def test_large_beta_approaches_clipped_mean(self):
        n = 40
        users = toy_users(n, identical=False)
        edges = [(0, v) for v in range(1, n)]
        g = build_inter_user_graph(edges)
        ldp = LdpConfig(0.1, 50.0)
        hp = ProtocolConfig(H=1, n_u=n, lr=1.0)
        secure = TrainingState(init_models(users, CFG, 0), users, seed=4)
        plain = TrainingState(init_models(users, CFG, 0), users, seed=4)
        start = secure.models[0].theta.copy()
        training_round(secure, g, 0, hp, ldp)
        training_round(plain, g, 0, ProtocolConfig(H=1, n_u=n, lr=1.0, sharing="plain"), ldp)
        dec = start - secure.models[0].theta
        ref = start - plain.models[0].theta
        # per-coordinate decode noise is at most delta (e^b+1)/(e^b-1) / sqrt(n)
        tol = 5 * ldp.decode_scale / math.sqrt(n)
        assert np.abs(dec - ref).max() <= tol
        assert np.abs(dec - ref).mean() <= ldp.decode_scale / math.sqrt(n)

    def test_plain_sharing_is_mean_of_clipped(self):
        users = toy_users(3, identical=False)
        g = build_inter_user_graph([(0, 1), (1, 2)])
        state = TrainingState(init_models(users, CFG, 0), users, seed=1)
        start = state.models[1].theta.copy()
        from dgrec.protocol import _local_step

        grads = [clip(_local_step(state, v)[1], 0.1) for v in range(3)]
        training_round(state, g, 0, ProtocolConfig(H=2, n_u=2, lr=1.0, sharing="plain"), LdpConfig())
        np.testing.assert_allclose(start - state.models[1].theta, np.mean(grads, axis=0), atol=1e-15)

    def test_deterministic(self):
        def run(workers):
            users = toy_users(6, identical=False, seed=3)
            g = build_inter_user_graph([(i, (i + 1) % 6) for i in range(6)] + [(0, 3)])
            state = TrainingState(init_models(users, CFG, 9), users, seed=9)
            for r in range(5):
                training_round(state, g, r % 6, ProtocolConfig(H=2, n_u=2, lr=0.3, workers=workers), LdpConfig())
            return np.concatenate([state.models[u].theta for u in range(6)])

        a = run(1)
        np.testing.assert_array_equal(a, run(1))
        np.testing.assert_array_equal(a, run(3))

    def test_train_count_matches_participation(self):
        users = toy_users(5, identical=False)
        g = build_inter_user_graph([(0, 1), (1, 2), (2, 3), (3, 4)])
        state = TrainingState(init_models(users, CFG, 0), users)
        seen = Counter()
        for r in range(6):
            rep = training_round(state, g, r % 5, ProtocolConfig(H=2, n_u=1, lr=0.1), LdpConfig())
            seen.update(rep.participants)
        assert dict(state.train_count) == dict(seen)


def test_shared_initialization():
    models = init_models(range(3), CFG, 5)
    np.testing.assert_array_equal(models[0].theta, models[2].theta)
    assert models[0].theta is not models[1].theta
