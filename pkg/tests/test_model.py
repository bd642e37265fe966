import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from legogen.dataset import (AddEdge, AddNode, BuildRecord, ChooseDest, ChooseOffset, StopEdges,
                             StopNodes, derive_decision_trace)
from legogen.harness import random_valid_assembly
from legogen.lego import Direction, Edge, LegoGraph, Orientation, check_validity
from legogen.model import (DGMLG, GenerationState, ModelConfig, TraceError, add_edge_distribution,
                           add_node_distribution, destination_distribution, offset_distribution,
                           sample, sequence_nll, thermometer_bits, thermometer_decode,
                           thermometer_index_probs, train)
from legogen.nn import tensor as T
from legogen.nn.tensor import Tape, Tensor, backward

from oracles import rel_error

X, Y = Orientation.ALONG_X, Orientation.ALONG_Y
SMALL = dict(node_dim=6, edge_dim=3, graph_dim=5, num_classes=3, head_hidden=(7,))


def small_model(seed=0, **kw):
    return DGMLG(ModelConfig(**{**SMALL, **kw}), seed=seed)


def zero_model(**kw):
    m = small_model(**kw)
    for p in m.params.tensors():
        p.data = np.zeros_like(p.data)
    return m


def state_for(model, g, class_id=0):
    st_ = GenerationState(model, class_id)
    for o in g.nodes:
        st_.add_node(o)
    for e in g.edges:
        st_.add_edge(e.src, e.dst, e.dx, e.dy)
    return st_


SINGLE = [AddNode(X), StopEdges(), StopNodes()]


class TestConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            ModelConfig(rounds=0)
        with pytest.raises(ValueError):
            ModelConfig(offset_head="binary")

    def test_checkpoint_round_trip(self, tmp_path):
        m = small_model(3, offset_head="thermometer")
        m.save(tmp_path / "m.json", extra={"epoch": 4})
        back = DGMLG.load(tmp_path / "m.json")
        assert back.config == m.config
        for k, v in m.params.items():
            assert np.array_equal(back.params[k].data, v.data)


class TestEmbeddings:
    def test_same_orientation_same_embedding(self):
        m = small_model()
        c = m.cond(1)
        assert np.array_equal(m.init_node(X, c).data, m.init_node(X, c).data)
        assert not np.array_equal(m.init_node(X, c).data, m.init_node(Y, c).data)

    def test_zero_init_map(self):
        m = zero_model()
        assert not m.init_node(X, m.cond(0)).data.any()

    def test_edgeless_update_is_gru_of_zero(self):
        from legogen.nn.layers import gru_cell
        m = small_model(1)
        h = Tensor(np.random.default_rng(0).normal(size=(3, 6)))
        got = m.propagate(h, None, [], rounds=1).data
        want = gru_cell(m.params, "prop0.gru", Tensor(np.zeros((3, 12))), h).data
        assert np.array_equal(got, want)

    def test_zero_rounds(self):
        m = small_model()
        h = Tensor(np.ones((2, 6)))
        assert np.array_equal(m.propagate(h, None, [], rounds=0).data, h.data)

    def test_path_graph_hand_unrolled(self):
        m = small_model(2)
        p = {k: v.data for k, v in m.params.items()}
        edges = [Edge(0, 1, 1, 0), Edge(1, 2, 0, 1)]
        rng = np.random.default_rng(3)
        h0 = rng.normal(size=(3, 6))
        s = m.init_edges(edges)
        got = m.propagate(Tensor(h0), s, edges).data

        sig = lambda v: 1 / (1 + np.exp(-v))
        sd = s.data
        h = h0.copy()
        for t in range(2):
            W, b = p[f"prop{t}.msg.weight"], p[f"prop{t}.msg.bias"][0]
            a = np.zeros((3, 12))
            for i, e in enumerate(edges):
                # forward message to the upper brick, reversed message to the lower one
                a[e.dst] += np.concatenate([h[e.src], h[e.dst], sd[i], [0.0]]) @ W + b
                a[e.src] += np.concatenate([h[e.dst], h[e.src], sd[i], [1.0]]) @ W + b
            wi, wh = p[f"prop{t}.gru.w_input"], p[f"prop{t}.gru.w_hidden"]
            bi, bh = p[f"prop{t}.gru.b_input"], p[f"prop{t}.gru.b_hidden"]
            gi, gh = a @ wi + bi, h @ wh + bh
            r = sig(gi[:, :6] + gh[:, :6])
            z = sig(gi[:, 6:12] + gh[:, 6:12])
            n = np.tanh(gi[:, 12:] + r * gh[:, 12:])
            h = (1 - z) * n + z * h
        assert np.allclose(got, h, atol=1e-12)

    def test_empty_graph_embedding(self):
        m = small_model()
        assert not m.graph_embedding(None).data.any()

    def test_gate_saturated(self):
        m = small_model()
        m.params["graph.gm.bias"].data[:] = 60.0
        h = Tensor(np.random.default_rng(1).normal(size=(1, 6)))
        want = h.data @ m.params["graph.fm.weight"].data + m.params["graph.fm.bias"].data
        assert np.allclose(m.graph_embedding(h).data, want)

    def test_edge_storage_order_invariance(self):
        m = small_model(4)
        g = random_valid_assembly(6, np.random.default_rng(2))
        a = state_for(m, g)
        b = state_for(m, LegoGraph(g.nodes, tuple(reversed(g.edges))))
        assert np.allclose(a.graph_embedding().data, b.graph_embedding().data, atol=1e-12)
        assert np.allclose(add_edge_distribution(a, 3), add_edge_distribution(b, 3), atol=1e-12)


class TestHeads:
    def test_zero_weight_heads_uniform(self):
        m = zero_model()
        s = state_for(m, LegoGraph([X, X, Y], [Edge(0, 1, 0, 0)]))
        assert np.allclose(add_node_distribution(s), 1 / 3)
        assert np.allclose(add_edge_distribution(s, 2), 1 / 3)
        assert np.allclose(destination_distribution(s, 2, Direction.INCOMING, [0, 1]), 1 / 2)
        px, py = offset_distribution(s, 0, 2)
        assert np.allclose(px, 1 / 7) and np.allclose(py, 1 / 7)

    def test_one_candidate(self):
        s = state_for(small_model(), LegoGraph([X, X], []))
        assert destination_distribution(s, 1, Direction.OUTGOING, [0]).tolist() == [1.0]

    def test_interchangeable_candidates(self):
        # two identical bases under brick 2: equal embeddings, equal scores
        m = small_model(5)
        s = state_for(m, LegoGraph([X, X, X], []))
        p = destination_distribution(s, 2, Direction.INCOMING, [0, 1])
        assert p[0] == p[1]

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 7), st.integers(0, 10 ** 6), st.sampled_from(["categorical", "thermometer"]))
    def test_distributions_are_normalised(self, n, seed, head):
        m = small_model(seed % 7, offset_head=head)
        g = random_valid_assembly(n, np.random.default_rng(seed))
        s = state_for(m, g, seed % 3)
        for p in [add_node_distribution(s), add_edge_distribution(s, n - 1)]:
            assert (p >= 0).all() and abs(p.sum() - 1) <= 1e-9
        if n > 1:
            p = destination_distribution(s, n - 1, Direction.INCOMING, list(range(n - 1)))
            assert (p >= 0).all() and abs(p.sum() - 1) <= 1e-9
            for p in offset_distribution(s, 0, n - 1):
                assert (p >= 0).all() and abs(p.sum() - 1) <= 1e-9


class TestThermometer:
    def test_bits_for_three(self):
        assert thermometer_bits(3).tolist() == [1, 1, 1, 0, 0, 0]

    def test_decode(self):
        assert thermometer_decode([1, 1, 0, 0, 0, 0]) == 2
        assert thermometer_decode([1, 1, 0, 1, 1, 1]) == 2
        assert thermometer_decode([1, 1, 0, 0, 0, 0]) - 3 == -1

    def test_index_probs_sum(self):
        q = np.random.default_rng(0).random(6)
        p = thermometer_index_probs(q)
        assert len(p) == 7 and np.isclose(p.sum(), 1)
        assert np.isclose(p[0], 1 - q[0]) and np.isclose(p[6], np.prod(q))


class TestLikelihood:
    def test_uniform_single_brick(self):
        nll, steps = sequence_nll(zero_model(), SINGLE, 0)
        assert np.isclose(float(nll.data.sum()), 3 * math.log(3))
        assert len(steps) == 3

    def test_saturated_heads(self):
        m = zero_model()
        m.params["add_node.1.bias"].data[0, X.index] = 40.0
        m.params["add_edge.1.bias"].data[0, 0] = 40.0
        # the second add_node decision wants STOP: steer it with the graph embedding
        st0 = [AddNode(X), StopEdges()]
        nll, steps = sequence_nll(m, st0 + [StopNodes()], 0)
        assert steps[0].logp > -1e-12 and steps[1].logp > -1e-12

    def test_nll_is_negative_sum_of_steps(self):
        rng = np.random.default_rng(8)
        for head in ["categorical", "thermometer"]:
            m = small_model(1, offset_head=head)
            for _ in range(5):
                g = random_valid_assembly(int(rng.integers(1, 7)), rng)
                nll, steps = sequence_nll(m, derive_decision_trace(g), 2)
                assert np.isclose(float(nll.data.sum()), -sum(s.logp for s in steps), rtol=1e-12)

    def test_malformed_traces(self):
        m = small_model()
        with pytest.raises(TraceError):
            sequence_nll(m, [AddNode(X), StopEdges()], 0)
        with pytest.raises(TraceError):
            sequence_nll(m, [StopEdges()], 0)
        with pytest.raises(TraceError):
            sequence_nll(m, [AddNode(X), AddEdge(Direction.INCOMING), ChooseDest(0)], 0)

    def test_sampled_log_probs_match_replayed_heads(self):
        # unrestricted sampling masks only the first STOP, so each logged probability
        # is the head's own probability for the chosen action in the replayed state
        m = small_model(6)
        for seed in range(5):
            g, logps = sample(m, 1, restricted=False, max_nodes=6, rng=seed)
            s = GenerationState(m, 1)
            edges = iter(g.edges)
            total = 0.0
            v = direction = None
            for step in logps:
                if step.kind == "add_node":
                    p = add_node_distribution(s)
                    if s.num_nodes == 0:
                        # the first brick is mandatory: STOP is masked out
                        p = p / (1 - p[2])
                    total += math.log(p[step.index])
                    if step.index != 2:
                        v = s.add_node(Orientation.from_index(step.index))
                elif step.kind == "add_edge":
                    total += math.log(add_edge_distribution(s, v)[step.index])
                    direction = Direction.INCOMING if step.index == 1 else Direction.OUTGOING
                elif step.kind == "dest":
                    p = destination_distribution(s, v, direction, sorted(s.candidates(v)))
                    total += math.log(p[step.index])
                else:
                    e = next(edges)
                    px, py = offset_distribution(s, e.src, e.dst)
                    total += math.log(px[e.dx + 3] * py[e.dy + 3])
                    s.add_edge(e.src, e.dst, e.dx, e.dy)
            assert np.isclose(total, sum(x.logp for x in logps), atol=1e-9)


class TestSampling:
    def test_max_nodes_one(self):
        g, _ = sample(small_model(), 0, max_nodes=1, rng=0)
        assert g.num_nodes <= 1

    def test_restricted_always_valid(self):
        m = small_model(9)
        for seed in range(30):
            g, _ = sample(m, seed % 3, restricted=True, max_nodes=12, rng=seed)
            assert check_validity(g).valid

    def test_fixed_seed(self):
        m = small_model(9)
        a = sample(m, 2, restricted=True, max_nodes=10, rng=123)
        b = sample(m, 2, restricted=True, max_nodes=10, rng=123)
        assert a == b

    def test_unrestricted_reports_invalid_sometimes(self):
        m = small_model(9)
        flags = [check_validity(sample(m, 0, max_nodes=10, rng=s)[0]).valid for s in range(40)]
        assert not all(flags)


def _numeric_coords(f, tensors, coords, h=1e-5):
    out = []
    for t, i in coords:
        old = t.data[i]
        t.data[i] = old + h
        fp = f()
        t.data[i] = old - h
        fm = f()
        t.data[i] = old
        out.append((fp - fm) / (2 * h))
    return np.array(out)


HEADS = ["add_node", "add_edge", "dest", "offset_cat", "offset_thermo"]


@pytest.mark.parametrize("head", HEADS)
@pytest.mark.parametrize("seed", range(20))
def test_head_gradients(head, seed):
    """Each head's loss against central differences, through propagation and embeddings."""
    rng = np.random.default_rng(1000 + seed)
    m = small_model(seed, offset_head="thermometer" if head == "offset_thermo" else "categorical")
    for p in m.params.tensors():
        p.data = p.data + rng.normal(scale=0.2, size=p.shape)
    g = random_valid_assembly(int(rng.integers(2, 6)), rng)
    n = g.num_nodes
    cls = int(rng.integers(0, 3))

    def loss():
        s = state_for(m, g, cls)
        if head == "add_node":
            return T.cross_entropy(s.add_node_logits(), int(rng_target[0]) % 3)
        if head == "add_edge":
            return T.cross_entropy(s.add_edge_logits(n - 1), int(rng_target[0]) % 3)
        if head == "dest":
            return T.cross_entropy(s.dest_logits(n - 1, Direction.OUTGOING, list(range(n - 1))),
                                   int(rng_target[0]) % (n - 1))
        lx, ly = s.offset_logits(0, n - 1)
        if head == "offset_cat":
            return T.add(T.cross_entropy(lx, int(rng_target[0]) % 7), T.cross_entropy(ly, 3))
        return T.add(T.bernoulli_ce(lx, thermometer_bits(int(rng_target[0]) % 7)),
                     T.bernoulli_ce(ly, thermometer_bits(2)))

    rng_target = rng.integers(0, 100, size=1)
    m.params.zero_grad()
    with Tape():
        backward(loss())
    names = [k for k, p in m.params.items() if p.grad is not None]
    assert names
    # every entry of the head's own parameters plus a random sample of the rest
    coords = []
    prefix = "offset_" if head.startswith("offset") else head
    for k in names:
        p = m.params[k]
        idx = list(np.ndindex(p.shape))
        if k.startswith(prefix) and p.data.size <= 60:
            chosen = idx
        else:
            chosen = [idx[j] for j in rng.choice(len(idx), size=min(3, len(idx)), replace=False)]
        coords += [(p, i) for i in chosen]
    analytic = np.array([p.grad[i] for p, i in coords])
    numeric = _numeric_coords(lambda: float(loss().data.sum()), None, coords)
    assert rel_error(analytic, numeric) < 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_sequence_nll_gradient(seed):
    rng = np.random.default_rng(2000 + seed)
    m = small_model(seed, offset_head="thermometer" if seed % 2 else "categorical")
    g = random_valid_assembly(int(rng.integers(1, 5)), rng)
    trace = derive_decision_trace(g)
    f = lambda: float(sequence_nll(m, trace, seed % 3)[0].data.sum())
    m.params.zero_grad()
    with Tape():
        backward(sequence_nll(m, trace, seed % 3)[0])
    coords = []
    for k, p in m.params.items():
        if p.grad is None:
            continue
        idx = list(np.ndindex(p.shape))
        coords += [(p, idx[j]) for j in rng.choice(len(idx), size=min(2, len(idx)), replace=False)]
    analytic = np.array([p.grad[i] for p, i in coords])
    assert rel_error(analytic, _numeric_coords(f, None, coords)) < 1e-4


class TestTraining:
    def _records(self, n=2):
        return [BuildRecord("a", 0, random_valid_assembly(3, np.random.default_rng(i))) for i in range(n)]

    def test_lr_zero_constant_loss(self):
        m = small_model()
        h = train(m, self._records(), epochs=3, lr=0.0, rng=0)
        assert len({round(s.mean_nll, 12) for s in h}) == 1

    def test_duplicated_dataset_same_losses(self):
        recs = self._records(1)
        a = train(small_model(), recs, epochs=3, batch_size=1, lr=1e-2, rng=0)
        b = train(small_model(), recs * 2, epochs=3, batch_size=2, lr=1e-2, rng=0)
        assert np.allclose([s.mean_nll for s in a], [s.mean_nll for s in b], rtol=1e-12)

    def test_single_brick_learns_to_stop(self):
        rec = [BuildRecord("a", 0, LegoGraph([X], []))]
        m = small_model()
        train(m, rec, epochs=60, lr=1e-2, rng=0)
        s = GenerationState(m, 0)
        s.add_node(X)
        assert add_node_distribution(s)[2] > 0.95
        assert add_edge_distribution(s, 0)[0] > 0.95

    def test_deterministic(self):
        recs = self._records(3)
        a = small_model(2)
        b = small_model(2)
        ha = train(a, recs, epochs=2, batch_size=2, lr=1e-3, rng=5)
        hb = train(b, recs, epochs=2, batch_size=2, lr=1e-3, rng=5)
        assert [s.mean_nll for s in ha] == [s.mean_nll for s in hb]
        assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            train(small_model(), [], epochs=1)

    def test_checkpoints_written(self, tmp_path):
        train(small_model(), self._records(1), epochs=2, lr=1e-3, rng=0, checkpoint_dir=tmp_path)
        assert sorted(p.name for p in tmp_path.iterdir()) == ["epoch_0000.json", "epoch_0001.json"]
