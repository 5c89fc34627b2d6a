import numpy as np
import pytest

from kgate import autodiff as ad
from kgate.autodiff import Tensor
from kgate.errors import ShapeError, ValidationError
from kgate.layers import (
    LEAKY_SLOPE,
    AttentionOutput,
    Dims,
    ModelParams,
    gat_forward,
    grad_check,
    init_params,
    load_params,
    mha_forward,
    mlp_forward,
    save_params,
    zeroed_params,
)


def leaky(x, slope=LEAKY_SLOPE):
    return np.where(x > 0, x, slope * x)


def gat_oracle(features: np.ndarray, edges, params: ModelParams, prefix: str, heads: int) -> np.ndarray:
    """Dense brute-force restatement of the attention layer."""
    n, d = features.shape
    nbrs = {i: {i} for i in range(n)}
    for i, j in edges:
        nbrs[i].add(j)
        nbrs[j].add(i)
    outs = []
    for h in range(heads):
        w = params[f"{prefix}.h{h}.W"].data
        a = params[f"{prefix}.h{h}.a"].data
        wl, wr = w[:d], w[d:]
        out_h = np.zeros((n, w.shape[1]))
        for i in range(n):
            js = sorted(nbrs[i])
            logits = np.array([a @ leaky(features[i] @ wl + features[j] @ wr) for j in js])
            alpha = np.exp(logits - logits.max())
            alpha /= alpha.sum()
            out_h[i] = sum(alpha[k] * (features[j] @ wr) for k, j in enumerate(js))
        outs.append(out_h)
    return np.concatenate(outs, axis=1)


def mha_oracle(query, inputs, params: ModelParams, prefix: str, heads: int):
    x = np.stack(inputs)
    outs, weights = [], []
    for h in range(heads):
        q = query @ params[f"{prefix}.h{h}.Wq"].data
        k = x @ params[f"{prefix}.h{h}.Wk"].data
        v = x @ params[f"{prefix}.h{h}.Wv"].data
        scores = (k @ q) / np.sqrt(q.shape[0])
        if f"{prefix}.h{h}.b" in params.tensors:
            scores = scores + params[f"{prefix}.h{h}.b"].data
        p = np.exp(scores - scores.max())
        p /= p.sum()
        outs.append(p @ v)
        weights.append(p)
    return np.concatenate(outs) @ params[f"{prefix}.Wo"].data, np.stack(weights)


def strip_slot_bias(params: ModelParams) -> ModelParams:
    clone = params.copy()
    for name in [n for n in clone.tensors if n.endswith(".b") and "attn" in n]:
        del clone.tensors[name]
    return clone


@pytest.fixture
def dims():
    return Dims(d_in=6, d_state=8, d_hidden=8, heads=2)


@pytest.fixture
def params(dims):
    return init_params(dims, seed=5)


class TestGatForward:
    def test_isolated_node_self_loop_only(self, params):
        rng = np.random.default_rng(0)
        f = rng.normal(size=(1, 6))
        out = gat_forward(Tensor(f), [], params, "graph_gat")
        # Softmax over the single self edge is 1, so the output is the
        # per-head source projection of the node's own features.
        expected = np.concatenate(
            [f[0] @ params[f"graph_gat.h{h}.W"].data[6:] for h in range(2)]
        )
        assert np.allclose(out.data[0], expected)

    def test_symmetric_features_symmetric_outputs(self, params):
        f = np.tile(np.linspace(0.1, 0.6, 6), (2, 1))
        out = gat_forward(Tensor(f), [(0, 1)], params, "graph_gat")
        assert np.allclose(out.data[0], out.data[1])

    def test_three_node_path_matches_oracle(self, params):
        rng = np.random.default_rng(1)
        f = rng.normal(size=(3, 6))
        edges = [(0, 1), (1, 2)]
        out = gat_forward(Tensor(f), edges, params, "graph_gat")
        assert np.allclose(out.data, gat_oracle(f, edges, params, "graph_gat", heads=2))

    def test_single_head_hand_computation(self):
        # 2-d features, 1 head, hand-set weights; worked end to end by hand.
        dims = Dims(d_in=2, d_state=1, d_hidden=1, heads=1)
        p = init_params(dims, seed=0)
        p["graph_gat.h0.W"].data = np.array([[1.0], [0.0], [0.0], [1.0]])  # wl picks x0 of i, wr picks x1 of j
        p["graph_gat.h0.a"].data = np.array([1.0])
        f = np.array([[1.0, 2.0], [3.0, -4.0]])
        out = gat_forward(Tensor(f), [(0, 1)], p, "graph_gat", heads=1)
        # Node 0: neighbors {0, 1}; logits: self = leaky(1*1 + 2*1) = 3,
        # to 1 = leaky(1 - 4) = -0.63; messages are h_j[1]: 2 and -4.
        l_self, l_n1 = 3.0, LEAKY_SLOPE * -3.0
        a_self = np.exp(l_self) / (np.exp(l_self) + np.exp(l_n1))
        expected0 = a_self * 2.0 + (1 - a_self) * -4.0
        assert np.allclose(out.data[0], [expected0])

    def test_permutation_equivariance(self, params):
        rng = np.random.default_rng(2)
        f = rng.normal(size=(4, 6))
        edges = [(0, 1), (1, 2), (2, 3), (3, 0)]
        out = gat_forward(Tensor(f), edges, params, "graph_gat").data
        perm = [2, 0, 3, 1]  # new position of each original node
        f_p = f[np.argsort(perm)]
        edges_p = [(perm[i], perm[j]) for i, j in edges]
        out_p = gat_forward(Tensor(f_p), edges_p, params, "graph_gat").data
        assert np.allclose(out_p[np.array(perm)][np.argsort(perm)], out[np.argsort(perm)])

    def test_attention_rows_sum_to_one_via_oracle(self, params):
        rng = np.random.default_rng(3)
        f = rng.normal(size=(5, 6))
        edges = [(0, 1), (0, 2), (2, 3), (3, 4)]
        out = gat_forward(Tensor(f), edges, params, "graph_gat")
        assert np.allclose(out.data, gat_oracle(f, edges, params, "graph_gat", heads=2))

    def test_bad_edge_index(self, params):
        with pytest.raises(ShapeError):
            gat_forward(Tensor(np.ones((2, 6))), [(0, 5)], params, "graph_gat")

    def test_dim_mismatch_names_tensor(self, params):
        with pytest.raises(ShapeError, match="graph_gat.h0.W"):
            gat_forward(Tensor(np.ones((2, 4))), [(0, 1)], params, "graph_gat")


class TestMlpForward:
    def test_zero_weights_zero_output(self, dims):
        p = zeroed_params(dims)
        out = mlp_forward(Tensor(np.ones(8)), p, "score_head")
        assert np.allclose(out.data, 0.0)

    def test_identity_layer_passes_positive_input(self):
        dims = Dims(d_in=2, d_state=2, d_hidden=2, heads=1)
        p = init_params(dims, seed=0)
        p.tensors = {"only.W0": Tensor(np.eye(2), requires_grad=True), "only.b0": Tensor(np.zeros(2), requires_grad=True)}
        out = mlp_forward(Tensor(np.array([0.5, 2.0])), p, "only")
        assert np.allclose(out.data, [0.5, 2.0])

    def test_two_two_one_hand_weights(self):
        dims = Dims(d_in=2, d_state=2, d_hidden=2, heads=1)
        p = init_params(dims, seed=0)
        p.tensors = {
            "net.W0": Tensor(np.array([[1.0, -1.0], [0.5, 1.0]]), requires_grad=True),
            "net.b0": Tensor(np.array([0.0, -3.0]), requires_grad=True),
            "net.W1": Tensor(np.array([[2.0], [1.0]]), requires_grad=True),
            "net.b1": Tensor(np.array([0.25]), requires_grad=True),
        }
        x = np.array([1.0, 2.0])
        # Hidden pre-activations: [1*1 + 2*0.5, -1 + 2 - 3] = [2, -2]
        # LeakyReLU(0.21): [2, -0.42]; output: 2*2 + (-0.42)*1 + 0.25 = 3.83
        out = mlp_forward(Tensor(x), p, "net")
        assert np.allclose(out.data, [3.83])

    def test_matrix_input(self, params):
        out = mlp_forward(Tensor(np.ones((5, 8))), params, "score_head")
        assert out.data.shape == (5, 1)

    def test_missing_prefix(self, params):
        with pytest.raises(ShapeError):
            mlp_forward(Tensor(np.ones(8)), params, "nope")


class TestMhaForward:
    def test_single_input_weight_one(self, params):
        params = strip_slot_bias(params)
        rng = np.random.default_rng(4)
        q = rng.normal(size=8)
        x = rng.normal(size=8)
        out = mha_forward(Tensor(q), [Tensor(x)], params, "state_attn")
        assert np.allclose(out.weights, 1.0)
        expected = np.concatenate(
            [x @ params[f"state_attn.h{h}.Wv"].data for h in range(2)]
        ) @ params["state_attn.Wo"].data
        assert np.allclose(out.vector.data, expected)

    def test_two_identical_inputs_half_half(self, params):
        params = strip_slot_bias(params)
        rng = np.random.default_rng(5)
        q, x = rng.normal(size=8), rng.normal(size=8)
        out = mha_forward(Tensor(q), [Tensor(x), Tensor(x)], params, "state_attn")
        assert np.allclose(out.weights, 0.5)

    def test_hand_oracle_two_inputs(self, params):
        rng = np.random.default_rng(6)
        q = rng.normal(size=8)
        xs = [rng.normal(size=8) for _ in range(3)]  # slot count matches the bias
        out = mha_forward(Tensor(q), [Tensor(x) for x in xs], params, "state_attn")
        expected, weights = mha_oracle(q, xs, params, "state_attn", heads=2)
        assert np.allclose(out.vector.data, expected)
        assert np.allclose(out.weights, weights)

    def test_weights_nonnegative_sum_one_per_head(self, params):
        params = strip_slot_bias(params)
        rng = np.random.default_rng(7)
        out = mha_forward(
            Tensor(rng.normal(size=8)), [Tensor(rng.normal(size=8)) for _ in range(5)], params, "state_attn"
        )
        assert np.all(out.weights >= 0)
        assert np.allclose(out.weights.sum(axis=1), 1.0)

    def test_empty_inputs_rejected(self, params):
        with pytest.raises(ShapeError):
            mha_forward(Tensor(np.zeros(8)), [], params, "state_attn")


class TestCheckpoint:
    def test_round_trip_bit_identical_float64(self, params, tmp_path):
        path = tmp_path / "ckpt.json"
        save_params(params, path)
        restored = load_params(path)
        assert restored.names() == params.names()
        for name in params.names():
            assert restored[name].data.dtype == params[name].data.dtype
            assert np.array_equal(restored[name].data, params[name].data)

    def test_round_trip_float32(self, dims, tmp_path):
        p32 = init_params(dims, seed=1, dtype=np.float32)
        path = tmp_path / "ckpt32.json"
        save_params(p32, path)
        restored = load_params(path)
        assert restored.dtype == np.dtype(np.float32)
        for name in p32.names():
            assert np.array_equal(restored[name].data, p32[name].data)

    def test_forward_identical_after_reload(self, params, tmp_path, dims):
        path = tmp_path / "ckpt.json"
        save_params(params, path)
        restored = load_params(path)
        rng = np.random.default_rng(8)
        f = rng.normal(size=(3, 6))
        a = gat_forward(Tensor(f), [(0, 1)], params, "graph_gat").data
        b = gat_forward(Tensor(f), [(0, 1)], restored, "graph_gat").data
        assert np.array_equal(a, b)

    def test_version_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"version": 42}')
        with pytest.raises(ValidationError):
            load_params(path)


class TestInit:
    def test_seeded_determinism(self, dims):
        a = init_params(dims, seed=3)
        b = init_params(dims, seed=3)
        for name in a.names():
            assert np.array_equal(a[name].data, b[name].data)

    def test_glorot_bounds_and_zero_biases(self, dims):
        p = init_params(dims, seed=0)
        w = p["score_head.W0"].data
        bound = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
        assert np.all(np.abs(w) <= bound)
        assert np.allclose(p["score_head.b0"].data, 0.0)

    def test_heads_must_divide(self):
        with pytest.raises(ValidationError):
            Dims(d_in=4, d_state=6, d_hidden=8, heads=4)


class TestGradCheck:
    def test_linear_loss_tiny_error(self, dims):
        p = init_params(dims, seed=2)
        x = Tensor(np.linspace(-1, 1, 6))

        def loss_fn(params):
            out = gat_forward(ad.stack([x]), [], params, "graph_gat")
            return ad.tsum(out)

        assert grad_check(loss_fn, p, sample_frac=0.1) < 1e-6

    def test_composite_loss_small_error(self, dims):
        p = init_params(dims, seed=3)
        rng = np.random.default_rng(9)
        f = Tensor(rng.normal(size=(3, 6)))

        def loss_fn(params):
            enc = gat_forward(f, [(0, 1), (1, 2)], params, "graph_gat")
            q = ad.reshape(ad.gather_rows(enc, [0]), (8,))
            att = mha_forward(q, [ad.reshape(ad.gather_rows(enc, [i]), (8,)) for i in range(3)], params, "state_attn")
            score = mlp_forward(att.vector, params, "score_head")
            return ad.tsum(ad.mul(score, score))

        assert grad_check(loss_fn, p, sample_frac=0.1) < 1e-4

    def test_corrupted_gradient_detected(self, dims):
        p = init_params(dims, seed=4)
        x = Tensor(np.linspace(0.1, 1.0, 6))

        def loss_fn(params):
            out = gat_forward(ad.stack([x]), [], params, "graph_gat")
            return ad.tsum(ad.mul(out, out))

        p.zero_grad()
        loss_fn(p).backward()
        grads = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for name, t in p.tensors.items()}
        grads["graph_gat.h0.W"] *= 2.0  # inject a fault
        p.zero_grad()
        err = grad_check(loss_fn, p, sample_frac=1.0, grads=grads)
        assert err >= 0.5
