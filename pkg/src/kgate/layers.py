"""Differentiable building blocks: graph attention, MLP, multi-head attention.

All learnable state lives in a flat name-to-tensor map inside
``ModelParams``; the layer functions are stateless and look their weights
up by prefix. Weight matrices are stored (fan_in, fan_out) and applied as
``x @ W``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError, ValidationError

LEAKY_SLOPE = 0.21
CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Dims:
    """Model dimensions. Head counts must divide the state and hidden sizes."""

    d_in: int = 384
    d_state: int = 256
    d_hidden: int = 128
    heads: int = 4

    def __post_init__(self):
        if self.d_state % self.heads or self.d_hidden % self.heads:
            raise ValidationError(
                f"heads={self.heads} must divide d_state={self.d_state} and d_hidden={self.d_hidden}"
            )

    @property
    def dh_state(self) -> int:
        return self.d_state // self.heads

    @property
    def dh_hidden(self) -> int:
        return self.d_hidden // self.heads


class ModelParams:
    """All learnable tensors, keyed by dotted name.

    ``version`` increments on every optimizer step so downstream caches
    (notably the whole-graph encoding refresh) can invalidate.
    """

    def __init__(self, dims: Dims, tensors: dict[str, Tensor], dtype=np.float64):
        self.dims = dims
        self.tensors = tensors
        self.dtype = np.dtype(dtype)
        self.version = 0

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.tensors[name]
        except KeyError:
            raise ShapeError(f"unknown parameter {name!r}") from None

    def names(self) -> list[str]:
        return list(self.tensors)

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def bump_version(self) -> None:
        self.version += 1

    def copy(self) -> "ModelParams":
        clone = ModelParams(
            self.dims,
            {name: Tensor(t.data.copy(), requires_grad=True) for name, t in self.tensors.items()},
            dtype=self.dtype,
        )
        clone.version = self.version
        return clone

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.tensors.values())


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _add_mlp(tensors, rng, prefix: str, sizes: Sequence[int], dtype) -> None:
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        tensors[f"{prefix}.W{i}"] = Tensor(_glorot(rng, fan_in, fan_out, (fan_in, fan_out), dtype), requires_grad=True)
        tensors[f"{prefix}.b{i}"] = Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True)


def _add_gat(tensors, rng, prefix: str, d_in: int, dh: int, heads: int, dtype) -> None:
    for h in range(heads):
        tensors[f"{prefix}.h{h}.W"] = Tensor(
            _glorot(rng, 2 * d_in, dh, (2 * d_in, dh), dtype), requires_grad=True
        )
        tensors[f"{prefix}.h{h}.a"] = Tensor(_glorot(rng, dh, 1, (dh,), dtype), requires_grad=True)


def _block_identity(n_rows: int, n_cols: int, row_offset: int, dtype) -> np.ndarray:
    out = np.zeros((n_rows, n_cols), dtype=dtype)
    for j in range(n_cols):
        i = row_offset + j
        if i < n_rows:
            out[i, j] = 1.0
    return out


def _add_mha(tensors, rng, prefix: str, d_query: int, d_input: int, dh: int, heads: int, d_out: int, dtype, n_slots: int | None = None) -> None:
    # Queries and keys start random; values and the output projection start
    # as block identities, so at step zero the block returns the attention-
    # weighted mean of its inputs. Starting from a content-preserving mix
    # (instead of a random projection) keeps early training anchored to the
    # input space and stops tiny corpora from being solved by rote.
    for h in range(heads):
        tensors[f"{prefix}.h{h}.Wq"] = Tensor(_glorot(rng, d_query, dh, (d_query, dh), dtype), requires_grad=True)
        tensors[f"{prefix}.h{h}.Wk"] = Tensor(_glorot(rng, d_input, dh, (d_input, dh), dtype), requires_grad=True)
        tensors[f"{prefix}.h{h}.Wv"] = Tensor(_block_identity(d_input, dh, h * dh, dtype), requires_grad=True)
        if n_slots is not None:
            # Fixed-arity attention (the inputs are semantic slots, not a
            # set): a per-slot logit bias lets slot preferences train
            # directly instead of through query-key norm growth.
            tensors[f"{prefix}.h{h}.b"] = Tensor(np.zeros(n_slots, dtype=dtype), requires_grad=True)
    tensors[f"{prefix}.Wo"] = Tensor(_block_identity(heads * dh, d_out, 0, dtype), requires_grad=True)


def init_params(dims: Dims, seed: int = 0, dtype=np.float64) -> ModelParams:
    """Seeded Glorot-uniform initialization; biases start at zero.

    Two structured exceptions, both load-bearing at small corpus sizes:
    attention value and output projections start as block identities (the
    block initially returns the attention-weighted mean of its inputs),
    and the knowledge bridge starts with its identity bypass gated fully
    off, so ranking quality has to be earned by the knowledge loss rather
    than being present at initialization.
    """
    rng = np.random.default_rng(seed)
    dtype = np.dtype(dtype)
    tensors: dict[str, Tensor] = {}
    # Whole-graph encoding refresh: static process features (d_in) to d_state.
    _add_gat(tensors, rng, "graph_gat", dims.d_in, dims.dh_state, dims.heads, dtype)
    # Traversal scoring over [state ; node] features to d_hidden.
    _add_gat(tensors, rng, "score_gat", 2 * dims.d_state, dims.dh_hidden, dims.heads, dtype)
    _add_mlp(tensors, rng, "score_head", (dims.d_hidden, max(dims.d_hidden // 2, 4), 1), dtype)
    _add_mlp(tensors, rng, "node_attn", (1, 8, 1), dtype)
    _add_mha(tensors, rng, "modality_attn", dims.d_in, dims.d_in, dims.dh_state, dims.heads, dims.d_state, dtype, n_slots=3)
    _add_mha(tensors, rng, "state_attn", dims.d_state, dims.d_state, dims.dh_state, dims.heads, dims.d_state, dtype, n_slots=3)
    # Knowledge bridge into state space: a random projection plus an
    # identity bypass whose scalar gate starts closed. Only the knowledge
    # cross-entropy reaches the gate, so ranking collapses without it.
    tensors["know_proj.W"] = Tensor(
        _glorot(rng, dims.d_in, dims.d_state, (dims.d_in, dims.d_state), dtype), requires_grad=True
    )
    tensors["know_gate.a"] = Tensor(np.zeros(1, dtype=dtype), requires_grad=True)
    # Learned gain on the knowledge-score logits: softmax sharpness has its
    # own lever instead of pressuring the projection directions.
    tensors["know_scale.g"] = Tensor(np.ones(1, dtype=dtype), requires_grad=True)
    return ModelParams(dims, tensors, dtype=dtype)


def zeroed_params(dims: Dims, dtype=np.float64) -> ModelParams:
    """All-zero weights: every attention collapses to uniform. Test helper."""
    params = init_params(dims, seed=0, dtype=dtype)
    for t in params.tensors.values():
        t.data = np.zeros_like(t.data)
    return params


def mlp_forward(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    """Affine chain with LeakyReLU(0.21) between layers, linear output."""
    n_layers = 0
    while f"{prefix}.W{n_layers}" in params.tensors:
        n_layers += 1
    if n_layers == 0:
        raise ShapeError(f"no MLP weights under prefix {prefix!r}")
    out = x
    for i in range(n_layers):
        out = ad.add(ad.matmul(out, params[f"{prefix}.W{i}"]), params[f"{prefix}.b{i}"])
        if i < n_layers - 1:
            out = ad.leaky_relu(out, LEAKY_SLOPE)
    return out


def _directed_with_self_loops(n_nodes: int, edges: Sequence[tuple[int, int]]) -> tuple[np.ndarray, np.ndarray]:
    pairs = {(i, i) for i in range(n_nodes)}
    for i, j in edges:
        pairs.add((i, j))
        pairs.add((j, i))
    ordered = sorted(pairs)
    tgt = np.array([p[0] for p in ordered], dtype=np.int64)
    src = np.array([p[1] for p in ordered], dtype=np.int64)
    return tgt, src


def gat_forward(
    features: Tensor,
    edges: Sequence[tuple[int, int]],
    params: ModelParams,
    prefix: str,
    heads: int | None = None,
) -> Tensor:
    """One graph-attention layer over row-indexed node features.

    ``edges`` are undirected index pairs; self loops are always added so
    isolated nodes still produce output. Per head, the attention logit for
    updating node i from neighbor j is ``a . LeakyReLU([h_i ; h_j] @ W)``,
    normalized by softmax over j in N(i) plus i itself; the aggregated
    message is the h_j half-projection of W. Heads are concatenated.
    """
    if features.data.ndim != 2:
        raise ShapeError(f"features must be (n_nodes, d), got {features.shape}")
    n_nodes, d = features.data.shape
    if heads is None:
        heads = params.dims.heads
    for i, j in edges:
        if not (0 <= i < n_nodes and 0 <= j < n_nodes):
            raise ShapeError(f"edge ({i}, {j}) outside feature rows 0..{n_nodes - 1}")
    tgt, src = _directed_with_self_loops(n_nodes, edges)
    f_tgt = ad.gather_rows(features, tgt)
    f_src = ad.gather_rows(features, src)
    cat = ad.concat([f_tgt, f_src], axis=1)

    head_outputs = []
    for h in range(heads):
        w = params[f"{prefix}.h{h}.W"]
        if w.data.shape[0] != 2 * d:
            raise ShapeError(
                f"{prefix}.h{h}.W expects input dim {w.data.shape[0] // 2}, features have {d}"
            )
        z = ad.leaky_relu(ad.matmul(cat, w), LEAKY_SLOPE)
        logits = ad.matmul(z, params[f"{prefix}.h{h}.a"])
        # Stable per-target softmax; the shift is constant per segment.
        seg_max = np.full(n_nodes, -np.inf)
        np.maximum.at(seg_max, tgt, logits.data)
        shifted = ad.sub(logits, Tensor(seg_max[tgt]))
        e = ad.exp(shifted)
        denom = ad.segment_sum(e, tgt, n_nodes)
        alpha = ad.div(e, ad.gather_rows(denom, tgt))
        w_src = ad.slice_rows(w, d, 2 * d)
        messages = ad.matmul(f_src, w_src)
        weighted = ad.mul(messages, ad.reshape(alpha, (alpha.data.shape[0], 1)))
        head_outputs.append(ad.segment_sum(weighted, tgt, n_nodes))
    return ad.concat(head_outputs, axis=1)


@dataclass
class AttentionOutput:
    vector: Tensor
    weights: np.ndarray  # (heads, n_inputs), rows sum to 1


def mha_forward(
    query: Tensor,
    inputs: Sequence[Tensor],
    params: ModelParams,
    prefix: str,
    heads: int | None = None,
) -> AttentionOutput:
    """Scaled dot-product multi-head attention of one query over a set."""
    if not inputs:
        raise ShapeError("attention needs at least one input")
    if heads is None:
        heads = params.dims.heads
    x = ad.stack(list(inputs))
    head_outputs = []
    head_weights = []
    for h in range(heads):
        q = ad.matmul(query, params[f"{prefix}.h{h}.Wq"])
        k = ad.matmul(x, params[f"{prefix}.h{h}.Wk"])
        v = ad.matmul(x, params[f"{prefix}.h{h}.Wv"])
        dh = q.data.shape[0]
        scores = ad.div(ad.matmul(k, q), Tensor(np.sqrt(float(dh))))
        bias_name = f"{prefix}.h{h}.b"
        if bias_name in params.tensors:
            bias = params[bias_name]
            if bias.data.shape[0] != len(inputs):
                raise ShapeError(
                    f"{bias_name} covers {bias.data.shape[0]} slots, got {len(inputs)} inputs"
                )
            scores = ad.add(scores, bias)
        p = ad.softmax(scores)
        head_outputs.append(ad.matmul(p, v))
        head_weights.append(p.data.copy())
    merged = ad.concat(head_outputs, axis=0)
    out = ad.matmul(merged, params[f"{prefix}.Wo"])
    return AttentionOutput(vector=out, weights=np.stack(head_weights))


def save_params(params: ModelParams, path: str | Path) -> None:
    payload = {
        "version": CHECKPOINT_FORMAT_VERSION,
        "dims": {
            "d_in": params.dims.d_in,
            "d_state": params.dims.d_state,
            "d_hidden": params.dims.d_hidden,
            "heads": params.dims.heads,
        },
        "precision": str(params.dtype),
        "tensors": {
            name: {"shape": list(t.data.shape), "data": [float(v) for v in t.data.reshape(-1)]}
            for name, t in params.tensors.items()
        },
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_params(path: str | Path) -> ModelParams:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("version") != CHECKPOINT_FORMAT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {payload.get('version')!r}")
    dims = Dims(**payload["dims"])
    dtype = np.dtype(payload["precision"])
    tensors = {
        name: Tensor(
            np.asarray(rec["data"], dtype=dtype).reshape(rec["shape"]), requires_grad=True
        )
        for name, rec in payload["tensors"].items()
    }
    return ModelParams(dims, tensors, dtype=dtype)


def grad_check(
    loss_fn: Callable[[ModelParams], Tensor],
    params: ModelParams,
    eps: float = 1e-4,
    sample_frac: float = 0.05,
    seed: int = 0,
    grads: dict[str, np.ndarray] | None = None,
) -> float:
    """Compare analytic gradients against central finite differences.

    Samples a seeded fraction of coordinates per tensor (at least one
    each) and returns the maximum relative error. Pass ``grads`` to check
    an externally supplied gradient instead of recomputing.
    """
    if grads is None:
        params.zero_grad()
        loss = loss_fn(params)
        loss.backward()
        grads = {
            name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
            for name, t in params.tensors.items()
        }
        params.zero_grad()

    rng = np.random.default_rng(seed)
    max_rel = 0.0
    for name, tensor in params.tensors.items():
        size = tensor.data.size
        n_coords = max(1, int(round(sample_frac * size)))
        coords = rng.choice(size, size=min(n_coords, size), replace=False)
        for c in coords:
            idx = np.unravel_index(c, tensor.data.shape)
            original = tensor.data[idx]
            tensor.data[idx] = original + eps
            params.bump_version()
            f_plus = loss_fn(params).item()
            tensor.data[idx] = original - eps
            params.bump_version()
            f_minus = loss_fn(params).item()
            tensor.data[idx] = original
            params.bump_version()
            fd = (f_plus - f_minus) / (2 * eps)
            g = float(grads[name].reshape(-1)[c])
            rel = abs(g - fd) / max(abs(g), abs(fd), 1e-6)
            max_rel = max(max_rel, rel)
    return max_rel
