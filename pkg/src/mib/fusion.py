"""Multimodal fusion networks.

Inputs are always ordered (a, v, l), or the configured sub-sequence of it
for unimodal/bimodal systems.  Each input is a (d,) vector or an (n, d) batch.

Graph fusion formula (all weights shared across nodes):

    nodes  v_m  = x_m                         for each modality m
    pairs  v_mk = W_p (x_m * x_k) + b_p       for each unordered pair m < k
    score  s_j  = w_s . v_j                   for all nodes and pairs j
    alpha       = softmax(s)
    output      = W_o (sum_j alpha_j v_j) + b_o
"""

from __future__ import annotations

import enum
from itertools import combinations
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigurationError
from .networks import Linear, Module
from .tensor import Parameter, Tensor


class FusionKind(str, enum.Enum):
    CONCAT = "concat"
    ADD = "add"
    MUL = "mul"
    TENSOR = "tensor"
    GRAPH = "graph"
    POE = "poe"

    @classmethod
    def parse(cls, value) -> "FusionKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ConfigurationError(f"unknown fusion kind {value!r} (expected one of {names})")


def _check_equal_dims(xs: Sequence[Tensor], what: str) -> None:
    dims = {x.shape[-1] for x in xs}
    if len(dims) != 1:
        raise ConfigurationError(f"{what} fusion needs equal input dims, got {sorted(dims)}")


def fuse_concat(*xs) -> Tensor:
    return T.concat([T.as_tensor(x) for x in xs], axis=-1)


def fuse_add(*xs) -> Tensor:
    xs = [T.as_tensor(x) for x in xs]
    _check_equal_dims(xs, "addition")
    out = xs[0]
    for x in xs[1:]:
        out = out + x
    return out


def fuse_mul(*xs) -> Tensor:
    xs = [T.as_tensor(x) for x in xs]
    _check_equal_dims(xs, "multiplication")
    out = xs[0]
    for x in xs[1:]:
        out = out * x
    return out


def _extend_with_one(x: Tensor) -> Tensor:
    return T.concat([x, np.ones(x.shape[:-1] + (1,))], axis=-1)


def outer_product_features(*xs) -> Tensor:
    """Flattened outer product of the 1-extended inputs, row-major in input order.

    The constant 1 sits at the last index of each extended vector, so the entry
    at (i, d_v, d_l) equals the extended x_a[i].
    """
    xs = [T.as_tensor(x) for x in xs]
    out = _extend_with_one(xs[0])
    lead = out.shape[:-1]
    for x in xs[1:]:
        ext = _extend_with_one(x)
        prod = T.reshape(out, lead + (out.shape[-1], 1)) * T.reshape(ext, lead + (1, ext.shape[-1]))
        out = T.reshape(prod, lead + (-1,))
    return out


class TensorFusion(Module):
    """Outer-product fusion followed by a linear projection to ``d_out``."""

    def __init__(self, d_ins: Sequence[int], d_out: int, name: str, rng: np.random.Generator):
        self.d_ins = tuple(d_ins)
        self.pre_dim = int(np.prod([d + 1 for d in self.d_ins]))
        self.proj = Linear(self.pre_dim, d_out, f"{name}.proj", rng)
        self.out_dim = d_out

    def __call__(self, *xs) -> Tensor:
        return self.proj(outer_product_features(*xs))


def tensor_fusion(xa, xv, xl, params: TensorFusion) -> Tensor:
    return params(xa, xv, xl)


class GraphFusion(Module):
    """Attention over modality nodes and pairwise interaction nodes."""

    def __init__(self, d: int, n_inputs: int, d_out: int, name: str, rng: np.random.Generator):
        self.d, self.n_inputs, self.out_dim = d, n_inputs, d_out
        self.pair = Linear(d, d, f"{name}.pair", rng) if n_inputs > 1 else None
        # no score bias: softmax is invariant to a shift shared by all logits
        self.score = Parameter(T.glorot_uniform(rng, 1, d).reshape(d), f"{name}.score")
        self.proj = Linear(d, d_out, f"{name}.proj", rng)

    def vertices(self, xs: Sequence[Tensor]) -> list[Tensor]:
        nodes = list(xs)
        for i, j in combinations(range(len(xs)), 2):
            nodes.append(self.pair(xs[i] * xs[j]))
        return nodes

    def attention(self, nodes: Sequence[Tensor]) -> Tensor:
        w = T.reshape(self.score, (-1, 1))
        logits = T.concat([T.matmul(T.reshape(v, (-1, self.d)), w) for v in nodes], axis=-1)
        lead = nodes[0].shape[:-1]
        logits = T.reshape(logits, lead + (len(nodes),))
        return T.softmax(logits, axis=-1)

    def __call__(self, *xs) -> Tensor:
        xs = [T.as_tensor(x) for x in xs]
        _check_equal_dims(xs, "graph")
        nodes = self.vertices(xs)
        alpha = self.attention(nodes)
        V = T.stack(nodes, axis=-2)
        mixed = T.tsum(V * T.reshape(alpha, alpha.shape + (1,)), axis=-2)
        return self.proj(mixed)


def graph_fusion(xa, xv, xl, params: GraphFusion) -> Tensor:
    return params(xa, xv, xl)


class Fusion(Module):
    """Vector fusion network selected by kind (PoE is handled on Gaussians, not here)."""

    def __init__(self, kind: FusionKind, d_ins: Sequence[int], d_out: int, name: str,
                 rng: np.random.Generator):
        kind = FusionKind.parse(kind)
        self.kind = kind
        d_ins = tuple(d_ins)
        if kind in (FusionKind.ADD, FusionKind.MUL, FusionKind.GRAPH) and len(set(d_ins)) != 1:
            raise ConfigurationError(f"{kind.value} fusion needs equal input dims, got {d_ins}")
        self.net = None
        if kind == FusionKind.CONCAT:
            self.out_dim = sum(d_ins)
        elif kind in (FusionKind.ADD, FusionKind.MUL):
            self.out_dim = d_ins[0]
        elif kind == FusionKind.TENSOR:
            self.net = TensorFusion(d_ins, d_out, name, rng)
            self.out_dim = d_out
        elif kind == FusionKind.GRAPH:
            self.net = GraphFusion(d_ins[0], len(d_ins), d_out, name, rng)
            self.out_dim = d_out
        else:
            raise ConfigurationError("PoE fuses Gaussians; it is not a vector fusion network")

    def __call__(self, xs: Sequence[Tensor]) -> Tensor:
        if self.kind == FusionKind.CONCAT:
            return fuse_concat(*xs)
        if self.kind == FusionKind.ADD:
            return fuse_add(*xs)
        if self.kind == FusionKind.MUL:
            return fuse_mul(*xs)
        return self.net(*xs)
