"""Graph attentive tokenization of a scene window.

Each vehicle's observation window is flattened into one feature vector, run
through a node aggregator (self term) and an attention-gated neighbor
aggregator, and summed over a fully connected vehicle graph in a single
propagation step. The aggregated features are reshaped back to one row per
observed step, joined with the relative trajectory and projected to tokens.

All functions are batched over the leading vehicle axis.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import numkit as nk
from .numkit import ParamStore, Tensor

EXPANSION = 2          # expand_features doubles the 4 per-step inputs
CHANNELS = 4 * EXPANSION   # feature channels per observed step after expansion
CHANNEL_REDUCTION = 4
PREFIX = "gat."


def init_gat_params(store: ParamStore, T_OH: int, d_model: int, rng: np.random.Generator) -> ParamStore:
    n_in, n_feat = 4 * T_OH, CHANNELS * T_OH
    hidden = CHANNELS // CHANNEL_REDUCTION
    xu = nk.xavier_uniform
    store.add("gat.expand.weight", xu(rng, n_in, n_feat))
    store.add("gat.expand.bias", np.zeros(n_feat))
    store.add("gat.node.beta", np.ones(1))
    store.add("gat.node.w0", xu(rng, n_feat, n_feat))
    store.add("gat.node.b0", np.zeros(n_feat))
    store.add("gat.node.w1", xu(rng, n_feat, n_feat))
    store.add("gat.node.b1", np.zeros(n_feat))
    store.add("gat.neighbor.w2", xu(rng, n_feat, n_feat))
    store.add("gat.neighbor.b2", np.zeros(n_feat))
    store.add("gat.channel.w_a", xu(rng, CHANNELS, hidden))
    store.add("gat.channel.b_a", np.zeros(hidden))
    store.add("gat.channel.w_b", xu(rng, hidden, CHANNELS))
    store.add("gat.channel.b_b", np.zeros(CHANNELS))
    store.add("gat.spatial.weight", xu(rng, 2, 1))
    store.add("gat.spatial.bias", np.zeros(1))
    store.add("gat.token.weight", xu(rng, CHANNELS + 2, d_model))
    store.add("gat.token.bias", np.zeros(d_model))
    return store


def relative_trajectory(C: np.ndarray) -> np.ndarray:
    """Displacements from the first observed point, ``(..., T, 2)``."""
    C = np.asarray(C, dtype=np.float64)
    return C - C[..., :1, :]


def expand_features(C, dC, params: ParamStore, slope: float = 0.01) -> Tensor:
    """``(N, T, 2)`` coordinates and relative trajectory -> ``(N, 8T)``."""
    C, dC = nk.as_tensor(C), nk.as_tensor(dC)
    n, T = C.shape[0], C.shape[1]
    feats = nk.reshape(nk.concat([C, dC], axis=-1), (n, 4 * T))
    return nk.leaky_relu(feats @ params["gat.expand.weight"] + params["gat.expand.bias"], slope)


def aggregate_node(E: Tensor, params: ParamStore, slope: float = 0.01) -> Tensor:
    h = nk.leaky_relu((E * params["gat.node.beta"]) @ params["gat.node.w0"] + params["gat.node.b0"], slope)
    return nk.leaky_relu(h @ params["gat.node.w1"] + params["gat.node.b1"], slope)


def channel_gates(F: Tensor, params: ParamStore, slope: float = 0.01) -> Tensor:
    """Per-channel sigmoid gates for an ``(N, T, C)`` map, shape ``(N, 1, C)``."""

    def mlp(z):
        h = nk.leaky_relu(z @ params["gat.channel.w_a"] + params["gat.channel.b_a"], slope)
        return h @ params["gat.channel.w_b"] + params["gat.channel.b_b"]

    logits = mlp(nk.mean(F, axis=1, keepdims=True)) + mlp(nk.max(F, axis=1, keepdims=True))
    return nk.sigmoid(logits)


def spatial_gates(F: Tensor, params: ParamStore) -> Tensor:
    """Per-step sigmoid gates for an ``(N, T, C)`` map, shape ``(N, T, 1)``."""
    pooled = nk.concat([nk.mean(F, axis=-1, keepdims=True), nk.max(F, axis=-1, keepdims=True)], axis=-1)
    return nk.sigmoid(pooled @ params["gat.spatial.weight"] + params["gat.spatial.bias"])


def aggregate_neighbor(E: Tensor, params: ParamStore, slope: float = 0.01) -> Tensor:
    n, width = E.shape
    T = width // CHANNELS
    E1 = nk.leaky_relu(E @ params["gat.neighbor.w2"] + params["gat.neighbor.b2"], slope)
    F = nk.reshape(E1, (n, T, CHANNELS))
    M = F * channel_gates(F, params, slope)
    out = M * spatial_gates(M, params) + F
    return nk.reshape(out, (n, width))


def graph_aggregate(E: Tensor, params: ParamStore, slope: float = 0.01) -> Tensor:
    """Self term plus the sum of neighbor messages over a complete graph."""
    n = E.shape[0]
    adjacency = np.ones((n, n)) - np.eye(n)
    return aggregate_node(E, params, slope) + nk.matmul(adjacency, aggregate_neighbor(E, params, slope))


@lru_cache(maxsize=64)
def _encoding_table(length: int, d_model: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    two_i = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, two_i / d_model)
    pe = np.empty((length, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    pe.setflags(write=False)
    return pe


def temporal_encoding(length: int, d_model: int, start: int = 0) -> np.ndarray:
    """Sinusoidal encoding rows for positions ``start .. start+length-1``."""
    if d_model % 2:
        raise ValueError(f"temporal encoding needs an even d_model, got {d_model}")
    return _encoding_table(start + length, d_model)[start:]


def tokenize(observed, params: ParamStore, d_model: int, slope: float = 0.01,
             relative: np.ndarray | None = None) -> Tensor:
    """Token sequences ``(N, T_OH, d_model)`` for the N vehicles of one scene.

    ``relative`` replaces the relative trajectory computed from ``observed``;
    the model passes a standardised copy here.
    """
    observed = np.asarray(observed, dtype=np.float64)
    n, T = observed.shape[0], observed.shape[1]
    dC = relative_trajectory(observed) if relative is None else np.asarray(relative, dtype=np.float64)
    E = expand_features(observed, dC, params, slope)
    G = nk.reshape(graph_aggregate(E, params, slope), (n, T, CHANNELS))
    feats = nk.concat([G, nk.as_tensor(dC)], axis=-1)
    tokens = feats @ params["gat.token.weight"] + params["gat.token.bias"]
    return tokens + temporal_encoding(T, d_model)
