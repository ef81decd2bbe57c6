"""Decoder-only transformer that turns token sequences into future positions.

Sequences are ``(B, L, d_model)`` with one row per vehicle. The first
``T_OH`` positions hold the tokenizer output; every later position holds the
embedding of one future per-step displacement. The output head at position
``p`` predicts the displacement of future step ``p - T_OH + 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .numkit import ParamStore, Tensor
from .tokenizer import temporal_encoding

PREFIX = "tp."


@dataclass
class PredictedTrajectory:
    """Absolute positions and the per-step displacements they came from."""

    positions: np.ndarray
    deltas: np.ndarray

    @classmethod
    def from_deltas(cls, last_observed, deltas) -> "PredictedTrajectory":
        deltas = np.asarray(deltas, dtype=np.float64)
        last = np.asarray(last_observed, dtype=np.float64)
        return cls(positions=last[..., None, :] + np.cumsum(deltas, axis=-2), deltas=deltas)


def init_predictor_params(store: ParamStore, d_model: int, n_layers: int = 8, n_heads: int = 4,
                          d_ff: int = 256, rng: np.random.Generator | None = None) -> ParamStore:
    if d_model % n_heads:
        raise ValueError(f"d_model={d_model} is not divisible by n_heads={n_heads}")
    rng = rng or np.random.default_rng(0)
    d_k = d_model // n_heads
    xu = nk.xavier_uniform
    store.add("tp.embed.weight", xu(rng, 2, d_model))
    store.add("tp.embed.bias", np.zeros(d_model))
    for layer in range(1, n_layers + 1):
        p = f"tp.layer{layer}."
        for h in range(n_heads):
            for proj in ("wq", "wk", "wv"):
                store.add(f"{p}attn.head{h}.{proj}", xu(rng, d_model, d_k))
        store.add(p + "attn.wo", xu(rng, n_heads * d_k, d_model))
        store.add(p + "ln1.gain", np.ones(d_model))
        store.add(p + "ln1.bias", np.zeros(d_model))
        store.add(p + "ffn.w3", xu(rng, d_model, d_ff))
        store.add(p + "ffn.b3", np.zeros(d_ff))
        store.add(p + "ffn.w4", xu(rng, d_ff, d_model))
        store.add(p + "ffn.b4", np.zeros(d_model))
        store.add(p + "ln2.gain", np.ones(d_model))
        store.add(p + "ln2.bias", np.zeros(d_model))
    store.add("tp.final.gain", np.ones(d_model))
    store.add("tp.final.bias", np.zeros(d_model))
    store.add("tp.head.weight", xu(rng, d_model, 2))
    store.add("tp.head.bias", np.zeros(2))
    return store


def causal_mask(length: int) -> np.ndarray:
    """Boolean ``(L, L)`` matrix; entry ``(q, k)`` is admissible iff ``k <= q``."""
    return np.tril(np.ones((length, length), dtype=bool))


def additive_mask(length: int) -> np.ndarray:
    return np.where(causal_mask(length), 0.0, -np.inf)


def attention(Q: Tensor, K: Tensor, V: Tensor, mask: np.ndarray | None = None) -> Tensor:
    d_k = Q.shape[-1]
    logits = nk.matmul(Q, nk.transpose(K)) * (1.0 / math.sqrt(d_k))
    if mask is not None:
        logits = logits + (mask if mask.dtype != bool else np.where(mask, 0.0, -np.inf))
    return nk.matmul(nk.softmax_rows(logits), V)


def multi_head(x: Tensor, params: ParamStore, layer: int, n_heads: int, mask: np.ndarray) -> Tensor:
    p = f"tp.layer{layer}.attn."
    heads = [
        attention(x @ params[f"{p}head{h}.wq"], x @ params[f"{p}head{h}.wk"], x @ params[f"{p}head{h}.wv"], mask)
        for h in range(n_heads)
    ]
    return nk.concat(heads, axis=-1) @ params[p + "wo"]


def decoder_layer(x: Tensor, params: ParamStore, layer: int, mask: np.ndarray, n_heads: int = 4,
                  dropout: float = 0.0, rng: np.random.Generator | None = None, training: bool = False,
                  slope: float = 0.01) -> Tensor:
    """Pre-norm residual block: attention sublayer then feed-forward sublayer.

    Each sublayer sees a layer-normalised copy of the residual stream and adds
    its (dropped-out) output back. Post-norm stacks of this depth did not
    train at lr=0.01 without warm-up, so the normalisation sits in front.
    """
    p = f"tp.layer{layer}."
    h = nk.layer_norm(x, params[p + "ln1.gain"], params[p + "ln1.bias"])
    x = x + nk.dropout(multi_head(h, params, layer, n_heads, mask), dropout, rng, training)
    h = nk.layer_norm(x, params[p + "ln2.gain"], params[p + "ln2.bias"])
    hidden = nk.leaky_relu(h @ params[p + "ffn.w3"] + params[p + "ffn.b3"], slope)
    return x + nk.dropout(hidden @ params[p + "ffn.w4"] + params[p + "ffn.b4"], dropout, rng, training)


def run_stack(x: Tensor, params: ParamStore, n_layers: int, n_heads: int = 4, dropout: float = 0.0,
              rng: np.random.Generator | None = None, training: bool = False, slope: float = 0.01) -> Tensor:
    mask = additive_mask(x.shape[-2])
    for layer in range(1, n_layers + 1):
        x = decoder_layer(x, params, layer, mask, n_heads, dropout, rng, training, slope)
    return nk.layer_norm(x, params["tp.final.gain"], params["tp.final.bias"])


def embed_deltas(deltas, params: ParamStore, start: int) -> Tensor:
    """Embed ``(B, K, 2)`` displacements placed at positions ``start..start+K-1``."""
    deltas = nk.as_tensor(deltas)
    d_model = params["tp.embed.weight"].shape[1]
    emb = deltas @ params["tp.embed.weight"] + params["tp.embed.bias"]
    return emb + temporal_encoding(deltas.shape[-2], d_model, start)


def head(x: Tensor, params: ParamStore) -> Tensor:
    return x @ params["tp.head.weight"] + params["tp.head.bias"]


def future_deltas(last_observed, future) -> np.ndarray:
    """Per-step displacements of ``future`` starting from ``last_observed``."""
    future = np.asarray(future, dtype=np.float64)
    prev = np.concatenate([np.asarray(last_observed, dtype=np.float64)[..., None, :], future[..., :-1, :]], axis=-2)
    return future - prev


def forward_teacher_forced(tokens: Tensor, gt_deltas, params: ParamStore, n_layers: int, n_heads: int = 4,
                           dropout: float = 0.0, rng: np.random.Generator | None = None,
                           training: bool = False, slope: float = 0.01) -> Tensor:
    """Predicted displacements ``(B, T_PH, 2)`` given ground-truth displacements."""
    T_OH = tokens.shape[-2]
    T_PH = np.shape(gt_deltas.data if isinstance(gt_deltas, Tensor) else gt_deltas)[-2]
    seq = nk.concat([tokens, embed_deltas(gt_deltas, params, T_OH)], axis=-2)
    out = run_stack(seq, params, n_layers, n_heads, dropout, rng, training, slope)
    return head(out[..., T_OH - 1:T_OH - 1 + T_PH, :], params)


def generate(tokens: Tensor, last_observed, params: ParamStore, T_PH: int, n_layers: int,
             n_heads: int = 4, slope: float = 0.01) -> PredictedTrajectory:
    """Greedy autoregressive rollout of ``T_PH`` displacements."""
    T_OH = tokens.shape[-2]
    seq = nk.Tensor(np.array(tokens.data))
    deltas = []
    with nk.no_grad():
        for k in range(T_PH):
            out = run_stack(seq, params, n_layers, n_heads, slope=slope)
            step = head(out[..., -1:, :], params)
            deltas.append(step.data)
            seq = nk.concat([seq, embed_deltas(step.data, params, T_OH + k)], axis=-2)
    return PredictedTrajectory.from_deltas(last_observed, np.concatenate(deltas, axis=-2))
