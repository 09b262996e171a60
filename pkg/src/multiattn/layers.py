"""Forward and backward passes for the network blocks.

Each block is a pair of functions: ``*_forward`` returns its output together
with a cache, and ``*_backward`` consumes that cache plus the upstream
gradient.  Parameters are plain dicts of float64 arrays keyed by short names
(``W_z``, ``l0.W``, ...); the model keeps them under dotted prefixes.

Sequences are unpadded ``k x d`` matrices, one tweet at a time.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, MutableMapping

import numpy as np

from .ndmath import DTYPE, ShapeError, init, sigmoid, softmax

Params = MutableMapping[str, np.ndarray]


class LayerStateError(RuntimeError):
    """Backward pass requested without a matching forward cache."""


def _need(cache, what: str):
    if cache is None:
        raise LayerStateError(f"{what} backward called without a forward cache")


def _accumulate(grads: Params, name: str, value: np.ndarray) -> None:
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value.copy()


# -- dense / MLP -----------------------------------------------------------

_ACT = {
    "tanh": np.tanh,
    "relu": lambda z: np.maximum(z, 0.0),
    "linear": lambda z: z,
}


def _act_grad(act: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if act == "tanh":
        return 1.0 - a * a
    if act == "relu":
        return (z > 0).astype(DTYPE)
    return np.ones_like(z)


def dense_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray, act: str):
    if x.ndim != 2 or x.shape[1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ShapeError(f"dense: input {x.shape} incompatible with W {W.shape}, b {b.shape}")
    z = x @ W.T + b
    a = _ACT[act](z)
    return a, (x, W, z, a, act)


def dense_backward(cache, da: np.ndarray):
    _need(cache, "dense")
    x, W, z, a, act = cache
    dz = da * _act_grad(act, z, a)
    return dz @ W, dz.T @ x, dz.sum(axis=0)


def init_mlp(widths: list[int], rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Layers ``l0 .. l{n-2}`` followed by ``out``; widths = [in, hidden..., out]."""
    p = {}
    n = len(widths) - 1
    for i in range(n):
        name = "out" if i == n - 1 else f"l{i}"
        p[f"{name}.W"] = init((widths[i + 1], widths[i]), "glorot", rng)
        p[f"{name}.b"] = init((widths[i + 1],), "zeros")
    return p


def mlp_forward(x: np.ndarray, p: Mapping[str, np.ndarray], hidden_act: str, out_act: str = "linear"):
    caches = []
    names = sorted((k[:-2] for k in p if k.endswith(".W") and k != "out.W"), key=lambda s: int(s[1:]))
    for name in names:
        x, c = dense_forward(x, p[f"{name}.W"], p[f"{name}.b"], hidden_act)
        caches.append((name, c))
    x, c = dense_forward(x, p["out.W"], p["out.b"], out_act)
    caches.append(("out", c))
    return x, caches


def mlp_backward(caches, dout: np.ndarray, grads: Params):
    _need(caches, "mlp")
    d = dout
    for name, c in reversed(caches):
        d, dW, db = dense_backward(c, d)
        _accumulate(grads, f"{name}.W", dW)
        _accumulate(grads, f"{name}.b", db)
    return d


# -- spatial dropout -------------------------------------------------------

def spatial_dropout(seq: np.ndarray, rate: float, rng: np.random.Generator | None, training: bool):
    """Drop whole embedding dimensions: one mask over ``d`` shared by all positions.

    Returns ``(out, mask)``; ``mask`` already carries the 1/(1-rate) scaling
    and is ``None`` when the layer is the identity.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return seq, None
    keep = rng.random(seq.shape[1]) >= rate
    mask = keep.astype(DTYPE) / (1.0 - rate)
    return seq * mask, mask


def spatial_dropout_backward(mask, dout: np.ndarray) -> np.ndarray:
    return dout if mask is None else dout * mask


# -- projection ------------------------------------------------------------

def init_projection(d: int, width: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    return {"W": init((width, d), "glorot", rng), "b": init((width,), "zeros")}


def project_forward(seq: np.ndarray, p: Mapping[str, np.ndarray]):
    return dense_forward(seq, p["W"], p["b"], "tanh")


def project_backward(cache, dout: np.ndarray, grads: Params) -> np.ndarray:
    dx, dW, db = dense_backward(cache, dout)
    _accumulate(grads, "W", dW)
    _accumulate(grads, "b", db)
    return dx


# -- GRU -------------------------------------------------------------------

GRU_KEYS = ("W_h", "W_z", "W_r", "U_h", "U_z", "U_r", "b_h", "b_z", "b_r")


def init_gru(d_in: int, m: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    p = {}
    for g in "hzr":
        p[f"W_{g}"] = init((m, d_in), "glorot", rng)
    for g in "hzr":
        p[f"U_{g}"] = init((m, m), "glorot", rng)
    for g in "hzr":
        p[f"b_{g}"] = init((m,), "zeros")
    return p


def gru_cell(x_t: np.ndarray, h_prev: np.ndarray, p: Mapping[str, np.ndarray]) -> np.ndarray:
    """One recurrence step; the unrolled ``gru_forward`` uses the same arithmetic."""
    m, d_in = p["W_h"].shape
    if x_t.shape != (d_in,) or h_prev.shape != (m,):
        raise ShapeError(f"gru_cell: x {x_t.shape}, h {h_prev.shape} vs W {p['W_h'].shape}")
    z = sigmoid(p["W_z"] @ x_t + p["U_z"] @ h_prev + p["b_z"])
    r = sigmoid(p["W_r"] @ x_t + p["U_r"] @ h_prev + p["b_r"])
    hh = np.tanh(p["W_h"] @ x_t + p["U_h"] @ (r * h_prev) + p["b_h"])
    return (1.0 - z) * h_prev + z * hh


@dataclass
class GruCache:
    x: np.ndarray
    h_prev: np.ndarray  # k x m, row t is h_{t-1}
    z: np.ndarray
    r: np.ndarray
    hh: np.ndarray


def gru_forward(seq: np.ndarray, p: Mapping[str, np.ndarray], h0: np.ndarray | None = None):
    m, d_in = p["W_h"].shape
    if seq.ndim != 2 or seq.shape[1] != d_in:
        raise ShapeError(f"gru_forward: sequence {seq.shape} vs input width {d_in}")
    k = seq.shape[0]
    if k == 0:
        raise ValueError("gru_forward needs at least one position")
    h = np.zeros(m, dtype=DTYPE) if h0 is None else h0
    # input contributions for every position at once
    xz = seq @ p["W_z"].T + p["b_z"]
    xr = seq @ p["W_r"].T + p["b_r"]
    xh = seq @ p["W_h"].T + p["b_h"]
    Uz, Ur, Uh = p["U_z"], p["U_r"], p["U_h"]
    states = np.empty((k, m), dtype=DTYPE)
    h_prev = np.empty((k, m), dtype=DTYPE)
    Z = np.empty((k, m), dtype=DTYPE)
    R = np.empty((k, m), dtype=DTYPE)
    HH = np.empty((k, m), dtype=DTYPE)
    for t in range(k):
        h_prev[t] = h
        z = sigmoid(xz[t] + Uz @ h)
        r = sigmoid(xr[t] + Ur @ h)
        hh = np.tanh(xh[t] + Uh @ (r * h))
        h = (1.0 - z) * h + z * hh
        Z[t], R[t], HH[t], states[t] = z, r, hh, h
    return states, GruCache(seq, h_prev, Z, R, HH)


def gru_backward(cache: GruCache, dstates: np.ndarray, p: Mapping[str, np.ndarray], grads: Params):
    """Returns ``(dseq, dh0)`` and accumulates parameter gradients into ``grads``."""
    _need(cache, "gru")
    k, m = dstates.shape
    Z, R, HH, Hp = cache.z, cache.r, cache.hh, cache.h_prev
    UzT, UrT, UhT = p["U_z"].T, p["U_r"].T, p["U_h"].T
    dAz = np.empty((k, m), dtype=DTYPE)
    dAr = np.empty((k, m), dtype=DTYPE)
    dAh = np.empty((k, m), dtype=DTYPE)
    dh_next = np.zeros(m, dtype=DTYPE)
    for t in range(k - 1, -1, -1):
        dh = dstates[t] + dh_next
        z, r, hh, hp = Z[t], R[t], HH[t], Hp[t]
        dah = dh * z * (1.0 - hh * hh)
        daz = dh * (hh - hp) * z * (1.0 - z)
        drh = UhT @ dah
        dar = drh * hp * r * (1.0 - r)
        dh_next = dh * (1.0 - z) + drh * r + UzT @ daz + UrT @ dar
        dAz[t], dAr[t], dAh[t] = daz, dar, dah
    x = cache.x
    _accumulate(grads, "W_z", dAz.T @ x)
    _accumulate(grads, "W_r", dAr.T @ x)
    _accumulate(grads, "W_h", dAh.T @ x)
    _accumulate(grads, "U_z", dAz.T @ Hp)
    _accumulate(grads, "U_r", dAr.T @ Hp)
    _accumulate(grads, "U_h", dAh.T @ (R * Hp))
    _accumulate(grads, "b_z", dAz.sum(axis=0))
    _accumulate(grads, "b_r", dAr.sum(axis=0))
    _accumulate(grads, "b_h", dAh.sum(axis=0))
    dseq = dAz @ p["W_z"] + dAr @ p["W_r"] + dAh @ p["W_h"]
    return dseq, dh_next


# -- attention -------------------------------------------------------------

def init_attention(m: int, hidden: int, n_layers: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    return init_mlp([m] + [hidden] * n_layers + [1], rng)


@dataclass
class AttentionCache:
    states: np.ndarray
    alphas: np.ndarray
    mlp: list = field(default_factory=list)


def attention_forward(states: np.ndarray, p: Mapping[str, np.ndarray]):
    """Score every state with a tanh MLP, softmax the scores, return ``(alphas, h_sum, cache)``."""
    if states.ndim != 2 or states.shape[0] == 0:
        raise ShapeError(f"attention needs a non-empty k x m matrix, got {states.shape}")
    scores, mcache = mlp_forward(states, p, "tanh")
    alphas = softmax(scores[:, 0])
    h_sum = alphas @ states
    return alphas, h_sum, AttentionCache(states, alphas, mcache)


def attention_backward(cache: AttentionCache, dh_sum: np.ndarray, grads: Params) -> np.ndarray:
    _need(cache, "attention")
    H, a = cache.states, cache.alphas
    dalpha = H @ dh_sum
    dscore = a * (dalpha - a @ dalpha)
    dH = np.outer(a, dh_sum)
    dH += mlp_backward(cache.mlp, dscore[:, None], grads)
    return dH


# -- output head -----------------------------------------------------------

def init_head(m: int, width: int, n_layers: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    return init_mlp([m] + [width] * n_layers + [1], rng)


def head_forward(h: np.ndarray, p: Mapping[str, np.ndarray]):
    """ReLU MLP then a logistic unit; returns ``(probability, logit, cache)``."""
    out, cache = mlp_forward(h[None, :], p, "relu")
    logit = float(out[0, 0])
    return float(sigmoid(logit)), logit, cache


def head_backward(cache, dlogit: float, grads: Params) -> np.ndarray:
    return mlp_backward(cache, np.array([[dlogit]], dtype=DTYPE), grads)[0]
