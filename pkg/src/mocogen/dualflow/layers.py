"""Transformer building blocks composed from tensorad primitives."""

from __future__ import annotations

import math

import numpy as np

from ..tensorad import Tensor, add, concat, getitem, layer_norm, matmul, mul, reshape, scale, silu, softmax, transpose


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis of an arbitrary-rank input."""
    lead = x.shape[:-1]
    y = matmul(reshape(x, (-1, x.shape[-1])), w)
    if b is not None:
        y = add(y, b)
    return reshape(y, lead + (w.shape[1],))


def _split_heads(x: Tensor, heads: int, keys: bool = False) -> Tensor:
    *lead, n, dim = x.shape
    x = reshape(x, tuple(lead) + (n, heads, dim // heads))
    k = len(lead)
    # (..., n, heads, dh) -> (..., heads, n, dh), or (..., heads, dh, n) for keys
    perm = tuple(range(k)) + ((k + 1, k + 2, k) if keys else (k + 1, k, k + 2))
    return transpose(x, perm)


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Scaled dot-product attention on projected ``(..., N, D)`` tensors."""
    *lead, nq, dim = q.shape
    if dim % heads:
        raise ValueError(f"width {dim} not divisible by {heads} heads")
    dh = dim // heads
    scores = scale(matmul(_split_heads(q, heads), _split_heads(k, heads, keys=True)), 1.0 / math.sqrt(dh))
    out = matmul(softmax(scores, axis=-1), _split_heads(v, heads))
    m = len(lead)
    out = transpose(out, tuple(range(m)) + (m + 1, m, m + 2))
    return reshape(out, tuple(lead) + (nq, dim))


def modulate(x: Tensor, shift: Tensor, scl: Tensor) -> Tensor:
    return add(mul(layer_norm(x), add(scl, 1.0)), shift)


def timestep_features(t, freqs: int = 64) -> np.ndarray:
    """Sinusoidal features ``[cos(1000 t w_k), sin(1000 t w_k)]`` for 64 geometric frequencies."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    w = np.exp(-math.log(10000.0) * np.arange(freqs) / freqs)
    arg = 1000.0 * t[:, None] * w[None, :]
    return np.concatenate([np.cos(arg), np.sin(arg)], axis=1)


def chunk(x: Tensor, n: int, axis: int = -1) -> list[Tensor]:
    size = x.shape[axis] // n
    axis = axis % x.ndim
    out = []
    for i in range(n):
        key = [slice(None)] * x.ndim
        key[axis] = slice(i * size, (i + 1) * size)
        out.append(getitem(x, tuple(key)))
    return out


def dit_block(x: Tensor, cond_tokens: Tensor, t_embed: Tensor, p: dict, heads: int) -> Tensor:
    """Pre-norm self-attention, cross-attention to condition tokens and FFN.

    Each sublayer is residual; its input norm is shifted and scaled by a map
    of the time embedding. ``p`` holds this block's parameters by short name.
    """
    B = x.shape[0]
    if x.shape[-1] != p["sa.wq"].shape[0]:
        raise ValueError(f"token width {x.shape[-1]} does not match block width {p['sa.wq'].shape[0]}")
    mod = reshape(linear(silu(t_embed), p["mod.w"], p["mod.b"]), (B, 1, -1))
    sh1, sc1, sh2, sc2, sh3, sc3 = chunk(mod, 6)

    h = modulate(x, sh1, sc1)
    a = multi_head_attention(linear(h, p["sa.wq"]), linear(h, p["sa.wk"]), linear(h, p["sa.wv"]), heads)
    x = add(x, linear(a, p["sa.wo"], p["sa.bo"]))

    h = modulate(x, sh2, sc2)
    a = multi_head_attention(linear(h, p["ca.wq"]), linear(cond_tokens, p["ca.wk"]), linear(cond_tokens, p["ca.wv"]), heads)
    x = add(x, linear(a, p["ca.wo"], p["ca.bo"]))

    h = modulate(x, sh3, sc3)
    f = linear(silu(linear(h, p["ffn.w1"], p["ffn.b1"])), p["ffn.w2"], p["ffn.b2"])
    return add(x, f)


def block_param_shapes(d: int, ffn: int) -> dict[str, tuple[int, ...]]:
    return {
        "mod.w": (d, 6 * d),
        "mod.b": (6 * d,),
        "sa.wq": (d, d),
        "sa.wk": (d, d),
        "sa.wv": (d, d),
        "sa.wo": (d, d),
        "sa.bo": (d,),
        "ca.wq": (d, d),
        "ca.wk": (d, d),
        "ca.wv": (d, d),
        "ca.wo": (d, d),
        "ca.bo": (d,),
        "ffn.w1": (d, ffn),
        "ffn.b1": (ffn,),
        "ffn.w2": (ffn, d),
        "ffn.b2": (d,),
    }


def init_block(rng: np.random.Generator, d: int, ffn: int, out_scale: float = 0.5) -> dict[str, np.ndarray]:
    out = {}
    for name, shape in block_param_shapes(d, ffn).items():
        if len(shape) == 1:
            out[name] = np.zeros(shape)
        else:
            std = 1.0 / math.sqrt(shape[0])
            if name in ("sa.wo", "ca.wo", "ffn.w2"):
                std *= out_scale
            elif name == "mod.w":
                std *= 0.1
            out[name] = rng.standard_normal(shape) * std
    return out


def zero_out_projections(block: dict) -> None:
    """Zero every residual branch's output map, making the block an identity."""
    for name in ("sa.wo", "sa.bo", "ca.wo", "ca.bo", "ffn.w2", "ffn.b2"):
        block[name].data = np.zeros_like(block[name].data)


def gather_rows(x: Tensor, index, axis: int = 1) -> Tensor:
    key = [slice(None)] * x.ndim
    key[axis] = np.asarray(index, dtype=np.int64)
    return getitem(x, tuple(key))


def zeros_like_rows(x: Tensor, rows: int, axis: int = 1) -> Tensor:
    shape = list(x.shape)
    shape[axis] = rows
    return Tensor(np.zeros(shape))


__all__ = [
    "block_param_shapes", "chunk", "concat", "dit_block", "gather_rows", "init_block", "linear",
    "modulate", "multi_head_attention", "timestep_features", "zero_out_projections", "zeros_like_rows",
]
