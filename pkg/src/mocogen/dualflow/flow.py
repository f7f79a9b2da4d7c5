"""Straight-path flow matching with a noise-free first temporal token."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class FlowError(ValueError):
    pass


@dataclass(frozen=True)
class NoisySample:
    x_t: np.ndarray  # (..., C, T, h, w)
    t: float | np.ndarray
    eps: np.ndarray
    clean_mask: np.ndarray  # (T,) bool, token 0 True


def clean_mask(T: int) -> np.ndarray:
    m = np.zeros(T, dtype=bool)
    m[0] = True
    return m


def make_noisy(x0: np.ndarray, eps: np.ndarray, t) -> NoisySample:
    """``x_t = (1 - t) eps + t x0`` on noisy tokens; temporal token 0 stays ``x0``.

    ``x0`` is laid out ``(C, T, h, w)`` or batched ``(B, C, T, h, w)``; for a
    batch ``t`` may be a per-sample vector.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise FlowError(f"x0 {x0.shape} and noise {eps.shape} differ in shape")
    if x0.ndim not in (4, 5):
        raise FlowError("expected (C, T, h, w) or (B, C, T, h, w) latents")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0) or np.any(t_arr > 1):
        raise FlowError("t must lie in [0, 1]")
    if t_arr.ndim == 1:
        if x0.ndim != 5 or t_arr.shape[0] != x0.shape[0]:
            raise FlowError("per-sample t needs a batched latent of matching size")
        t_b = t_arr.reshape(-1, 1, 1, 1, 1)
    else:
        t_b = t_arr
    x_t = (1.0 - t_b) * eps + t_b * x0
    x_t[..., 0, :, :] = x0[..., 0, :, :]
    return NoisySample(x_t, t, eps, clean_mask(x0.shape[-3]))


def velocity_target(x0: np.ndarray, eps: np.ndarray) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise FlowError(f"x0 {x0.shape} and noise {eps.shape} differ in shape")
    return x0 - eps


def skip_coefficients(t, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients ``(a, c)`` of the preconditioned velocity ``a x_t + c F``.

    ``a x_t`` is the least-squares velocity estimate when data entries have
    standard deviation ``sigma`` around zero. What it leaves unexplained has
    standard deviation ``c = sigma/sqrt(D)``, so scaling the network output by
    ``c`` gives the network a unit-variance target at every ``t``.
    """
    t = np.asarray(t, dtype=np.float64)
    D = t * t * sigma * sigma + (1.0 - t) ** 2
    return (t * sigma * sigma - (1.0 - t)) / D, sigma / np.sqrt(D)

