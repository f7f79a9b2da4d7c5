"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward, no_record


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between tape and central-difference gradients.

    ``f`` builds a scalar loss from ``params`` (it must be deterministic).
    The relative error of each coordinate uses the denominator
    ``max(|analytic|, |numeric|, 1e-8)``. With ``max_coords`` only that many
    randomly chosen coordinates per parameter are probed.
    """
    rng = np.random.default_rng(seed)
    with Tape() as tape:
        loss = f()
    analytic = backward(tape, loss, params)
    worst = 0.0
    with no_record():
        for p in params:
            a = analytic[p]
            p.data = np.ascontiguousarray(p.data)
            flat = p.data.reshape(-1)
            coords = range(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(rng.choice(flat.size, max_coords, replace=False))
            for i in coords:
                orig = flat[i]
                flat[i] = orig + h
                fp = f().item()
                flat[i] = orig - h
                fm = f().item()
                flat[i] = orig
                num = (fp - fm) / (2.0 * h)
                ana = a.reshape(-1)[i]
                err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
                worst = max(worst, err)
    return worst


def scalarize(out: Tensor, seed: int = 0) -> Tensor:
    """Reduce a tensor to a scalar via a fixed random projection (uses matmul only)."""
    w = np.random.default_rng(seed).standard_normal((out.data.size, 1))
    flat = out.reshape(1, out.data.size)
    return (flat @ Tensor(w)).reshape(())
