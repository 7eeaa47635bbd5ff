"""Central-difference gradient verification for tape ops and whole graphs."""

from __future__ import annotations

import numpy as np

from .autodiff import Tape, Tensor


def grad_check(fn, inputs: list[np.ndarray], h: float = 1e-5,
               rng: np.random.Generator | None = None,
               max_resamples: int = 20) -> float:
    """Compare tape gradients of a scalar-valued graph with central differences.

    fn takes a list of Tensors and returns a scalar Tensor. Every entry of
    every input is perturbed by +-h. If the graph sits within 10*h of a
    subgradient tie (ReLU kink, max-pool or nearest-neighbor switch), the
    inputs are resampled from rng (required in that case) and the check is
    retried. Returns the worst relative error, |analytic - numeric| scaled by
    max(|analytic|, |numeric|, 1).
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    for _ in range(max_resamples):
        tensors = [Tensor(a, requires_grad=True) for a in arrays]
        with Tape(track_margins=True) as tape:
            loss = fn(tensors)
        if tape.min_margin() >= 10.0 * h:
            break
        if rng is None:
            raise ValueError("graph is at a subgradient tie and no rng was given to resample")
        arrays = [rng.standard_normal(a.shape) for a in arrays]
    else:
        raise ValueError("could not find tie-free inputs after resampling")

    tape.backward(loss)
    analytic = [t.grad_or_zeros() for t in tensors]

    worst = 0.0
    for k, base in enumerate(arrays):
        flat = base.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(fn([Tensor(a) for a in arrays]).data)
            flat[i] = orig - h
            f_minus = float(fn([Tensor(a) for a in arrays]).data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic[k].ravel()[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            worst = max(worst, err)
    return worst
