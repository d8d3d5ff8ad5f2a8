"""Central finite-difference checks for the autograd engine."""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|)``; 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def numeric_gradient(f: Callable[[], Tensor], t: Tensor, h: float,
                     indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """Central differences of the scalar ``f()`` w.r.t. ``t.data``, perturbed
    in place. Only ``indices`` (flat) are probed when given; others stay 0."""
    flat = t.data.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    probe = range(flat.size) if indices is None else indices
    for i in probe:
        orig = flat[i]
        flat[i] = orig + h
        up = float(f().data)
        flat[i] = orig - h
        down = float(f().data)
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * h)
    return grad.reshape(t.shape)


def gradcheck(f: Callable[[], Tensor], inputs: Sequence[Tensor], h: Optional[float] = None,
              max_probes: Optional[int] = None, seed: int = 0,
              reference: Optional[Tuple[Callable[[], Tensor], Sequence[Tensor]]] = None) -> float:
    """Relative error between backprop through ``f`` and central differences,
    measured jointly over every probed coordinate of ``inputs``.

    ``h`` defaults to 1e-3 for float32 and 1e-6 for float64. With ``max_probes``
    only that many random coordinates per input are compared. ``reference`` is
    an optional ``(f_ref, ref_inputs)`` pair computing the same function, for
    example a float64 copy, on which the differences are taken instead.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.grad = None
    f().backward()
    num_f, num_inputs = reference if reference is not None else (f, inputs)
    if len(num_inputs) != len(inputs):
        raise ValueError("reference inputs must mirror inputs")
    analytic_parts, numeric_parts = [], []
    for t, r in zip(inputs, num_inputs):
        if r.shape != t.shape:
            raise ValueError(f"reference input shape {r.shape} does not match {t.shape}")
        step = h if h is not None else (1e-6 if r.dtype == np.float64 else 1e-3)
        analytic = np.zeros(t.shape) if t.grad is None else np.asarray(t.grad, dtype=np.float64)
        if max_probes is not None and t.size > max_probes:
            idx = rng.choice(t.size, size=max_probes, replace=False)
            numeric = numeric_gradient(num_f, r, step, idx).reshape(-1)[idx]
            analytic = analytic.reshape(-1)[idx]
        else:
            numeric = numeric_gradient(num_f, r, step)
        analytic_parts.append(analytic.ravel())
        numeric_parts.append(numeric.ravel())
    return relative_error(np.concatenate(analytic_parts), np.concatenate(numeric_parts))


def directional_gradcheck(f: Callable[[], Tensor], inputs: Sequence[Tensor], n_dirs: int = 4,
                          h: float = 1e-6, seed: int = 0) -> float:
    """Compare ``grad . v`` against ``(f(x + h v) - f(x - h v)) / 2h`` for random
    unit directions ``v`` spanning all of ``inputs`` jointly. Returns the worst
    relative error over the directions."""
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.grad = None
    f().backward()
    grads = [np.zeros(t.shape) if t.grad is None else np.asarray(t.grad, dtype=np.float64) for t in inputs]
    worst = 0.0
    for _ in range(n_dirs):
        dirs = [rng.normal(size=t.shape) for t in inputs]
        norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
        dirs = [d / norm for d in dirs]
        origs = [t.data.copy() for t in inputs]
        vals = []
        for sign in (1.0, -1.0):
            for t, o, d in zip(inputs, origs, dirs):
                t.data[...] = o + sign * h * d
            vals.append(float(f().data))
        for t, o in zip(inputs, origs):
            t.data[...] = o
        numeric = (vals[0] - vals[1]) / (2.0 * h)
        analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
        worst = max(worst, relative_error(np.array([analytic]), np.array([numeric])))
    return worst
