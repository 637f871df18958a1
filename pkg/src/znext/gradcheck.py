"""Central finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import NonFiniteError, Tensor, backward, no_grad, precision


@dataclass
class GradReport:
    errors: list[float]
    checked: list[int]
    failure: str | None = None
    tol: float = 1e-4
    worst: list[tuple[int, ...] | None] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.errors) if self.errors else float("nan")

    @property
    def ok(self) -> bool:
        return self.failure is None and all(e < self.tol for e in self.errors)


def _relative(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    # elements far below the gradient's scale are judged against that scale
    floor = max(1e-3 * float(np.abs(numeric).max(initial=0.0)), 1e-8)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def gradcheck(f: Callable[..., Tensor], inputs: Sequence[np.ndarray | Tensor], eps: float = 1e-5,
              tol: float = 1e-4, max_coords: int | None = None, seed: int = 0,
              params: Sequence[Tensor] = ()) -> GradReport:
    """Compare analytic and central-difference gradients of ``f`` at 64-bit.

    ``f`` maps tensors built from ``inputs`` to a tensor; non-scalar outputs
    are reduced with a fixed random projection.  Extra leaf ``params`` (e.g.
    module weights, already float64) are checked too.  ``max_coords`` caps the
    number of randomly sampled coordinates per input.
    """
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        bases = [np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64) for x in inputs]
        proj: list[np.ndarray] = []

        def evaluate(arrays, with_grad):
            ts = [Tensor(a, requires_grad=with_grad) for a in arrays]
            out = f(*ts)
            if not proj:
                proj.append(rng.standard_normal(out.shape))
            loss = (out * Tensor(proj[0])).sum()
            return loss, ts

        try:
            for p in params:
                p.grad = None
            loss, ts = evaluate(bases, True)
            backward(loss)
            analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]
            analytic += [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
        except (NonFiniteError, FloatingPointError) as exc:
            return GradReport([], [], failure=f"analytic pass: {exc}", tol=tol)

        targets = [(bases, i) for i in range(len(bases))] + [(None, j) for j in range(len(params))]
        errors, checked, worst = [], [], []
        for (arrs, k), grad in zip(targets, analytic):
            arr = arrs[k] if arrs is not None else params[k].data
            coords = np.arange(arr.size)
            if max_coords is not None and arr.size > max_coords:
                coords = np.sort(rng.choice(arr.size, size=max_coords, replace=False))
            numeric = np.empty(len(coords))
            flat = arr.reshape(-1)
            for n, c in enumerate(coords):
                orig = flat[c]
                vals = []
                for delta in (eps, -eps):
                    flat[c] = orig + delta
                    try:
                        with no_grad():
                            val = evaluate(bases, False)[0].item()
                    except (NonFiniteError, FloatingPointError) as exc:
                        flat[c] = orig
                        where = np.unravel_index(c, arr.shape)
                        return GradReport(errors, checked, failure=f"input {len(errors)} at {where}: {exc}",
                                          tol=tol)
                    vals.append(val)
                flat[c] = orig
                numeric[n] = (vals[0] - vals[1]) / (2 * eps)
            if not np.isfinite(numeric).all():
                bad = coords[~np.isfinite(numeric)][0]
                return GradReport(errors, checked,
                                  failure=f"NaN in numeric gradient at {np.unravel_index(bad, arr.shape)}",
                                  tol=tol)
            rel = _relative(grad.reshape(-1)[coords], numeric) if len(coords) else np.zeros(0)
            errors.append(float(rel.max(initial=0.0)))
            checked.append(len(coords))
            worst.append(np.unravel_index(coords[rel.argmax()], arr.shape) if len(coords) else None)
        return GradReport(errors, checked, tol=tol, worst=worst)

