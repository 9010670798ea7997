"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .array import DiffArray, parameter


@dataclass
class GradCheckReport:
    max_relative_error: float
    per_parameter: list[float] = field(default_factory=list)
    analytic: list[np.ndarray] = field(default_factory=list, repr=False)
    numeric: list[np.ndarray] = field(default_factory=list, repr=False)

    def passed(self, tol: float) -> bool:
        return self.max_relative_error <= tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """|a - n| / max(|a|, |n|, floor), with |.| the Euclidean norm of the whole array."""
    diff = np.linalg.norm(np.ravel(analytic - numeric))
    scale = max(np.linalg.norm(np.ravel(analytic)), np.linalg.norm(np.ravel(numeric)), floor)
    return float(diff / scale)


def grad_check(
    fn: Callable[..., DiffArray],
    point: Sequence[np.ndarray],
    epsilon: float = 1e-5,
) -> GradCheckReport:
    """Compare backward() gradients of ``fn`` with central differences.

    ``fn`` receives one DiffArray per entry of ``point`` and must return a
    scalar DiffArray.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    base = [np.array(p, dtype=np.float64) for p in point]

    leaves = [parameter(p.copy()) for p in base]
    out = fn(*leaves)
    if not np.all(np.isfinite(out.value)):
        raise FloatingPointError("grad_check: function output is not finite")
    out.backward()
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value) for leaf in leaves]

    def evaluate(values):
        res = fn(*[DiffArray(v) for v in values]).value
        if not np.all(np.isfinite(res)):
            raise FloatingPointError("grad_check: function output is not finite")
        return float(res)

    numeric = []
    for idx, arr in enumerate(base):
        num = np.zeros_like(arr)
        for flat in range(arr.size):
            bumped = [b.copy() for b in base]
            view = bumped[idx].reshape(-1)
            view[flat] = arr.reshape(-1)[flat] + epsilon
            f_plus = evaluate(bumped)
            view[flat] = arr.reshape(-1)[flat] - epsilon
            f_minus = evaluate(bumped)
            num.reshape(-1)[flat] = (f_plus - f_minus) / (2.0 * epsilon)
        numeric.append(num)

    errors = [relative_error(a, n) for a, n in zip(analytic, numeric)]
    return GradCheckReport(
        max_relative_error=max(errors) if errors else 0.0,
        per_parameter=errors,
        analytic=analytic,
        numeric=numeric,
    )
