"""Finite-difference check of tape gradients.

Derivatives are estimated with the five-point central stencil

    f'(x) ~ (f(x - 2h) - 8 f(x - h) + 8 f(x + h) - f(x + 2h)) / (12 h)

whose truncation error is O(h^4), so a comparatively large ``h`` keeps
floating-point cancellation small. A piecewise-linear activation makes the
estimate meaningless if a perturbation moves any of its inputs across the
kink; every perturbed evaluation therefore compares the sign pattern of all
ReLU-type inputs against the unperturbed one, retries with a smaller step
when it changes, and drops the entry if it still does.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tape, Tensor

# a tensor whose gradient is this small relative to the whole gradient (or
# below NORM_FLOOR outright) is compared in absolute terms; otherwise sampled
# entries that are exactly zero turn finite-difference roundoff into a
# spurious relative error
NORM_FLOOR = 1e-7
RELATIVE_FLOOR = 1e-6
_KINK_OPS = ("relu", "leaky_relu")


@dataclass
class GradCheck:
    errors: dict[str, float] = field(default_factory=dict)
    checked: int = 0
    skipped: int = 0

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0


def _kink_pattern(tape: Tape) -> list[np.ndarray]:
    return [node.parents[0].data > 0.0 for node in tape.nodes if node.op in _KINK_OPS]


def _evaluate(loss_fn: Callable[[], Tensor]) -> tuple[float, list[np.ndarray]]:
    with Tape() as tape:
        loss = loss_fn()
    return loss.item(), _kink_pattern(tape)


def _same(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def gradient_check(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor], h: float = 1e-4,
                   entries_per_param: int | None = None, rng: np.random.Generator | None = None,
                   retries: int = 2) -> GradCheck:
    """Compare backward gradients of ``loss_fn`` with finite differences.

    The error of a parameter is ``|g_tape - g_fd| / max(|g_tape|, |g_fd|, floor)``
    (Euclidean norms over its checked entries), with
    ``floor = max(NORM_FLOOR, RELATIVE_FLOOR * |full tape gradient|)``. Only entries with
    ``requires_grad`` parameters are perturbed, in place, and restored.
    """
    for p in params.values():
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    base_pattern = _kink_pattern(tape)
    tape.backward(loss)
    total = np.sqrt(sum(float(np.sum(p.grad ** 2)) for p in params.values() if p.grad is not None))
    floor = max(NORM_FLOOR, RELATIVE_FLOOR * total)
    rng = rng or np.random.default_rng(0)
    result = GradCheck()
    for name, p in params.items():
        flat = p.data.reshape(-1)
        if not np.shares_memory(flat, p.data):
            raise ValueError(f"parameter {name!r} is not contiguous")
        analytic = np.zeros_like(flat) if p.grad is None else p.grad.reshape(-1)
        if entries_per_param is None or entries_per_param >= flat.size:
            idx = np.arange(flat.size)
        else:
            idx = rng.choice(flat.size, size=entries_per_param, replace=False)
        kept_a, kept_n = [], []
        for i in idx:
            old = flat[i]
            estimate = None
            step = h
            for _ in range(retries + 1):
                values = []
                ok = True
                for k in (-2, -1, 1, 2):
                    flat[i] = old + k * step
                    value, pattern = _evaluate(loss_fn)
                    if not _same(pattern, base_pattern):
                        ok = False
                        break
                    values.append(value)
                flat[i] = old
                if ok:
                    estimate = (values[0] - 8 * values[1] + 8 * values[2] - values[3]) / (12 * step)
                    break
                step /= 10.0
            if estimate is None:
                result.skipped += 1
                continue
            kept_a.append(analytic[i])
            kept_n.append(estimate)
        result.checked += len(kept_a)
        if kept_a:
            a, n = np.array(kept_a), np.array(kept_n)
            denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
            result.errors[name] = float(np.linalg.norm(a - n) / denom)
    for p in params.values():
        p.grad = None
    return result
