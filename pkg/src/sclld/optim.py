"""Adam optimizer over named parameter dictionaries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class AdamState:
    """First/second moment accumulators plus the shared step counter.

    ``step`` counts completed updates; bias correction uses ``step`` after
    incrementing, so the first update divides by (1 - beta^1).
    """

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if not 0.0 < self.beta1 < 1.0 or not 0.0 < self.beta2 < 1.0:
            raise ValueError(
                f"betas must lie in (0, 1), got ({self.beta1}, {self.beta2})"
            )
        if self.epsilon <= 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.step < 0:
            raise ValueError(f"step must be non-negative, got {self.step}")


def init_adam(
    params: dict[str, Tensor],
    learning_rate: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> AdamState:
    state = AdamState(learning_rate, beta1, beta2, epsilon)
    for name, t in params.items():
        state.m[name] = np.zeros_like(t.data)
        state.v[name] = np.zeros_like(t.data)
    return state


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """Apply one Adam update in place; gradients are read, never modified."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, t in params.items():
        if name not in state.m:
            raise ValueError(f"parameter '{name}' missing from optimizer state")
        if t.grad is None:
            raise ValueError(f"parameter '{name}' has no gradient")
        if t.grad.shape != state.m[name].shape or t.data.shape != state.m[name].shape:
            raise ValueError(
                f"shape mismatch for '{name}': data {t.data.shape}, "
                f"grad {t.grad.shape}, state {state.m[name].shape}"
            )
        g = t.grad
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        t.data -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
