"""SGD and Adam steps over flat parameter vectors.

Updates are functional: each step returns a new network and a new
optimizer state, leaving the inputs untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .nets import DenseNet, GradientVector, with_params

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class OptimizerState:
    kind: str  # "sgd" | "adam"
    learning_rate: float
    step_count: int = 0
    m: np.ndarray | None = None  # first-moment EMA (adam)
    v: np.ndarray | None = None  # second-moment EMA (adam)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer kind {self.kind!r}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.step_count < 0:
            raise ConfigError("step_count must be non-negative")


def make_optimizer(kind: str, learning_rate: float, n_params: int) -> OptimizerState:
    if kind == "adam":
        return OptimizerState(
            kind="adam",
            learning_rate=learning_rate,
            m=np.zeros(n_params),
            v=np.zeros(n_params),
        )
    return OptimizerState(kind=kind, learning_rate=learning_rate)


def optimizer_step(
    state: OptimizerState,
    net: DenseNet,
    grad: GradientVector,
    direction: str = "descend",
) -> tuple[DenseNet, OptimizerState]:
    """One parameter update.  ``ascend`` negates the gradient first.

    Raises NumericalError (leaving net and state unchanged) if the
    gradient contains non-finite entries.
    """
    if direction not in ("descend", "ascend"):
        raise ConfigError(f"direction must be descend or ascend, got {direction!r}")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != net.params.shape:
        raise ConfigError(
            f"gradient length {grad.shape} does not match params {net.params.shape}"
        )
    if not np.all(np.isfinite(grad)):
        raise NumericalError("gradient contains non-finite entries")
    g = -grad if direction == "ascend" else grad

    if state.kind == "sgd":
        new_params = net.params - state.learning_rate * g
        new_state = OptimizerState(
            kind="sgd", learning_rate=state.learning_rate, step_count=state.step_count + 1
        )
        return with_params(net, new_params), new_state

    # Adam with standard bias correction.
    if state.m is None or state.v is None or state.m.shape != net.params.shape:
        raise ConfigError("adam state accumulators missing or mismatched")
    t = state.step_count + 1
    m = ADAM_BETA1 * state.m + (1.0 - ADAM_BETA1) * g
    v = ADAM_BETA2 * state.v + (1.0 - ADAM_BETA2) * g * g
    m_hat = m / (1.0 - ADAM_BETA1**t)
    v_hat = v / (1.0 - ADAM_BETA2**t)
    new_params = net.params - state.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    new_state = OptimizerState(
        kind="adam", learning_rate=state.learning_rate, step_count=t, m=m, v=v
    )
    return with_params(net, new_params), new_state
