"""Adversary heads modeling p(z | score).

Two heads cover the nuisance types:

* mixture  -- gaussian mixture density head for continuous z.  The final
  network layer is linear with width 3C laid out as
  ``[means | raw stddevs | raw weights]``; stddevs go through exp (floored
  at SIGMA_FLOOR) and weights through softmax.
* categorical -- softmax head over ``n`` nuisance categories.

Both expose the negative log-likelihood loss together with its exact
gradients wrt the adversary parameters and wrt the input scores; the
latter is what lets the classifier update backpropagate through its own
score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .nets import (
    DenseNet,
    GradientVector,
    backprop_from_final_preact,
    forward_cached,
    init_params,
)

SIGMA_FLOOR = 1e-3
LOG_SIGMA_FLOOR = np.log(SIGMA_FLOOR)
PROB_FLOOR = 1e-12
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class HeadSpec:
    """Which head an adversary network terminates in.

    ``size`` is the number of mixture components for ``mixture`` and the
    number of nuisance categories for ``categorical``.
    """

    kind: str
    size: int

    def __post_init__(self):
        if self.kind not in ("mixture", "categorical"):
            raise ConfigError(f"unknown adversary head kind {self.kind!r}")
        if self.size < 1:
            raise ConfigError("head size must be >= 1")

    @property
    def final_width(self) -> int:
        return 3 * self.size if self.kind == "mixture" else self.size

    @property
    def final_activation(self) -> str:
        return "linear" if self.kind == "mixture" else "softmax"


def init_adversary(
    head: HeadSpec,
    hidden_sizes: tuple[int, ...],
    hidden_activations: tuple[str, ...],
    seed: int,
) -> DenseNet:
    """Adversary network over a 1-D score input, terminated by ``head``."""
    sizes = (1, *hidden_sizes, head.final_width)
    acts = (*hidden_activations, head.final_activation)
    return init_params(sizes, acts, seed)


def check_adversary_architecture(net: DenseNet, head: HeadSpec) -> None:
    if net.input_size != 1:
        raise ConfigError(f"adversary consumes the 1-D score, input size is {net.input_size}")
    if net.output_size != head.final_width:
        raise ConfigError(
            f"{head.kind} head needs final width {head.final_width}, got {net.output_size}"
        )
    if net.activations[-1] != head.final_activation:
        raise ConfigError(
            f"{head.kind} head needs a {head.final_activation} final layer, "
            f"got {net.activations[-1]}"
        )


@dataclass(frozen=True)
class MixtureParams:
    """Gaussian mixture parameters produced by the MDN head for one score."""

    means: np.ndarray
    stddevs: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        stddevs = np.asarray(self.stddevs, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if not (means.shape == stddevs.shape == weights.shape) or means.ndim != 1:
            raise ConfigError("means, stddevs and weights must be 1-D and the same length")
        if not (
            np.all(np.isfinite(means))
            and np.all(np.isfinite(stddevs))
            and np.all(np.isfinite(weights))
        ):
            raise ConfigError("mixture parameters must be finite")
        if np.any(stddevs < SIGMA_FLOOR - 1e-12):
            raise ConfigError(f"stddevs must be >= {SIGMA_FLOOR}")
        if abs(weights.sum() - 1.0) > 1e-9 or np.any(weights < 0):
            raise ConfigError("weights must be a probability vector")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stddevs", stddevs)
        object.__setattr__(self, "weights", weights)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]


@dataclass(frozen=True)
class CategoricalParams:
    """Probability mass over nuisance categories for one score."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1:
            raise ConfigError("probs must be a 1-D vector")
        if not np.all(np.isfinite(probs)):
            raise ConfigError("probs must be finite")
        if abs(probs.sum() - 1.0) > 1e-9 or np.any(probs < 0) or np.any(probs > 1):
            raise ConfigError("probs must be a probability vector")
        object.__setattr__(self, "probs", probs)

    @property
    def n_categories(self) -> int:
        return self.probs.shape[0]


def _split_raw(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    width = raw.shape[-1]
    if width % 3 != 0:
        raise ConfigError(f"mixture head needs final width 3C, got {width}")
    c = width // 3
    return raw[..., :c], raw[..., c : 2 * c], raw[..., 2 * c :]


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def mdn_head(net: DenseNet, s: float) -> MixtureParams:
    """Evaluate the mixture head at one score value."""
    if net.input_size != 1:
        raise ConfigError("mixture adversary consumes a single score input")
    if net.activations[-1] != "linear":
        raise ConfigError("mixture head requires a linear final layer")
    raw = forward_cached(net, np.asarray([[float(s)]])).output[0]
    mu, rho, omega = _split_raw(raw)
    log_sigma = np.maximum(rho, LOG_SIGMA_FLOOR)  # = log(max(exp(rho), floor))
    log_w = _log_softmax(omega)
    return MixtureParams(means=mu, stddevs=np.exp(log_sigma), weights=np.exp(log_w))


def mdn_nll(params: MixtureParams, z: float) -> float:
    """-log of the mixture density at z, via log-sum-exp."""
    u = (z - params.means) / params.stddevs
    log_comp = (
        np.log(params.weights) - np.log(params.stddevs) - 0.5 * u * u - 0.5 * LOG_2PI
    )
    m = np.max(log_comp)
    return float(-(m + np.log(np.sum(np.exp(log_comp - m)))))


def cat_nll(params: CategoricalParams, z_index: int) -> float:
    """-log probability mass of category ``z_index``, floored at PROB_FLOOR."""
    if not 0 <= z_index < params.n_categories:
        raise DataError(
            f"category index {z_index} out of range for {params.n_categories} categories"
        )
    return float(-np.log(max(params.probs[z_index], PROB_FLOOR)))


def mixture_nll_from_raw(
    raw: np.ndarray, z: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample mixture NLL and its gradient wrt the raw head outputs.

    ``raw`` has shape (N, 3C); returns (nll (N,), d_raw (N, 3C)).

    With responsibilities r_c = softmax_c(log w_c + log N(z; mu_c, s_c)):

        d nll / d mu_c    = -r_c (z - mu_c) / s_c^2
        d nll / d rho_c   = -r_c ((z - mu_c)^2 / s_c^2 - 1)   (0 when floored)
        d nll / d omega_c = w_c - r_c
    """
    mu, rho, omega = _split_raw(raw)
    z = z[:, None]
    log_sigma = np.maximum(rho, LOG_SIGMA_FLOOR)
    sigma = np.exp(log_sigma)
    clamped = rho < LOG_SIGMA_FLOOR
    u = (z - mu) / sigma
    log_w = _log_softmax(omega)
    w = np.exp(log_w)
    log_comp = log_w - log_sigma - 0.5 * u * u - 0.5 * LOG_2PI
    m = np.max(log_comp, axis=1, keepdims=True)
    log_like = m[:, 0] + np.log(np.sum(np.exp(log_comp - m), axis=1))
    resp = np.exp(log_comp - log_like[:, None])

    d_mu = -resp * u / sigma
    d_rho = np.where(clamped, 0.0, -resp * (u * u - 1.0))
    d_omega = w - resp
    return -log_like, np.concatenate([d_mu, d_rho, d_omega], axis=1)


def categorical_nll_from_probs(
    probs: np.ndarray, z_index: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample categorical NLL and its gradient wrt the softmax pre-activations.

    The softmax is fused with the log so the seed is the standard
    ``probs - onehot``; rows where the floor binds are locally constant
    and get a zero gradient.
    """
    n, k = probs.shape
    idx = np.asarray(z_index, dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= k):
        raise DataError(f"category index out of range for {k} categories")
    p_target = probs[np.arange(n), idx]
    floored = p_target < PROB_FLOOR
    nll = -np.log(np.maximum(p_target, PROB_FLOOR))
    d_preact = probs.copy()
    d_preact[np.arange(n), idx] -= 1.0
    d_preact[floored] = 0.0
    return nll, d_preact


def adversary_loss(
    r_net: DenseNet,
    scores: np.ndarray,
    zs: np.ndarray,
    head: HeadSpec,
) -> tuple[float, GradientVector, np.ndarray]:
    """Mean adversary NLL with gradients wrt parameters and wrt scores.

    Returns ``(loss, d loss / d theta_r, d loss / d scores)`` where the
    score gradient has one entry per sample: perturbing score s_m by eps
    changes the mean loss by eps * grad_scores[m] + O(eps^2).
    """
    scores = np.asarray(scores, dtype=np.float64)
    zs = np.asarray(zs)
    if scores.ndim != 1 or scores.shape != zs.shape:
        raise ConfigError("scores and zs must be 1-D and the same length")
    if scores.shape[0] == 0:
        raise ConfigError("scores must be non-empty")
    check_adversary_architecture(r_net, head)
    n = scores.shape[0]
    cache = forward_cached(r_net, scores[:, None])

    if head.kind == "mixture":
        nll, d_raw = mixture_nll_from_raw(cache.final_preact, zs.astype(np.float64))
        grad_params, grad_inputs = backprop_from_final_preact(r_net, cache, d_raw / n)
    else:
        nll, d_preact = categorical_nll_from_probs(cache.output, zs.astype(np.int64))
        grad_params, grad_inputs = backprop_from_final_preact(r_net, cache, d_preact / n)

    return float(nll.mean()), grad_params, grad_inputs[:, 0]
