"""Dense feed-forward networks with exact analytic gradients.

This is deliberately a minimal engine: fixed layer zoo, flat float64
parameter vector, hand-derived backward passes.  Everything downstream
(adversary heads, minimax training) builds on the primitives here.

Canonical flat parameter ordering
---------------------------------
For layer ``l`` mapping ``n_in -> n_out`` the block layout is::

    [ W_l  (n_in * n_out entries, row-major: W_l[i, j] = weight from
            input unit i to output unit j),
      b_l  (n_out entries) ]

blocks concatenated in layer order.  Checkpoints store this vector
verbatim, so any consumer honouring the ordering can reload them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, NumericalError

ACTIVATIONS = ("tanh", "relu", "sigmoid", "linear", "exponential", "softmax")

# Head activations only make sense on the last layer of an adversary.
FINAL_ONLY_ACTIVATIONS = ("softmax", "exponential")

#: Flat gradient with the same length and ordering as ``DenseNet.params``.
GradientVector = np.ndarray


@dataclass(frozen=True)
class DenseNet:
    """Immutable fully-connected network.

    ``layer_sizes`` lists unit counts including the input layer, so a
    2-20-20-1 classifier is ``layer_sizes=(2, 20, 20, 1)`` with three
    activation tags, one per weight layer.
    """

    layer_sizes: tuple[int, ...]
    activations: tuple[str, ...]
    params: np.ndarray

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        acts = tuple(str(a) for a in self.activations)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "activations", acts)
        validate_architecture(sizes, acts)
        params = np.asarray(self.params, dtype=np.float64)
        if params.ndim != 1 or params.shape[0] != n_params(sizes):
            raise ConfigError(
                f"params must be a flat vector of length {n_params(sizes)}, "
                f"got shape {params.shape}"
            )
        params = params.copy()
        params.flags.writeable = False
        object.__setattr__(self, "params", params)

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]


def validate_architecture(layer_sizes: Sequence[int], activations: Sequence[str]) -> None:
    if len(layer_sizes) < 2:
        raise ConfigError("need at least an input and an output layer")
    if any(s < 1 for s in layer_sizes):
        raise ConfigError(f"layer sizes must be positive, got {tuple(layer_sizes)}")
    n_layers = len(layer_sizes) - 1
    if len(activations) != n_layers:
        raise ConfigError(
            f"expected {n_layers} activation tags for {n_layers} layers, "
            f"got {len(activations)}"
        )
    for i, act in enumerate(activations):
        if act not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {act!r} (layer {i})")
        if act in FINAL_ONLY_ACTIVATIONS and i != n_layers - 1:
            raise ConfigError(f"{act} is only allowed in the final layer, found at layer {i}")


def n_params(layer_sizes: Sequence[int]) -> int:
    return sum(
        n_in * n_out + n_out for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:])
    )


def init_params(layer_sizes: Sequence[int], activations: Sequence[str], seed: int) -> DenseNet:
    """Glorot-uniform weights, zero biases, deterministic under ``seed``."""
    validate_architecture(layer_sizes, activations)
    rng = np.random.default_rng(seed)
    blocks = []
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / (n_in + n_out))
        blocks.append(rng.uniform(-limit, limit, size=n_in * n_out))
        blocks.append(np.zeros(n_out))
    return DenseNet(tuple(layer_sizes), tuple(activations), np.concatenate(blocks))


def with_params(net: DenseNet, params: np.ndarray) -> DenseNet:
    """New network sharing ``net``'s architecture with replaced parameters."""
    return DenseNet(net.layer_sizes, net.activations, params)


def unpack_params(net: DenseNet) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views (W, b) per layer into the flat vector, W shaped (n_in, n_out)."""
    out = []
    offset = 0
    for n_in, n_out in zip(net.layer_sizes[:-1], net.layer_sizes[1:]):
        w = net.params[offset : offset + n_in * n_out].reshape(n_in, n_out)
        offset += n_in * n_out
        b = net.params[offset : offset + n_out]
        offset += n_out
        out.append((w, b))
    return out


def _apply_activation(tag: str, z: np.ndarray) -> np.ndarray:
    if tag == "tanh":
        return np.tanh(z)
    if tag == "relu":
        return np.maximum(z, 0.0)
    if tag == "sigmoid":
        return _sigmoid(z)
    if tag == "linear":
        return z
    if tag == "exponential":
        return np.exp(z)
    if tag == "softmax":
        shifted = z - np.max(z, axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / np.sum(e, axis=1, keepdims=True)
    raise ConfigError(f"unknown activation {tag!r}")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activation_backward(tag: str, a: np.ndarray, z: np.ndarray, da: np.ndarray) -> np.ndarray:
    """Map dLoss/dA to dLoss/dZ for one layer."""
    if tag == "tanh":
        return da * (1.0 - a * a)
    if tag == "relu":
        return np.where(z > 0.0, da, 0.0)
    if tag == "sigmoid":
        return da * a * (1.0 - a)
    if tag == "linear":
        return da
    if tag == "exponential":
        return da * a
    if tag == "softmax":
        # Full Jacobian: dZ_j = a_j * (dA_j - sum_k dA_k a_k)
        inner = np.sum(da * a, axis=1, keepdims=True)
        return a * (da - inner)
    raise ConfigError(f"unknown activation {tag!r}")


class ForwardCache:
    """Per-layer pre-activations and activations from one batched pass."""

    __slots__ = ("inputs", "preacts", "acts")

    def __init__(self, inputs, preacts, acts):
        self.inputs = inputs
        self.preacts = preacts  # preacts[l] = Z_{l+1}
        self.acts = acts  # acts[l] = A_{l+1}

    @property
    def output(self) -> np.ndarray:
        return self.acts[-1]

    @property
    def final_preact(self) -> np.ndarray:
        return self.preacts[-1]


def forward_cached(net: DenseNet, x_batch: np.ndarray) -> ForwardCache:
    """Forward pass over a batch (N, input_size), keeping what backward needs.

    Raises NumericalError naming the layer if any intermediate overflows.
    """
    x = np.asarray(x_batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_size:
        raise ConfigError(
            f"input batch must have shape (N, {net.input_size}), got {x.shape}"
        )
    a = x
    preacts, acts = [], []
    for l, ((w, b), tag) in enumerate(zip(unpack_params(net), net.activations)):
        z = a @ w + b
        a = _apply_activation(tag, z)
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(a))):
            raise NumericalError(f"non-finite value in layer {l}", layer_index=l)
        preacts.append(z)
        acts.append(a)
    return ForwardCache(x, preacts, acts)


def forward_batch(net: DenseNet, x_batch: np.ndarray) -> np.ndarray:
    """Batched forward pass, output shape (N, output_size)."""
    return forward_cached(net, x_batch).output


def forward(net: DenseNet, x: np.ndarray) -> np.ndarray:
    """Forward pass on a single input vector, output shape (output_size,)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.input_size:
        raise ConfigError(f"input must have shape ({net.input_size},), got {x.shape}")
    return forward_batch(net, x[None, :])[0]


def backprop_from_final_preact(
    net: DenseNet, cache: ForwardCache, d_final_preact: np.ndarray
) -> tuple[GradientVector, np.ndarray]:
    """Backpropagate a dLoss/dZ_final seed through the whole net.

    Returns the flat parameter gradient and dLoss/dInput (N, input_size).
    Seeding at the final pre-activation lets loss heads fuse the output
    nonlinearity into the loss for numerical stability (logit BCE,
    softmax cross-entropy).
    """
    layers = unpack_params(net)
    grads = [None] * len(layers)
    dz = d_final_preact
    for l in range(len(layers) - 1, -1, -1):
        w, _ = layers[l]
        a_prev = cache.acts[l - 1] if l > 0 else cache.inputs
        dw = a_prev.T @ dz
        db = dz.sum(axis=0)
        grads[l] = (dw, db)
        da_prev = dz @ w.T
        if l > 0:
            dz = _activation_backward(
                net.activations[l - 1], cache.acts[l - 1], cache.preacts[l - 1], da_prev
            )
    flat = np.concatenate([np.concatenate([dw.ravel(), db]) for dw, db in grads])
    if not np.all(np.isfinite(flat)):
        raise NumericalError("non-finite parameter gradient", layer_index=None)
    return flat, da_prev


def backprop_from_output(
    net: DenseNet, cache: ForwardCache, d_output: np.ndarray
) -> tuple[GradientVector, np.ndarray]:
    """Backpropagate a dLoss/dOutput seed (gradient wrt final activations)."""
    dz = _activation_backward(
        net.activations[-1], cache.acts[-1], cache.preacts[-1], d_output
    )
    return backprop_from_final_preact(net, cache, dz)


def bce_with_logits(logits: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample binary cross-entropy and d/d logit, stable for any logit.

    ``loss = softplus(z) - y * z`` which equals ``-log sigmoid(z)`` for y=1
    and ``-log(1 - sigmoid(z))`` for y=0.
    """
    z = logits
    y = targets
    softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    loss = softplus - y * z
    dloss = _sigmoid(z) - y
    return loss, dloss


def loss_and_grad(
    net: DenseNet,
    batch: Sequence[tuple[np.ndarray, float]],
    loss_tag: str,
) -> tuple[float, GradientVector]:
    """Mean loss over a batch and its exact gradient wrt ``net.params``.

    ``loss_tag`` selects the head:

    * ``bce``      -- final layer sigmoid, width 1, binary targets
    * ``mdn_nll``  -- final layer linear, width 3C, real targets
    * ``cat_nll``  -- final layer softmax, integer category targets
    """
    if len(batch) == 0:
        raise ConfigError("batch must be non-empty")
    xs = np.asarray([np.atleast_1d(np.asarray(x, dtype=np.float64)) for x, _ in batch])
    targets = np.asarray([t for _, t in batch])
    cache = forward_cached(net, xs)
    n = xs.shape[0]

    if loss_tag == "bce":
        if net.activations[-1] != "sigmoid" or net.output_size != 1:
            raise ConfigError("bce requires a single sigmoid output")
        losses, dlogit = bce_with_logits(cache.final_preact[:, 0], targets.astype(np.float64))
        grad, _ = backprop_from_final_preact(net, cache, (dlogit / n)[:, None])
        return float(losses.mean()), grad

    if loss_tag == "mdn_nll":
        from .adversary import mixture_nll_from_raw

        losses, draw = mixture_nll_from_raw(cache.final_preact, targets.astype(np.float64))
        _require_head(net, "linear", "mdn_nll")
        grad, _ = backprop_from_final_preact(net, cache, draw / n)
        return float(losses.mean()), grad

    if loss_tag == "cat_nll":
        from .adversary import categorical_nll_from_probs

        _require_head(net, "softmax", "cat_nll")
        losses, dpreact = categorical_nll_from_probs(cache.output, targets.astype(np.int64))
        grad, _ = backprop_from_final_preact(net, cache, dpreact / n)
        return float(losses.mean()), grad

    raise ConfigError(f"unknown loss tag {loss_tag!r}")


def _require_head(net: DenseNet, activation: str, tag: str) -> None:
    if net.activations[-1] != activation:
        raise ConfigError(f"{tag} requires a {activation} final layer, got {net.activations[-1]}")


def finite_difference_gradient(
    loss_fn: Callable[[np.ndarray], float],
    params: np.ndarray,
    h: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient of a scalar loss, one coordinate at a time.

    Verification oracle: only evaluates the loss, never the analytic
    backward path.
    """
    params = np.asarray(params, dtype=np.float64)
    grad = np.empty_like(params)
    for i in range(params.shape[0]):
        bumped = params.copy()
        bumped[i] = params[i] + h
        up = loss_fn(bumped)
        bumped[i] = params[i] - h
        down = loss_fn(bumped)
        grad[i] = (up - down) / (2.0 * h)
    return grad
