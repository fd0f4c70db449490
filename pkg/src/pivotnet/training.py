"""Pretraining and adversarial (minimax) training.

The adversarial loop alternates, per outer iteration, K adversary
updates (descending its NLL, i.e. ascending the value function) with one
classifier update descending the combined objective

    L_f - lambda * L_r

where the adversarial term's gradient reaches the classifier parameters
by backpropagating the adversary's score-gradient through the
classifier.  Three independent RNG streams (classifier batches,
adversary batches, evaluation) keep the classifier's batch sequence
identical whether or not an adversary is attached, which is what makes
the lambda=0 run bit-identical to plain BCE training.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adversary import HeadSpec, adversary_loss, check_adversary_architecture
from .datasets import Sample, stack_samples
from .errors import ConfigError, NumericalError, TrainingError
from .nets import (
    DenseNet,
    backprop_from_final_preact,
    bce_with_logits,
    forward_batch,
    forward_cached,
)
from .optim import OptimizerState, make_optimizer, optimizer_step

DEFAULT_HEAD = HeadSpec("mixture", 5)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the minimax procedure.

    ``lam`` is the pivotality/accuracy trade-off weight; ``adversary_steps``
    (K) inner updates are taken per outer iteration, ``iterations`` (T)
    outer iterations in total, with minibatches of ``minibatch_size`` (M).
    ``conditional_on_y`` restricts the adversary to one label class.
    """

    lam: float = 1.0
    minibatch_size: int = 128
    adversary_steps: int = 50
    iterations: int = 200
    pretrain_epochs: int = 20
    classifier_lr: float = 1e-3
    adversary_lr: float = 1e-3
    seed: int = 0
    conditional_on_y: int | None = None
    head: HeadSpec = DEFAULT_HEAD
    optimizer: str = "adam"
    eval_fraction: float = 0.1
    checkpoint_every: int = 10

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if min(self.minibatch_size, self.adversary_steps, self.iterations) < 1:
            raise ConfigError("M, K and T must all be >= 1")
        if self.pretrain_epochs < 0:
            raise ConfigError("pretrain_epochs must be >= 0")
        if not (self.classifier_lr > 0 and self.adversary_lr > 0):
            raise ConfigError("learning rates must be positive")
        if self.conditional_on_y not in (None, 0, 1):
            raise ConfigError("conditional_on_y must be None, 0 or 1")
        if not 0.0 < self.eval_fraction < 1.0:
            raise ConfigError("eval_fraction must be in (0, 1)")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    loss_f: float
    loss_r: float
    e_lambda: float


@dataclass(frozen=True)
class Snapshot:
    iteration: int
    f: DenseNet
    r: DenseNet
    accuracy: float
    extras: dict = field(default_factory=dict)


@dataclass
class RunMetrics:
    """Per-iteration losses plus periodic full-state snapshots."""

    records: list[IterationRecord] = field(default_factory=list)
    snapshots: list[Snapshot] = field(default_factory=list)


def derive_streams(seed: int):
    """Independent child generators: (classifier batches, adversary batches)."""
    children = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(children[0]), np.random.default_rng(children[1])


def split_train_eval(samples: list[Sample], eval_fraction: float):
    """Deterministic split: the trailing fraction is the evaluation set."""
    x, y, z, w = stack_samples(samples)
    n = len(y)
    n_eval = max(1, int(np.ceil(n * eval_fraction)))
    if n_eval >= n:
        raise ConfigError("dataset too small for the requested eval fraction")
    cut = n - n_eval
    train = (x[:cut], y[:cut], z[:cut], w[:cut])
    evalset = (x[cut:], y[cut:], z[cut:], w[cut:])
    return train, evalset


def sample_minibatch(data, m: int, rng: np.random.Generator, label_filter: int | None = None):
    """Draw M samples i.i.d. with replacement; optionally from one class."""
    x, y, z, w = data
    if len(y) == 0:
        raise ConfigError("cannot sample from an empty dataset")
    if label_filter is not None:
        pool = np.nonzero(y == label_filter)[0]
        if pool.size == 0:
            raise ConfigError(f"no samples with label {label_filter} to draw from")
        idx = pool[rng.integers(0, pool.size, size=m)]
    else:
        idx = rng.integers(0, len(y), size=m)
    return x[idx], y[idx], z[idx], w[idx]


def _z_targets(z: np.ndarray, head: HeadSpec) -> np.ndarray:
    if head.kind == "mixture":
        return z.astype(np.float64)
    targets = np.rint(z).astype(np.int64)
    if np.any(targets < 0) or np.any(targets >= head.size):
        raise ConfigError(
            f"categorical nuisance values must be integers in [0, {head.size})"
        )
    return targets


def _check_players(f: DenseNet, r: DenseNet, head: HeadSpec) -> None:
    if f.output_size != 1 or f.activations[-1] != "sigmoid":
        raise ConfigError("classifier must end in a single sigmoid output")
    check_adversary_architecture(r, head)


def _classifier_grad(
    f: DenseNet,
    batch,
    lam: float,
    r: DenseNet | None,
    head: HeadSpec | None,
    conditional_on_y: int | None,
):
    """Gradient of mean BCE minus lam times the adversary's mean NLL.

    The adversarial term enters through the score: its per-score gradient
    is chained through the output sigmoid and added to the BCE seed, then
    a single backward pass through f produces the full parameter
    gradient.  When ``lam`` is exactly 0 the adversarial computation is
    skipped entirely, keeping the update bit-identical to BCE training.
    """
    xb, yb, zb, _ = batch
    m = len(yb)
    cache = forward_cached(f, xb)
    logits = cache.final_preact[:, 0]
    losses, dlogit = bce_with_logits(logits, yb.astype(np.float64))
    seed = dlogit / m
    if lam != 0.0 and r is not None:
        scores = cache.output[:, 0]
        if conditional_on_y is not None:
            sel = np.nonzero(yb == conditional_on_y)[0]
        else:
            sel = np.arange(m)
        if sel.size > 0:
            z_t = _z_targets(zb[sel], head)
            _, _, grad_scores = adversary_loss(r, scores[sel], z_t, head)
            s = scores[sel]
            seed[sel] += -lam * grad_scores * s * (1.0 - s)
    grad, _ = backprop_from_final_preact(f, cache, seed[:, None])
    return float(losses.mean()), grad


def _bce_steps(
    f: DenseNet,
    opt: OptimizerState,
    data,
    n_steps: int,
    m: int,
    rng: np.random.Generator,
    phase: str,
):
    """Plain BCE minibatch training; shared by pretraining and bce-only runs."""
    for step in range(n_steps):
        batch = sample_minibatch(data, m, rng)
        try:
            _, grad = _classifier_grad(f, batch, 0.0, None, None, None)
            f, opt = optimizer_step(opt, f, grad, "descend")
        except NumericalError as exc:
            raise TrainingError(
                f"{phase} diverged at step {step}: {exc}", iteration=step
            ) from exc
    return f, opt


def pretrain_classifier(
    f: DenseNet,
    data: list[Sample],
    config: TrainConfig,
    rng: np.random.Generator | None = None,
) -> DenseNet:
    """Train the classifier on BCE alone for ``pretrain_epochs`` passes.

    An "epoch" is n_train // M minibatches drawn i.i.d. with replacement.
    With ``pretrain_epochs=0`` the network is returned unchanged.
    """
    if rng is None:
        rng, _ = derive_streams(config.seed)
    train, _ = split_train_eval(data, config.eval_fraction)
    if config.pretrain_epochs == 0:
        return f
    steps_per_epoch = max(1, len(train[1]) // config.minibatch_size)
    opt = make_optimizer(config.optimizer, config.classifier_lr, f.params.shape[0])
    f, _ = _bce_steps(
        f,
        opt,
        train,
        config.pretrain_epochs * steps_per_epoch,
        config.minibatch_size,
        rng,
        phase="pretraining",
    )
    return f


def _evaluate(f, r, evalset, head, conditional_on_y):
    x, y, z, _ = evalset
    cache = forward_cached(f, x)
    losses, _ = bce_with_logits(cache.final_preact[:, 0], y.astype(np.float64))
    loss_f = float(losses.mean())
    scores = cache.output[:, 0]
    accuracy = float(np.mean((scores > 0.5) == (y == 1)))
    if conditional_on_y is not None:
        keep = y == conditional_on_y
        scores_r, z_r = scores[keep], z[keep]
    else:
        scores_r, z_r = scores, z
    loss_r, _, _ = adversary_loss(r, scores_r, _z_targets(z_r, head), head)
    return loss_f, loss_r, accuracy


def adversarial_train(
    f: DenseNet,
    r: DenseNet,
    data: list[Sample],
    config: TrainConfig,
    streams: tuple[np.random.Generator, np.random.Generator] | None = None,
    snapshot_hook=None,
) -> tuple[DenseNet, DenseNet, RunMetrics]:
    """Run T outer iterations of the alternating minimax procedure.

    Each iteration trains the adversary for K minibatches with the
    classifier frozen, then takes one classifier step on the combined
    objective.  Losses are recorded per iteration on the held-out
    evaluation split; full (f, r) snapshots are kept every
    ``checkpoint_every`` iterations.  On numerical failure a
    TrainingError carrying the last good snapshot is raised.
    """
    _check_players(f, r, config.head)
    clf_rng, adv_rng = streams if streams is not None else derive_streams(config.seed)
    train, evalset = split_train_eval(data, config.eval_fraction)
    if config.conditional_on_y is not None:
        if not np.any(train[1] == config.conditional_on_y):
            raise ConfigError(
                f"no training samples with label {config.conditional_on_y}"
            )
    opt_f = make_optimizer(config.optimizer, config.classifier_lr, f.params.shape[0])
    opt_r = make_optimizer(config.optimizer, config.adversary_lr, r.params.shape[0])

    metrics = RunMetrics()
    loss_f, loss_r, accuracy = _evaluate(
        f, r, evalset, config.head, config.conditional_on_y
    )
    metrics.snapshots.append(_make_snapshot(0, f, r, accuracy, snapshot_hook))

    for t in range(1, config.iterations + 1):
        try:
            for _ in range(config.adversary_steps):
                xb, _, zb, _ = sample_minibatch(
                    train, config.minibatch_size, adv_rng, config.conditional_on_y
                )
                scores = forward_batch(f, xb)[:, 0]
                _, grad_r, _ = adversary_loss(
                    r, scores, _z_targets(zb, config.head), config.head
                )
                # Descending the NLL is ascending the log-likelihood value function.
                r, opt_r = optimizer_step(opt_r, r, grad_r, "descend")

            batch = sample_minibatch(train, config.minibatch_size, clf_rng)
            _, grad_f = _classifier_grad(
                f, batch, config.lam, r, config.head, config.conditional_on_y
            )
            f, opt_f = optimizer_step(opt_f, f, grad_f, "descend")

            loss_f, loss_r, accuracy = _evaluate(
                f, r, evalset, config.head, config.conditional_on_y
            )
            if not (np.isfinite(loss_f) and np.isfinite(loss_r)):
                raise NumericalError(f"non-finite evaluation loss at iteration {t}")
        except NumericalError as exc:
            raise TrainingError(
                f"training failed at iteration {t}: {exc}",
                iteration=t,
                last_good=metrics.snapshots[-1] if metrics.snapshots else None,
            ) from exc

        metrics.records.append(
            IterationRecord(
                iteration=t,
                loss_f=loss_f,
                loss_r=loss_r,
                e_lambda=loss_f - config.lam * loss_r,
            )
        )
        if t % config.checkpoint_every == 0 or t == config.iterations:
            metrics.snapshots.append(_make_snapshot(t, f, r, accuracy, snapshot_hook))

    return f, r, metrics


def _make_snapshot(iteration, f, r, accuracy, snapshot_hook):
    extras = snapshot_hook(f) if snapshot_hook is not None else {}
    return Snapshot(iteration=iteration, f=f, r=r, accuracy=accuracy, extras=extras)


def refit_adversary(
    f: DenseNet,
    r: DenseNet,
    data: list[Sample],
    head: HeadSpec,
    steps: int = 500,
    minibatch_size: int = 128,
    learning_rate: float = 1e-3,
    rng: np.random.Generator | None = None,
    label_filter: int | None = None,
    optimizer: str = "adam",
) -> DenseNet:
    """Train only the adversary against a frozen classifier.

    Used to tighten L_r toward the true conditional entropy H(Z|f(X))
    before reading off the value-function bound for a saved classifier.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    arrays = stack_samples(data)
    opt = make_optimizer(optimizer, learning_rate, r.params.shape[0])
    for step in range(steps):
        xb, _, zb, _ = sample_minibatch(arrays, minibatch_size, rng, label_filter)
        scores = forward_batch(f, xb)[:, 0]
        try:
            _, grad, _ = adversary_loss(r, scores, _z_targets(zb, head), head)
            r, opt = optimizer_step(opt, r, grad, "descend")
        except NumericalError as exc:
            raise TrainingError(
                f"adversary refit diverged at step {step}: {exc}", iteration=step
            ) from exc
    return r


@dataclass
class TrainResult:
    f: DenseNet
    r: DenseNet | None
    metrics: RunMetrics


def run_training(
    samples: list[Sample],
    config: TrainConfig,
    f0: DenseNet,
    r0: DenseNet | None,
    bce_only: bool = False,
    snapshot_hook=None,
) -> TrainResult:
    """Pretraining followed by either adversarial training or, with
    ``bce_only``, the same number of plain BCE classifier steps.

    The classifier's batch stream is shared between both phases and both
    modes, so a ``lam=0`` adversarial run and a ``bce_only`` run produce
    bit-identical classifiers under the same seed.
    """
    clf_rng, adv_rng = derive_streams(config.seed)
    f = pretrain_classifier(f0, samples, config, rng=clf_rng)
    if bce_only:
        train, evalset = split_train_eval(samples, config.eval_fraction)
        opt = make_optimizer(config.optimizer, config.classifier_lr, f.params.shape[0])
        f, _ = _bce_steps(
            f, opt, train, config.iterations, config.minibatch_size, clf_rng, "bce-only"
        )
        return TrainResult(f=f, r=None, metrics=RunMetrics())
    if r0 is None:
        raise ConfigError("adversarial training needs an adversary network")
    f, r, metrics = adversarial_train(
        f, r0, samples, config, streams=(clf_rng, adv_rng), snapshot_hook=snapshot_hook
    )
    return TrainResult(f=f, r=r, metrics=metrics)


METRICS_COLUMNS = ("iteration", "loss_f", "loss_r", "e_lambda")


def write_metrics_csv(metrics: RunMetrics, path: str | Path) -> None:
    """Fixed schema: iteration,loss_f,loss_r,e_lambda at full precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for rec in metrics.records:
            writer.writerow(
                [rec.iteration, repr(rec.loss_f), repr(rec.loss_r), repr(rec.e_lambda)]
            )


def read_metrics_csv(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != METRICS_COLUMNS:
            raise ConfigError(f"{path}: unexpected metrics schema {header}")
        rows = [[float(v) for v in row] for row in reader if row]
    cols = np.asarray(rows, dtype=np.float64).reshape(-1, len(METRICS_COLUMNS))
    return {name: cols[:, i] for i, name in enumerate(METRICS_COLUMNS)}
