"""Synthetic dataset generators and dataset file I/O.

Two generators are provided:

* a 2-D two-gaussian toy problem whose class-1 mean slides with a
  continuous nuisance value z drawn from a gaussian prior, and
* an 8-feature binary-nuisance surrogate where a "pileup" condition
  (z=1) shifts and smears a subset of features for both classes.

Dataset files are headered delimited text (columns ``x1..xD,y,z,weight``)
written at full precision so round-trips are lossless and diffs are
readable.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

TOY_MEAN0 = (0.0, 0.0)
TOY_COV0 = ((1.0, -0.5), (-0.5, 1.0))
TOY_MEAN1 = (1.0, 1.0)
TOY_COV1 = ((1.0, 0.0), (0.0, 1.0))

# Surrogate feature layout (8 features):
#   0,1  strong signal separation at z=0, contaminated by pileup
#   2,3  weaker but pileup-proof signal separation
#   4-7  pure noise distractors
# Pileup (z=1) adds energy to the contaminated features of every event,
# but background events gain proportionally more (their soft activity is
# swamped), so the background slides toward the signal region.  The
# signal shift is attenuated by a fixed factor: both classes move, the
# separation degrades, and no feature reveals z on its own.
SURROGATE_N_FEATURES = 8
SURROGATE_SIGNAL_MEANS = np.array([1.0, 1.0, 0.6, 0.6, 0.0, 0.0, 0.0, 0.0])
SURROGATE_PILEUP_FEATURES = np.array([0, 1])
SURROGATE_SIGNAL_SHIFT_FACTOR = 0.25


@dataclass(frozen=True)
class Sample:
    """One observation: features x, binary label y, nuisance z, weight."""

    x: np.ndarray
    y: int
    z: float
    weight: float = 1.0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        object.__setattr__(self, "x", x)
        if self.y not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {self.y}")
        if not self.weight > 0:
            raise DataError(f"weight must be positive, got {self.weight}")
        if not np.all(np.isfinite(x)):
            raise DataError("features must be finite")


@dataclass(frozen=True)
class ToySpec:
    """Two-gaussian toy generator configuration.

    The defaults reproduce the reference construction: class 0 fixed at
    ``mean0``/``cov0``, class 1 at ``(mean1[0], mean1[1] + z_scale * z)``
    with z drawn from N(0, z_prior_sigma^2) for every sample.  Setting
    ``z_scale=0`` decouples the features from z entirely, which is the
    independent-nuisance null used in tests.
    """

    n: int
    z_prior_sigma: float = 1.0
    seed: int = 0
    mean0: tuple[float, float] = TOY_MEAN0
    cov0: tuple[tuple[float, float], tuple[float, float]] = TOY_COV0
    mean1: tuple[float, float] = TOY_MEAN1
    cov1: tuple[tuple[float, float], tuple[float, float]] = TOY_COV1
    z_scale: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if not self.z_prior_sigma > 0:
            raise ConfigError("z_prior_sigma must be positive")


def _toy_draw(spec: ToySpec, n: int, z_values: np.ndarray, rng: np.random.Generator):
    """Features and labels for given per-sample z values."""
    labels = rng.integers(0, 2, size=n)
    eps = rng.standard_normal((n, 2))
    chol0 = np.linalg.cholesky(np.asarray(spec.cov0))
    chol1 = np.linalg.cholesky(np.asarray(spec.cov1))
    x0 = np.asarray(spec.mean0) + eps @ chol0.T
    x1 = np.asarray(spec.mean1) + eps @ chol1.T
    x1[:, 1] += spec.z_scale * z_values
    x = np.where(labels[:, None] == 0, x0, x1)
    return x, labels


def generate_toy(spec: ToySpec) -> list[Sample]:
    """Draw ``spec.n`` samples; deterministic under ``spec.seed``.

    z is drawn for every sample (class-0 features simply ignore it) so
    the adversary always sees the full prior.
    """
    rng = np.random.default_rng(spec.seed)
    z = rng.normal(0.0, spec.z_prior_sigma, size=spec.n)
    x, labels = _toy_draw(spec, spec.n, z, rng)
    return samples_from_arrays(x, labels, z, np.ones(spec.n))


def toy_conditional_sampler(spec: ToySpec):
    """Sampler producing (x, y) batches at a fixed nuisance value.

    Class-1 features are drawn with the given z; class-0 features are
    unaffected by z by construction.
    """

    def sample(z_value: float, n: int, seed: int):
        rng = np.random.default_rng(seed)
        z = np.full(n, float(z_value))
        return _toy_draw(spec, n, z, rng)

    return sample


@dataclass(frozen=True)
class SurrogateSpec:
    """Binary-nuisance surrogate generator configuration.

    z=1 ("pileup") adds ``pileup_shift`` and gaussian noise of scale
    ``pileup_noise`` to the pileup-sensitive features of both classes.
    ``pileup_fraction`` is p(z=1); the default 0.5 is the nominal mixed
    run, while values near 1 model data taken under heavy pileup.  When
    ``s_total``/``b_total`` are set, per-sample weights are scaled so the
    summed weights of the y=1 and y=0 populations match them exactly.
    """

    n: int
    seed: int = 0
    pileup_shift: float = 0.5
    pileup_noise: float = 0.5
    pileup_fraction: float = 0.5
    signal_fraction: float = 0.5
    s_total: float | None = None
    b_total: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if not 0.0 < self.signal_fraction < 1.0:
            raise ConfigError("signal_fraction must be in (0, 1)")
        if not 0.0 <= self.pileup_fraction <= 1.0:
            raise ConfigError("pileup_fraction must be in [0, 1]")


def _surrogate_draw(
    spec: SurrogateSpec, n: int, z: np.ndarray, rng: np.random.Generator
):
    labels = (rng.random(n) < spec.signal_fraction).astype(np.int64)
    x = rng.standard_normal((n, SURROGATE_N_FEATURES))
    x += labels[:, None] * SURROGATE_SIGNAL_MEANS
    pileup_eps = rng.standard_normal((n, SURROGATE_PILEUP_FEATURES.size))
    shift = spec.pileup_shift * np.where(
        labels == 1, SURROGATE_SIGNAL_SHIFT_FACTOR, 1.0
    )
    mask = z[:, None]
    x[:, SURROGATE_PILEUP_FEATURES] += mask * (
        shift[:, None] + spec.pileup_noise * pileup_eps
    )
    return x, labels


def generate_surrogate_physics(spec: SurrogateSpec) -> list[Sample]:
    """Draw the binary-pileup surrogate; deterministic under ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    z = (rng.random(spec.n) < spec.pileup_fraction).astype(np.float64)
    x, labels = _surrogate_draw(spec, spec.n, z, rng)
    weights = np.ones(spec.n)
    if spec.s_total is not None:
        n_sig = int(labels.sum())
        if n_sig == 0:
            raise ConfigError("cannot scale signal weights: no y=1 samples drawn")
        weights[labels == 1] = spec.s_total / n_sig
    if spec.b_total is not None:
        n_bkg = int((labels == 0).sum())
        if n_bkg == 0:
            raise ConfigError("cannot scale background weights: no y=0 samples drawn")
        weights[labels == 0] = spec.b_total / n_bkg
    return samples_from_arrays(x, labels, z, weights)


def surrogate_conditional_sampler(spec: SurrogateSpec):
    """Sampler producing (x, y) batches at a fixed pileup condition."""

    def sample(z_value: float, n: int, seed: int):
        rng = np.random.default_rng(seed)
        z = np.full(n, float(z_value))
        return _surrogate_draw(spec, n, z, rng)

    return sample


def stack_samples(samples: list[Sample]):
    """Pack a sample list into (X, y, z, w) arrays."""
    if not samples:
        raise DataError("empty sample list")
    x = np.stack([s.x for s in samples])
    y = np.asarray([s.y for s in samples], dtype=np.int64)
    z = np.asarray([s.z for s in samples], dtype=np.float64)
    w = np.asarray([s.weight for s in samples], dtype=np.float64)
    return x, y, z, w


def samples_from_arrays(x, y, z, w) -> list[Sample]:
    return [
        Sample(x=x[i], y=int(y[i]), z=float(z[i]), weight=float(w[i]))
        for i in range(len(y))
    ]


def write_dataset(samples: list[Sample], path: str | Path) -> None:
    """Write samples as headered delimited text at full precision."""
    path = Path(path)
    if not samples:
        raise DataError("refusing to write an empty dataset")
    dim = samples[0].x.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i + 1}" for i in range(dim)] + ["y", "z", "weight"])
        for s in samples:
            if s.x.shape[0] != dim:
                raise DataError("inconsistent feature dimension across samples")
            writer.writerow(
                [repr(float(v)) for v in s.x] + [s.y, repr(s.z), repr(s.weight)]
            )


def read_dataset(path: str | Path) -> list[Sample]:
    """Read a dataset file; lossless inverse of :func:`write_dataset`.

    A file with only a header is an empty dataset.  Malformed rows raise
    DataError naming the line.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected a header row")
        _check_header(path, header)
        dim = len(header) - 3
        samples = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                x = np.array([float(v) for v in row[:dim]])
                y_raw = float(row[dim])
                z = float(row[dim + 1])
                weight = float(row[dim + 2])
            except ValueError as exc:
                raise DataError(f"{path}:{line_no}: unparseable value ({exc})") from exc
            if y_raw not in (0.0, 1.0):
                raise DataError(f"{path}:{line_no}: label must be 0 or 1, got {row[dim]}")
            try:
                samples.append(Sample(x=x, y=int(y_raw), z=z, weight=weight))
            except DataError as exc:
                raise DataError(f"{path}:{line_no}: {exc}") from exc
    return samples


def _check_header(path: Path, header: list[str]) -> None:
    if len(header) < 4:
        raise DataError(f"{path}: header must contain x1..xD, y, z, weight")
    dim = len(header) - 3
    expected = [f"x{i + 1}" for i in range(dim)] + ["y", "z", "weight"]
    if header != expected:
        raise DataError(f"{path}: bad header {header}, expected {expected}")


# --- generator sidecars -------------------------------------------------
#
# A dataset file on its own cannot answer "what would these features look
# like at a different nuisance value?", which score-density evaluation
# needs.  Generators therefore leave a sidecar JSON next to the dataset
# recording their own configuration.

SIDECAR_FORMAT = "pivotnet-dataset"
SIDECAR_VERSION = 1
GENERATOR_KINDS = {"toy": ToySpec, "surrogate": SurrogateSpec}


def sidecar_path(data_path: str | Path) -> Path:
    return Path(str(data_path) + ".manifest.json")


def _jsonable(value):
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    return value


def write_generator_sidecar(kind: str, spec, data_path: str | Path) -> None:
    if kind not in GENERATOR_KINDS:
        raise ConfigError(f"unknown generator kind {kind!r}")
    payload = {
        "format": SIDECAR_FORMAT,
        "version": SIDECAR_VERSION,
        "kind": kind,
        "spec": {k: _jsonable(v) for k, v in asdict(spec).items()},
    }
    with open(sidecar_path(data_path), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _detuple(value):
    if isinstance(value, list):
        return tuple(_detuple(v) for v in value)
    return value


def read_generator_sidecar(data_path: str | Path):
    """Return (kind, spec) for a dataset's sidecar, or None if absent."""
    path = sidecar_path(data_path)
    if not path.exists():
        return None
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read dataset sidecar {path}: {exc}") from exc
    if payload.get("format") != SIDECAR_FORMAT:
        raise DataError(f"{path}: not a dataset sidecar")
    if payload.get("version") != SIDECAR_VERSION:
        raise DataError(f"{path}: unsupported sidecar version {payload.get('version')}")
    kind = payload.get("kind")
    if kind not in GENERATOR_KINDS:
        raise DataError(f"{path}: unknown generator kind {kind!r}")
    spec_cls = GENERATOR_KINDS[kind]
    fields_raw = {k: _detuple(v) for k, v in payload["spec"].items()}
    try:
        spec = spec_cls(**fields_raw)
    except TypeError as exc:
        raise DataError(f"{path}: sidecar fields do not match {kind}: {exc}") from exc
    return kind, spec


def conditional_sampler(kind: str, spec):
    """Dispatch to the generator's fixed-z sampler."""
    if kind == "toy":
        return toy_conditional_sampler(spec)
    if kind == "surrogate":
        return surrogate_conditional_sampler(spec)
    raise ConfigError(f"unknown generator kind {kind!r}")
