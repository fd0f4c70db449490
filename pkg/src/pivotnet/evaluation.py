"""Everything measured about a trained classifier.

Conditional score densities and their KS distances quantify pivotality;
the gaussian-entropy constant and the Monte-Carlo + quadrature estimate
of the label-given-features entropy supply the reference values for the
accuracy/pivotality lower bound; the AMS scan is the figure of merit for
the binary-nuisance study.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.polynomial.hermite import hermgauss

from .datasets import Sample, ToySpec, stack_samples
from .errors import EvaluationError
from .nets import DenseNet, forward_batch

N_SCORE_BINS = 50
SCORE_BIN_EDGES = np.linspace(0.0, 1.0, N_SCORE_BINS + 1)
MIN_DENSITY_SAMPLES = 1000


@dataclass(frozen=True)
class ConditionalDensity:
    """Histogram of classifier scores at one fixed nuisance value."""

    z_value: float
    bin_edges: np.ndarray
    bin_masses: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        masses = np.asarray(self.bin_masses, dtype=np.float64)
        if edges.ndim != 1 or masses.ndim != 1 or edges.size != masses.size + 1:
            raise EvaluationError("need N+1 edges for N bin masses")
        if np.any(np.diff(edges) <= 0):
            raise EvaluationError("bin edges must be strictly increasing")
        if np.any(masses < 0) or abs(masses.sum() - 1.0) > 1e-9:
            raise EvaluationError("bin masses must be non-negative and sum to 1")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "bin_masses", masses)


def conditional_score_density(
    f: DenseNet,
    sampler,
    z_value: float,
    n_samples: int,
    seed: int = 0,
    y_restrict: int | None = None,
) -> ConditionalDensity:
    """Score histogram over fresh draws at a fixed nuisance value.

    ``sampler(z_value, n, seed)`` must return an ``(X, y)`` batch at that
    nuisance value.  ``y_restrict`` keeps only one label class
    (class-conditional pivotality).
    """
    if n_samples < MIN_DENSITY_SAMPLES:
        raise EvaluationError(
            f"n_samples={n_samples} is too noisy; need >= {MIN_DENSITY_SAMPLES}"
        )
    x, y = sampler(z_value, n_samples, seed)
    if y_restrict is not None:
        x = x[y == y_restrict]
        if x.shape[0] == 0:
            raise EvaluationError(f"no samples with y={y_restrict} at z={z_value}")
    scores = forward_batch(f, x)[:, 0]
    counts, _ = np.histogram(scores, bins=SCORE_BIN_EDGES)
    return ConditionalDensity(
        z_value=float(z_value),
        bin_edges=SCORE_BIN_EDGES,
        bin_masses=counts / counts.sum(),
    )


def ks_distance(a: ConditionalDensity, b: ConditionalDensity) -> float:
    """Max absolute difference of the binned CDFs; a metric on densities."""
    if not np.array_equal(a.bin_edges, b.bin_edges):
        raise EvaluationError("densities must share bin edges")
    return float(np.max(np.abs(np.cumsum(a.bin_masses) - np.cumsum(b.bin_masses))))


@dataclass(frozen=True)
class PivotalityReport:
    """Pairwise KS structure of score densities across a nuisance grid."""

    z_grid: tuple[float, ...]
    densities: tuple[ConditionalDensity, ...]
    ks_matrix: np.ndarray
    max_ks: float


def pivotality_report(
    f: DenseNet,
    sampler,
    z_grid,
    n_samples: int = 100_000,
    seed: int = 0,
    y_restrict: int | None = None,
) -> PivotalityReport:
    """Conditional densities at each grid point plus their KS matrix.

    ``max_ks`` (largest pairwise KS distance) is the headline pivotality
    score: 0 for a perfectly pivotal classifier.
    """
    z_grid = tuple(float(z) for z in z_grid)
    if not z_grid:
        raise EvaluationError("z_grid must be non-empty")
    densities = tuple(
        conditional_score_density(f, sampler, z, n_samples, seed=seed + i, y_restrict=y_restrict)
        for i, z in enumerate(z_grid)
    )
    k = len(densities)
    ks = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            ks[i, j] = ks[j, i] = ks_distance(densities[i], densities[j])
    return PivotalityReport(
        z_grid=z_grid,
        densities=densities,
        ks_matrix=ks,
        max_ks=float(ks.max()) if k > 1 else 0.0,
    )


def entropy_gaussian(sigma: float) -> float:
    """Differential entropy ln(sigma * sqrt(2*pi*e)) of a gaussian."""
    if not sigma > 0:
        raise EvaluationError(f"sigma must be positive, got {sigma}")
    return float(np.log(sigma) + 0.5 * np.log(2.0 * np.pi * np.e))


#: Entropy of the unit gaussian — the best NLL any adversary can reach
#: when the score carries no information about a N(0, 1) nuisance.
GAUSSIAN_UNIT_ENTROPY = 0.5 * float(np.log(2.0 * np.pi * np.e))


@dataclass(frozen=True)
class HYXEstimate:
    """Monte-Carlo estimate of the conditional label entropy H(Y|X)."""

    value: float
    std_error: float
    n_mc: int
    warning: str | None = None


def _gauss2_logpdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log density of a 2-D gaussian, vectorized over leading axes of x."""
    inv = np.linalg.inv(cov)
    _, logdet = np.linalg.slogdet(cov)
    diff = x - mean
    quad = np.einsum("...i,ij,...j->...", diff, inv, diff)
    return -0.5 * (quad + logdet + 2.0 * np.log(2.0 * np.pi))


def _toy_class_log_densities(spec: ToySpec, x: np.ndarray, n_quad: int):
    """Log p(x|y=0) and log p(x|y=1) with z marginalized by quadrature."""
    log_p0 = _gauss2_logpdf(x, np.asarray(spec.mean0), np.asarray(spec.cov0))
    # Gauss-Hermite nodes for the N(0, sigma_z^2) prior.
    nodes, weights = hermgauss(n_quad)
    z_nodes = np.sqrt(2.0) * spec.z_prior_sigma * nodes
    log_w = np.log(weights / np.sqrt(np.pi))
    means = np.asarray(spec.mean1) + np.outer(spec.z_scale * z_nodes, [0.0, 1.0])
    comp = _gauss2_logpdf(x[:, None, :], means[None, :, :], np.asarray(spec.cov1))
    comp = comp + log_w
    m = comp.max(axis=1)
    log_p1 = m + np.log(np.sum(np.exp(comp - m[:, None]), axis=1))
    return log_p0, log_p1


def estimate_h_y_given_x(
    spec: ToySpec,
    n_mc: int,
    seed: int = 0,
    n_quad: int = 64,
    target_se: float | None = None,
) -> HYXEstimate:
    """H(Y|X) for the toy problem from its exact class densities.

    Monte Carlo over x drawn from the equal-prior class mixture; z is
    marginalized out of the class-1 density by Gauss-Hermite quadrature
    over its gaussian prior.  This is the Bayes-optimal value of the
    classification loss, hence the floor any classifier's BCE can reach.
    """
    if n_mc < 2:
        raise EvaluationError("n_mc must be >= 2")
    from .datasets import _toy_draw

    rng = np.random.default_rng(seed)
    z = rng.normal(0.0, spec.z_prior_sigma, size=n_mc)
    x, _ = _toy_draw(spec, n_mc, z, rng)
    log_p0, log_p1 = _toy_class_log_densities(spec, x, n_quad)
    # q = p1 / (p0 + p1) computed via the log densities.
    delta = log_p1 - log_p0
    q = np.empty_like(delta)
    pos = delta >= 0
    q[pos] = 1.0 / (1.0 + np.exp(-delta[pos]))
    q[~pos] = np.exp(delta[~pos]) / (1.0 + np.exp(delta[~pos]))
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(q * np.log(q) + (1.0 - q) * np.log(1.0 - q))
    h = np.where(np.isfinite(h), h, 0.0)  # q in {0,1} contributes zero entropy
    value = float(h.mean())
    std_error = float(h.std(ddof=1) / np.sqrt(n_mc))
    warning = None
    if target_se is not None and std_error > target_se:
        warning = (
            f"standard error {std_error:.2e} exceeds requested {target_se:.2e}; "
            f"increase n_mc"
        )
    return HYXEstimate(value=value, std_error=std_error, n_mc=n_mc, warning=warning)


def ams(s: float, b: float) -> float:
    """Approximate median significance sqrt(2((s+b)ln(1+s/b)-s))."""
    if not b > 0:
        raise EvaluationError(f"background count must be positive, got {b}")
    if s < 0:
        raise EvaluationError(f"signal count must be non-negative, got {s}")
    if s == 0:
        return 0.0
    inner = 2.0 * ((s + b) * np.log1p(s / b) - s)
    return float(np.sqrt(max(inner, 0.0)))


@dataclass(frozen=True)
class AmsScanResult:
    """AMS as a function of the decision threshold on the score."""

    thresholds: np.ndarray
    s_values: np.ndarray
    b_values: np.ndarray
    ams_values: np.ndarray  # NaN where b(t) = 0 (undefined, excluded from best)
    best_threshold: float
    best_ams: float


def ams_scan(f: DenseNet, test_samples: list[Sample], thresholds) -> AmsScanResult:
    """Weighted (s, b) counts and AMS at each threshold.

    s(t) and b(t) sum the weights of y=1 / y=0 samples with score
    strictly above t.  Cells with b(t)=0 are undefined (NaN) and excluded
    from the maximum rather than clamped.
    """
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if thresholds.size == 0:
        raise EvaluationError("threshold grid must be non-empty")
    x, y, _, w = stack_samples(test_samples)
    if len(set(y.tolist())) < 2:
        raise EvaluationError("test set must contain both classes")
    scores = forward_batch(f, x)[:, 0]

    order = np.argsort(scores)
    sorted_scores = scores[order]
    w_sig = np.where(y[order] == 1, w[order], 0.0)
    w_bkg = np.where(y[order] == 0, w[order], 0.0)
    # Suffix sums: total weight with score strictly greater than t.
    suffix_sig = np.concatenate([np.cumsum(w_sig[::-1])[::-1], [0.0]])
    suffix_bkg = np.concatenate([np.cumsum(w_bkg[::-1])[::-1], [0.0]])
    idx = np.searchsorted(sorted_scores, thresholds, side="right")
    s_vals = suffix_sig[idx]
    b_vals = suffix_bkg[idx]

    ams_vals = np.full(thresholds.shape, np.nan)
    defined = b_vals > 0
    for i in np.nonzero(defined)[0]:
        ams_vals[i] = ams(float(s_vals[i]), float(b_vals[i]))
    if not np.any(defined):
        raise EvaluationError("b(t)=0 everywhere on the grid; AMS undefined")
    best_idx = int(np.nanargmax(ams_vals))
    return AmsScanResult(
        thresholds=thresholds,
        s_values=s_vals,
        b_values=b_vals,
        ams_values=ams_vals,
        best_threshold=float(thresholds[best_idx]),
        best_ams=float(ams_vals[best_idx]),
    )


def write_density_csv(densities, path: str | Path) -> None:
    """Schema: z,bin_lo,bin_hi,mass."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["z", "bin_lo", "bin_hi", "mass"])
        for d in densities:
            for lo, hi, mass in zip(d.bin_edges[:-1], d.bin_edges[1:], d.bin_masses):
                writer.writerow([repr(d.z_value), repr(float(lo)), repr(float(hi)), repr(float(mass))])


def write_ks_csv(report: PivotalityReport, path: str | Path) -> None:
    """Schema: z_a,z_b,ks (upper triangle)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["z_a", "z_b", "ks"])
        for i in range(len(report.z_grid)):
            for j in range(i + 1, len(report.z_grid)):
                writer.writerow(
                    [repr(report.z_grid[i]), repr(report.z_grid[j]), repr(float(report.ks_matrix[i, j]))]
                )


def write_ams_csv(scan: AmsScanResult, path: str | Path) -> None:
    """Schema: threshold,s,b,ams (ams empty where undefined)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "s", "b", "ams"])
        for t, s, b, a in zip(scan.thresholds, scan.s_values, scan.b_values, scan.ams_values):
            writer.writerow(
                [repr(float(t)), repr(float(s)), repr(float(b)), "" if np.isnan(a) else repr(float(a))]
            )


def write_summary_kv(entries: dict, path: str | Path) -> None:
    """Flat ``key = value`` text report."""
    lines = [f"{k} = {v}" for k, v in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n")
