"""Similarity scoring between the running experiment's surrogate and the
knowledge base, via normalized cross-correlation over a common sample.

The common sample is the full lexicographic enumeration when the space
has at most ``FULL_SAMPLE_LIMIT`` points, otherwise a deterministic
uniform draw of that many points shared by every comparison in a run.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import surrogate as sg
from .space import ExperimentRecord, SearchSpace, enumerate_points, same_structure, space_size

FULL_SAMPLE_LIMIT = 20_000
_SAMPLE_SEED = 0x5EED


class MatchError(ValueError):
    pass


class DegenerateSurrogateError(MatchError):
    """Zero variance in a sample vector; callers treat this as no-match."""


@dataclass(frozen=True)
class MatchResult:
    prior_id: str
    n_corr: float
    sample_size: int


def n_corr(f_samples: Sequence[float], p_samples: Sequence[float]) -> float:
    """Normalized cross-correlation of two equally long sample vectors.

    Mean-centered, scaled by the product of population standard
    deviations, averaged over the sample; clamped to [-1, 1] on output.
    """
    f = np.asarray(f_samples, dtype=np.float64)
    p = np.asarray(p_samples, dtype=np.float64)
    if f.shape != p.shape or f.ndim != 1:
        raise MatchError(f"sample length mismatch: {f.shape} vs {p.shape}")
    s = len(f)
    if s < 2:
        raise MatchError("need at least 2 samples")
    fc = f - f.mean()
    pc = p - p.mean()
    sigma_f = np.sqrt((fc ** 2).mean())
    sigma_p = np.sqrt((pc ** 2).mean())
    if sigma_f == 0 or sigma_p == 0:
        raise DegenerateSurrogateError("degenerate surrogate")
    value = float((fc * pc).mean() / (sigma_f * sigma_p))
    return min(1.0, max(-1.0, value))


def comparison_sample(space: SearchSpace, limit: int = FULL_SAMPLE_LIMIT,
                      seed: int = _SAMPLE_SEED) -> np.ndarray:
    """(m, n) matrix of sample points shared by all comparisons."""
    if space_size(space) <= limit and space.feasibility is None:
        cards = space.cardinalities
        grids = np.meshgrid(*(np.arange(c) for c in cards), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)
    if space.feasibility is not None:
        points = np.asarray(list(enumerate_points(space)), dtype=np.int64)
        if len(points) <= limit:
            return points
        rng = np.random.default_rng(seed)
        return points[rng.choice(len(points), size=limit, replace=False)]
    rng = np.random.default_rng(seed)
    cards = space.cardinalities
    return np.stack([rng.integers(0, c, size=limit) for c in cards], axis=1).astype(np.int64)


def ensure_surrogate(record: ExperimentRecord, k: int = sg.DEFAULT_K) -> sg.Surrogate:
    if record.surrogate is not None:
        return record.surrogate
    return sg.fit(record.jobs, record.space, k=k)


def select_previous(kb: Sequence[ExperimentRecord], current: Optional[sg.Surrogate],
                    threshold: float = 0.5,
                    prior_samples: Optional[dict] = None,
                    current_sample: Optional[np.ndarray] = None,
                    space: Optional[SearchSpace] = None) -> Optional[MatchResult]:
    """Best prior above the correlation threshold, or None.

    `current_sample` may carry the current surrogate's precomputed sample
    vector (with `space` naming the search space); `prior_samples` may
    carry precomputed vectors keyed by record id (the orchestrator caches
    them across batches).  Missing entries are computed here.  Ties break
    toward the smaller prior id.
    """
    if space is None:
        space = current.space
    sample = comparison_sample(space)
    if current_sample is None:
        current_sample = current.sample_on(sample)
    try:
        _check_variance(current_sample)
    except DegenerateSurrogateError:
        return None
    best: Optional[MatchResult] = None
    for record in kb:
        if not same_structure(record.space, space):
            raise MatchError(f"knowledge-base record {record.id!r} has a different search-space structure")
        if prior_samples is not None and record.id in prior_samples:
            p_sample = prior_samples[record.id]
        else:
            p_sample = ensure_surrogate(record).sample_on(sample)
            if prior_samples is not None:
                prior_samples[record.id] = p_sample
        try:
            value = n_corr(current_sample, p_sample)
        except DegenerateSurrogateError:
            continue
        result = MatchResult(prior_id=record.id, n_corr=value, sample_size=len(sample))
        if best is None or value > best.n_corr or (value == best.n_corr and record.id < best.prior_id):
            best = result
    if best is not None and best.n_corr > threshold:
        return best
    return None


def _check_variance(sample: np.ndarray) -> None:
    if np.ptp(sample) == 0:
        raise DegenerateSurrogateError("degenerate surrogate")


def pairwise_best_correlations(experiments: Sequence[ExperimentRecord]) -> tuple[list[float], float]:
    """For each experiment, its best n_corr against all the others over the
    common sample; plus the mean of those maxima."""
    if len(experiments) < 2:
        raise MatchError("need at least 2 experiments")
    space = experiments[0].space
    for record in experiments[1:]:
        if not same_structure(record.space, space):
            raise MatchError(f"record {record.id!r} has a different search-space structure")
    sample = comparison_sample(space)
    vectors = [ensure_surrogate(r).sample_on(sample) for r in experiments]
    m = len(experiments)
    best = [-np.inf] * m
    for i in range(m):
        for j in range(i + 1, m):
            value = n_corr(vectors[i], vectors[j])
            best[i] = max(best[i], value)
            best[j] = max(best[j], value)
    return best, float(np.mean(best))
