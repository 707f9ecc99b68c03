"""Search-space pruning from a prior experiment's raw job outputs.

A parameter value is removed when the prior experiment evaluated it at
least once and every one of those evaluations fell below the cutoff
``p_aggr * max(prior outputs)``.  Values the prior never touched are
kept: absence of evidence is not evidence of badness.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .space import (ExperimentRecord, ParamDomain, SearchSpace,
                    is_subspace, space_size)

AUTO = "auto"


class PruneError(ValueError):
    pass


@dataclass(frozen=True)
class PruneConfig:
    """Aggressiveness mode plus matching/suggestion limits."""

    aggressiveness: Union[float, str] = AUTO  # fixed value in [0, 1] or "auto"
    cap: float = 0.95
    corr_threshold: float = 0.5

    def __post_init__(self):
        if self.aggressiveness != AUTO:
            a = float(self.aggressiveness)
            if not 0.0 <= a <= 1.0:
                raise PruneError(f"aggressiveness {a} outside [0, 1]")
        if not 0.0 <= self.cap <= 1.0:
            raise PruneError(f"cap {self.cap} outside [0, 1]")


@dataclass(frozen=True)
class PruneOutcome:
    new_space: SearchSpace
    removed: dict = field(compare=False)  # parameter name -> list of removed values
    reduction: float = 0.0


def _value_stats(prior: ExperimentRecord) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    """Shifted outputs plus per-dimension (count, max) over prior jobs.

    When the prior's maximum output is non-positive the outputs are
    shifted by -min first, so the cutoff keeps its "top (1 - p_aggr)
    band" meaning for minimization-style encodings.
    """
    outputs = np.asarray([j.output for j in prior.jobs], dtype=np.float64)
    if outputs.max() <= 0:
        outputs = outputs - outputs.min()
    points = np.asarray([j.point for j in prior.jobs], dtype=np.int64)
    counts, maxima = [], []
    for axis, domain in enumerate(prior.space.domains):
        card = domain.cardinality
        count = np.zeros(card, dtype=np.int64)
        vmax = np.full(card, -np.inf)
        np.add.at(count, points[:, axis], 1)
        np.maximum.at(vmax, points[:, axis], outputs)
        counts.append(count)
        maxima.append(vmax)
    return outputs, counts, maxima


def prune(prior: ExperimentRecord, current_space: SearchSpace, p_aggr: float,
          min_evidence: int = 1) -> PruneOutcome:
    """Remove non-promising parameter values from `current_space`.

    `current_space` must be a per-dimension subspace of the prior's space
    (typically the prior's space itself, or the result of earlier
    prunes).  Every domain keeps at least one value: a domain that would
    empty retains the value with the best prior output.
    """
    if not is_subspace(current_space, prior.space):
        raise PruneError(f"prior {prior.id!r} and current space differ in structure")
    if len(prior.jobs) == 0:
        raise PruneError(f"prior {prior.id!r} has no done jobs")
    if not 0.0 <= p_aggr <= 1.0:
        raise PruneError(f"p_aggr {p_aggr} outside [0, 1]")

    outputs, counts, maxima = _value_stats(prior)
    cut_val = p_aggr * float(outputs.max())

    new_domains = []
    removed: dict[str, list] = {}
    for axis, (cur_dom, prior_dom) in enumerate(zip(current_space.domains, prior.space.domains)):
        index_of = {v: i for i, v in enumerate(prior_dom.values)}
        kept, dropped = [], []
        for value in cur_dom.values:
            pi = index_of[value]
            if counts[axis][pi] >= min_evidence and maxima[axis][pi] < cut_val:
                dropped.append(value)
            else:
                kept.append(value)
        if not kept:
            # retain the value whose best prior output is largest
            best = max(cur_dom.values, key=lambda v: (maxima[axis][index_of[v]], -index_of[v]))
            kept = [v for v in cur_dom.values if v == best]
            dropped = [v for v in dropped if v != best]
        new_domains.append(ParamDomain(name=cur_dom.name, values=tuple(kept), kind=cur_dom.kind))
        if dropped:
            removed[cur_dom.name] = dropped

    new_space = SearchSpace(tuple(new_domains), feasibility=current_space.feasibility)
    return PruneOutcome(new_space=new_space, removed=removed,
                        reduction=reduction_fraction(current_space, new_space))


def reduction_fraction(before: SearchSpace, after: SearchSpace) -> float:
    """1 - size(after) / size(before)."""
    if not is_subspace(after, before):
        raise PruneError("'after' is not a per-dimension subset of 'before'")
    return 1.0 - space_size(after) / space_size(before)
