"""Quantitative measurement of edit effects on sampled populations.

Edits are judged by posterior concept probabilities of the final samples:
how much probability mass a tag query carries before versus after editing,
and whether edit strength orders the outcome monotonically.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import spearmanr

from .config import DEFAULT_THRESHOLD, RunConfig
from .guidance import EditDirective
from .mixture import ConceptQuery, MixtureScene, argmax_component, posterior_tag_probability
from .sampler import run_chains

__all__ = [
    "ShiftReport",
    "SweepReport",
    "SweepPoint",
    "concept_shift",
    "strength_sweep",
    "arithmetic_consistency",
]


@dataclass(frozen=True)
class ShiftReport:
    """Before/after statistics of one target concept over two sample sets."""

    target: str
    base_mean_posterior: float
    edited_mean_posterior: float
    base_target_fraction: float
    edited_target_fraction: float
    num_base: int
    num_edited: int
    seeds: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "base_mean_posterior": self.base_mean_posterior,
            "edited_mean_posterior": self.edited_mean_posterior,
            "base_target_fraction": self.base_target_fraction,
            "edited_target_fraction": self.edited_target_fraction,
            "num_base": self.num_base,
            "num_edited": self.num_edited,
            "seeds": list(self.seeds),
        }


@dataclass(frozen=True)
class SweepPoint:
    edit_scale: float
    mean_posterior: float
    standard_error: float


@dataclass(frozen=True)
class SweepReport:
    """Mean target posterior per edit strength, with a rank-order statistic."""

    target: str
    edit_index: int
    points: tuple[SweepPoint, ...]
    spearman: float
    seeds: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "edit_index": self.edit_index,
            "points": [
                {
                    "s_e": p.edit_scale,
                    "mean_posterior": p.mean_posterior,
                    "standard_error": p.standard_error,
                }
                for p in self.points
            ],
            "spearman": self.spearman,
            "seeds": list(self.seeds),
        }


def _target_fraction(samples, scene: MixtureScene, target: ConceptQuery) -> float:
    hits = 0
    for x in samples:
        component = scene.components[argmax_component(scene, x)]
        if target.tags <= component.tags:
            hits += 1
    return hits / len(samples)


def concept_shift(
    samples_base: list[np.ndarray],
    samples_edited: list[np.ndarray],
    scene: MixtureScene,
    target: ConceptQuery,
    seeds: tuple[int, ...] = (),
) -> ShiftReport:
    """Compare how strongly a target concept is present before and after editing."""
    if not samples_base or not samples_edited:
        raise ValueError("sample sets must be non-empty")
    if not target.is_atomic:
        raise ValueError("concept_shift requires an atomic target query")
    base_post = [posterior_tag_probability(scene, x, target) for x in samples_base]
    edit_post = [posterior_tag_probability(scene, x, target) for x in samples_edited]
    return ShiftReport(
        target=target.describe(),
        base_mean_posterior=float(np.mean(base_post)),
        edited_mean_posterior=float(np.mean(edit_post)),
        base_target_fraction=_target_fraction(samples_base, scene, target),
        edited_target_fraction=_target_fraction(samples_edited, scene, target),
        num_base=len(samples_base),
        num_edited=len(samples_edited),
        seeds=tuple(seeds),
    )


def _mean_and_stderr(values: np.ndarray) -> tuple[float, float]:
    mean = float(np.mean(values))
    if values.size < 2:
        warnings.warn("single-seed sweep point: standard error reported as 0", stacklevel=3)
        return mean, 0.0
    return mean, float(np.std(values, ddof=1) / np.sqrt(values.size))


def strength_sweep(
    config: RunConfig,
    edit_index: int,
    edit_scales: list[float],
    seeds: list[int],
    target: ConceptQuery | None = None,
    on_point=None,
) -> SweepReport:
    """Re-run sampling across increasing edit strengths and track the target posterior.

    The target defaults to the swept edit's own concept query, which must be
    atomic. The rank correlation is Spearman's coefficient between strength
    and mean posterior. ``on_point(index, scale, trajectories)`` is invoked
    after each completed point, e.g. to persist raw samples.
    """
    if len(edit_scales) < 3:
        raise ValueError("a sweep needs at least 3 strength values")
    if any(b <= a for a, b in zip(edit_scales, edit_scales[1:])):
        raise ValueError("edit strengths must be strictly increasing")
    if not seeds:
        raise ValueError("at least one seed is required")
    run = config.build()
    if not 0 <= edit_index < len(run.directives):
        raise IndexError(f"edit_index {edit_index} out of range")
    if target is None:
        target = run.directives[edit_index].query
    if not target.is_atomic:
        raise ValueError("sweep target query must be atomic")

    points = []
    means = []
    for index, scale in enumerate(edit_scales):
        directives = list(run.directives)
        directives[edit_index] = replace(directives[edit_index], edit_scale=float(scale))
        trajectories = run_chains(
            run.scene, run.prompt, directives, run.guidance, run.schedule, seeds
        )
        if on_point is not None:
            on_point(index, float(scale), trajectories)
        posteriors = np.array(
            [posterior_tag_probability(run.scene, tr.x0, target) for tr in trajectories]
        )
        mean, stderr = _mean_and_stderr(posteriors)
        points.append(SweepPoint(edit_scale=float(scale), mean_posterior=mean, standard_error=stderr))
        means.append(mean)

    if len(set(means)) == 1:
        # rank correlation is undefined on a constant series; a flat sweep
        # means strength had no effect at all
        rho = 0.0
    else:
        rho = float(spearmanr(edit_scales, means).statistic)
    return SweepReport(
        target=target.describe(),
        edit_index=edit_index,
        points=tuple(points),
        spearman=rho,
        seeds=tuple(seeds),
    )


def arithmetic_consistency(
    scene: MixtureScene,
    base_query: ConceptQuery,
    remove: ConceptQuery,
    add: ConceptQuery,
    config: RunConfig,
    edit_scale: float = 5.0,
    warmup: int = 5,
    thresholds: tuple[float, float] | None = None,
) -> ShiftReport:
    """Concept arithmetic: suppress one concept, enforce another, measure the shift.

    Runs a baseline (no edits) and an edited population from the same seeds,
    then reports the shift toward the composed target: the base tags with
    the removed tags dropped and the added tags included. ``thresholds``
    overrides the (remove, add) thresholds, which default per direction.
    """
    if not (base_query.is_atomic and remove.is_atomic and add.is_atomic):
        raise ValueError("arithmetic_consistency requires atomic queries")
    if thresholds is None:
        thresholds = (DEFAULT_THRESHOLD["negative"], DEFAULT_THRESHOLD["positive"])
    run = config.build()
    directives = [
        EditDirective(
            query=remove,
            direction="negative",
            edit_scale=edit_scale,
            threshold=thresholds[0],
            warmup=warmup,
            weight=0.5,
        ),
        EditDirective(
            query=add,
            direction="positive",
            edit_scale=edit_scale,
            threshold=thresholds[1],
            warmup=warmup,
            weight=0.5,
        ),
    ]
    seeds = [config.sampler.seed + i for i in range(config.sampler.num_samples)]
    base = run_chains(scene, base_query, [], run.guidance, run.schedule, seeds)
    edited = run_chains(scene, base_query, directives, run.guidance, run.schedule, seeds)
    target = ConceptQuery.atomic((base_query.tags - remove.tags) | add.tags)
    return concept_shift(
        [tr.x0 for tr in base],
        [tr.x0 for tr in edited],
        scene,
        target,
        seeds=tuple(seeds),
    )
