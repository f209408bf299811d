"""Analytic noise-prediction backend over tag-annotated Gaussian mixtures.

Concepts are conjunctions of component tags. Conditioning on a concept query
selects the matching sub-mixture (weights renormalized), and the noise
estimate is exact: ``eps = -omega_t * grad_z log p_t(z | query)`` where
``p_t`` is the mixture diffused by ``z_t = alpha_t * x + omega_t * eps``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Component",
    "MixtureScene",
    "ConceptQuery",
    "select",
    "marginal_at",
    "eps_predict",
    "posterior_tag_probability",
    "composite_query",
    "mixture_moments",
    "royal_court_scene",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


def _as_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite elements")
    return arr


@dataclass(frozen=True)
class Component:
    """One diagonal Gaussian component tagged with the concepts it represents."""

    mean: np.ndarray
    variances: np.ndarray
    weight: float
    tags: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "mean", _as_vector(self.mean, "mean"))
        object.__setattr__(self, "variances", _as_vector(self.variances, "variances"))
        object.__setattr__(self, "tags", frozenset(self.tags))
        if self.mean.shape != self.variances.shape:
            raise ValueError("mean and variances must have the same dimension")
        if not np.all(self.variances > 0):
            raise ValueError("variances must be strictly positive")
        if not self.weight > 0:
            raise ValueError("component weight must be strictly positive")
        if not self.tags:
            raise ValueError("component must carry at least one tag")


@dataclass(eq=False)
class MixtureScene:
    """Immutable-after-load mixture of tagged components; weights sum to one."""

    components: tuple[Component, ...]
    dimension: int
    # query-resolution and diffusion caches; values are pure functions of the
    # immutable scene, so concurrent readers can at worst recompute them
    _resolved: dict = field(default_factory=dict, repr=False)
    _diffused: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.components = tuple(self.components)
        if not self.components:
            raise ValueError("scene must contain at least one component")
        for c in self.components:
            if c.mean.shape[0] != self.dimension:
                raise ValueError(
                    f"component dimension {c.mean.shape[0]} != scene dimension {self.dimension}"
                )
        total = sum(c.weight for c in self.components)
        if abs(total - 1.0) > 1e-9:
            self.components = tuple(
                Component(c.mean, c.variances, c.weight / total, c.tags)
                for c in self.components
            )


@dataclass(frozen=True)
class ConceptQuery:
    """A concept selector: a tag conjunction, or a weighted mix of conjunctions.

    Atomic queries carry ``tags``; composite queries carry ``parts`` as
    (atomic query, weight) pairs with weights summing to one.
    """

    tags: frozenset[str] | None = None
    parts: tuple[tuple["ConceptQuery", float], ...] | None = None

    def __post_init__(self):
        if (self.tags is None) == (self.parts is None):
            raise ValueError("query must be either atomic (tags) or composite (parts)")
        if self.tags is not None:
            object.__setattr__(self, "tags", frozenset(self.tags))
        else:
            for sub, w in self.parts:
                if not sub.is_atomic:
                    raise ValueError("composite query parts must be atomic")
                if not w > 0:
                    raise ValueError("composite part weights must be positive")

    @property
    def is_atomic(self) -> bool:
        return self.tags is not None

    @classmethod
    def atomic(cls, tags) -> "ConceptQuery":
        return cls(tags=frozenset(tags))

    def describe(self) -> str:
        """Stable human-readable label, used in reports and CSV headers."""
        if self.is_atomic:
            return "+".join(sorted(self.tags)) if self.tags else "*"
        inner = ", ".join(f"{w:g}*{q.describe()}" for q, w in self.parts)
        return f"mix({inner})"


def composite_query(queries: list[ConceptQuery], weights: list[float]) -> ConceptQuery:
    """Combine atomic queries into one conditioning on their weighted mixture."""
    if len(queries) != len(weights):
        raise ValueError("queries and weights must have the same length")
    if not queries:
        raise ValueError("composite query needs at least one part")
    for w in weights:
        if not w > 0:
            raise ValueError("composite weights must be positive")
    total = float(sum(weights))
    return ConceptQuery(parts=tuple((q, w / total) for q, w in zip(queries, weights)))


def select(scene: MixtureScene, query: ConceptQuery) -> MixtureScene:
    """Sub-mixture of components carrying every tag of an atomic query."""
    if not query.is_atomic:
        raise ValueError("select requires an atomic query")
    matched = [c for c in scene.components if query.tags <= c.tags]
    if not matched:
        raise LookupError(f"no component matches tags {sorted(query.tags)}")
    return MixtureScene(components=tuple(matched), dimension=scene.dimension)


def marginal_at(component: Component, alpha_t: float, omega_t: float):
    """Diffused marginal of one component: mean and per-element variance."""
    mean = alpha_t * component.mean
    var = alpha_t * alpha_t * component.variances + omega_t * omega_t
    return mean, var


def _resolve(scene: MixtureScene, query: ConceptQuery | None):
    """Stacked (means, variances, log-weights) for the conditioned mixture."""
    cached = scene._resolved.get(query)
    if cached is not None:
        return cached
    if query is None:
        comps = [(c, c.weight) for c in scene.components]
    elif query.is_atomic:
        sub = select(scene, query)
        comps = [(c, c.weight) for c in sub.components]
    else:
        comps = []
        for part, part_weight in query.parts:
            sub = select(scene, part)
            comps.extend((c, part_weight * c.weight) for c in sub.components)
    means = np.stack([c.mean for c, _ in comps])
    variances = np.stack([c.variances for c, _ in comps])
    log_weights = np.log(np.array([w for _, w in comps]))
    resolved = (means, variances, log_weights)
    scene._resolved[query] = resolved
    return resolved


def _logsumexp(values: np.ndarray) -> float:
    top = values.max()
    return top + np.log(np.sum(np.exp(values - top)))


def _diffused(scene: MixtureScene, query: ConceptQuery | None, alpha_t: float, omega_t: float):
    """Diffused component quantities: means, variances, and log normalizers."""
    key = (query, float(alpha_t), float(omega_t))
    cached = scene._diffused.get(key)
    if cached is not None:
        return cached
    means, variances, log_weights = _resolve(scene, query)
    means_t = alpha_t * means
    vars_t = alpha_t * alpha_t * variances + omega_t * omega_t
    log_norm = log_weights - 0.5 * np.sum(_LOG_2PI + np.log(vars_t), axis=1)
    cached = (means_t, vars_t, log_norm)
    scene._diffused[key] = cached
    return cached


def _log_responsibilities(scene, query, z, alpha_t, omega_t):
    """Per-component log posterior weights at a diffused point z."""
    means_t, vars_t, log_norm = _diffused(scene, query, alpha_t, omega_t)
    # diverged inputs may overflow here; callers check the result for finiteness
    with np.errstate(over="ignore", invalid="ignore"):
        diff = z[None, :] - means_t
        logits = log_norm - 0.5 * np.sum(diff * diff / vars_t, axis=1)
        return logits - _logsumexp(logits), means_t, vars_t


def eps_predict(
    scene: MixtureScene,
    query: ConceptQuery | None,
    z: np.ndarray,
    alpha_t: float,
    omega_t: float,
) -> np.ndarray:
    """Exact noise estimate for the (conditioned) diffused mixture at z.

    ``query=None`` gives the unconditional estimate over the full scene.
    """
    z = _as_vector(z, "z")
    log_resp, means_t, vars_t = _log_responsibilities(scene, query, z, alpha_t, omega_t)
    with np.errstate(over="ignore", invalid="ignore"):
        resp = np.exp(log_resp)
        # score of log p_t is the responsibility-weighted sum of component scores
        score = np.sum(resp[:, None] * (-(z[None, :] - means_t) / vars_t), axis=0)
        return -omega_t * score


def posterior_tag_probability(
    scene: MixtureScene, x: np.ndarray, query: ConceptQuery
) -> float:
    """Posterior probability (at the data distribution) that x carries the query's tags."""
    x = _as_vector(x, "x")
    if not query.is_atomic:
        raise ValueError("posterior_tag_probability requires an atomic query")
    log_resp, _, _ = _log_responsibilities(scene, None, x, 1.0, 0.0)
    mask = np.array([query.tags <= c.tags for c in scene.components])
    if not mask.any():
        return 0.0
    return float(np.exp(_logsumexp(log_resp[mask])))


def argmax_component(scene: MixtureScene, x: np.ndarray) -> int:
    """Index of the component with the largest posterior responsibility at x."""
    x = _as_vector(x, "x")
    log_resp, _, _ = _log_responsibilities(scene, None, x, 1.0, 0.0)
    return int(np.argmax(log_resp))


def mixture_moments(scene: MixtureScene, query: ConceptQuery | None = None):
    """Closed-form mean and covariance of the (conditioned) data distribution."""
    means, variances, log_weights = _resolve(scene, query)
    weights = np.exp(log_weights)
    weights = weights / weights.sum()
    mean = weights @ means
    centered = means - mean
    cov = np.einsum("k,ki,kj->ij", weights, centered, centered)
    cov += np.diag(weights @ variances)
    return mean, cov


def royal_court_scene() -> MixtureScene:
    """Reference 2-D scene: four unit-variance concepts on the corners of a square."""
    spots = [
        ((-3.0, 3.0), ("royal", "male")),
        ((3.0, 3.0), ("royal", "female")),
        ((-3.0, -3.0), ("common", "male")),
        ((3.0, -3.0), ("common", "female")),
    ]
    components = tuple(
        Component(
            mean=np.array(mean),
            variances=np.ones(2),
            weight=0.25,
            tags=frozenset(tags),
        )
        for mean, tags in spots
    )
    return MixtureScene(components=components, dimension=2)
