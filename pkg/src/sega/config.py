"""Declarative run configuration: scene, prompt, edits, guidance, sampler, outputs.

A run is one JSON document. Parsing applies defaults, validates every
parameter range, and normalizes weights, so that the emitted canonical form
round-trips: ``parse(emit_normalized(cfg)) == cfg``.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .guidance import EditDirective, GuidanceConfig
from .mixture import Component, ConceptQuery, MixtureScene, composite_query
from .sampler import SCHEDULE_KINDS, Schedule, make_schedule

__all__ = [
    "ConfigError",
    "ConfigWarning",
    "RunConfig",
    "BuiltRun",
    "parse",
    "emit_normalized",
    "load_document",
    "apply_overrides",
    "validate_document",
]

SCHEMA_VERSION = 1

MAX_SEED = 2**63 - 1

DEFAULT_GUIDANCE = {"s_g": 7.5, "s_m": 0.0, "beta_m": 0.4, "mu_mode": "paper", "s_max": 100.0}
DEFAULT_SAMPLER = {"steps": 50, "schedule": "cosine", "seed": 0, "num_samples": 64}
DEFAULT_OUTPUTS = {"dir": "sega_out", "csv": True, "metrics": True, "svg": False}
DEFAULT_EDIT_SCALE = 5.0
DEFAULT_WARMUP = 5
# Per-direction threshold defaults. The sign is chosen so the active-set
# condition also bounds the reciprocal scale (|s_e / diff| <= s_e / |lambda|),
# which keeps default runs finite under the floor-only mask mode.
DEFAULT_THRESHOLD = {"positive": 0.1, "negative": -0.1}


class ConfigError(ValueError):
    """Configuration rejection with the path of the offending key."""

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path or '<document>'}: {message}")


class ConfigWarning(UserWarning):
    """Suspicious-but-legal configuration values."""


@dataclass(frozen=True)
class ComponentSpec:
    mean: tuple[float, ...]
    variances: tuple[float, ...]
    weight: float
    tags: tuple[str, ...]


@dataclass(frozen=True)
class SceneSpec:
    dimension: int
    components: tuple[ComponentSpec, ...]


@dataclass(frozen=True)
class CompositePartSpec:
    tags: tuple[str, ...]
    weight: float


@dataclass(frozen=True)
class EditSpec:
    tags: tuple[str, ...] | None
    composite: tuple[CompositePartSpec, ...] | None
    direction: str
    edit_scale: float
    threshold: float
    warmup: int
    weight: float


@dataclass(frozen=True)
class GuidanceSpec:
    guidance_scale: float
    momentum_scale: float
    momentum_beta: float
    mu_mode: str
    scale_cap: float


@dataclass(frozen=True)
class SamplerSpec:
    steps: int
    schedule: str
    seed: int
    num_samples: int


@dataclass(frozen=True)
class OutputSpec:
    dir: str
    csv: bool
    metrics: bool
    svg: bool


@dataclass(frozen=True)
class RunConfig:
    """Fully validated and normalized run description."""

    schema_version: int
    scene: SceneSpec
    prompt: tuple[str, ...]
    edits: tuple[EditSpec, ...]
    guidance: GuidanceSpec
    sampler: SamplerSpec
    outputs: OutputSpec

    def build(self) -> "BuiltRun":
        """Materialize the runtime objects this configuration describes."""
        components = tuple(
            Component(
                mean=np.array(c.mean),
                variances=np.array(c.variances),
                weight=c.weight,
                tags=frozenset(c.tags),
            )
            for c in self.scene.components
        )
        scene = MixtureScene(components=components, dimension=self.scene.dimension)
        prompt = ConceptQuery.atomic(self.prompt)
        directives = []
        for e in self.edits:
            if e.tags is not None:
                query = ConceptQuery.atomic(e.tags)
            else:
                query = composite_query(
                    [ConceptQuery.atomic(p.tags) for p in e.composite],
                    [p.weight for p in e.composite],
                )
            directives.append(
                EditDirective(
                    query=query,
                    direction=e.direction,
                    edit_scale=e.edit_scale,
                    threshold=e.threshold,
                    warmup=e.warmup,
                    weight=e.weight,
                )
            )
        guidance = GuidanceConfig(
            guidance_scale=self.guidance.guidance_scale,
            momentum_scale=self.guidance.momentum_scale,
            momentum_beta=self.guidance.momentum_beta,
            mu_mode=self.guidance.mu_mode,
            scale_cap=self.guidance.scale_cap,
        )
        schedule = make_schedule(self.sampler.steps, self.sampler.schedule)
        return BuiltRun(
            scene=scene,
            prompt=prompt,
            directives=directives,
            guidance=guidance,
            schedule=schedule,
        )


@dataclass
class BuiltRun:
    """Runtime objects assembled from a RunConfig."""

    scene: MixtureScene
    prompt: ConceptQuery
    directives: list[EditDirective]
    guidance: GuidanceConfig
    schedule: Schedule


# --- validation helpers ------------------------------------------------------


def _expect_object(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(path, f"expected an object, got {type(value).__name__}")
    return value


def _expect_array(value, path: str) -> list:
    if not isinstance(value, list):
        raise ConfigError(path, f"expected an array, got {type(value).__name__}")
    return value


def _expect_string(value, path: str) -> str:
    if not isinstance(value, str):
        raise ConfigError(path, f"expected a string, got {type(value).__name__}")
    return value


def _expect_bool(value, path: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(path, f"expected a boolean, got {type(value).__name__}")
    return value


def _expect_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {type(value).__name__}")
    return value


def _expect_number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {type(value).__name__}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(path, "expected a finite number")
    return value


def _reject_unknown(obj: dict, allowed: set[str], path: str, strict: bool) -> None:
    for key in obj:
        if key not in allowed:
            where = f"{path}.{key}" if path else key
            if strict:
                raise ConfigError(where, "unknown key")
            warnings.warn(f"ignoring unknown key {where}", ConfigWarning, stacklevel=4)


def _expect_tags(value, path: str) -> tuple[str, ...]:
    items = _expect_array(value, path)
    tags = []
    for i, item in enumerate(items):
        tag = _expect_string(item, f"{path}[{i}]")
        if not tag:
            raise ConfigError(f"{path}[{i}]", "tags must be non-empty strings")
        tags.append(tag)
    return tuple(sorted(set(tags)))


def _normalized(values: list[float]) -> list[float]:
    # idempotent: values already summing to ~1 pass through untouched,
    # so emit -> parse round-trips are exact
    total = sum(values)
    if not total > 0:
        raise ValueError("weights must have a positive sum")
    if abs(total - 1.0) <= 1e-9:
        return list(values)
    return [v / total for v in values]


def _match_components(tags: tuple[str, ...], scene: SceneSpec) -> bool:
    need = set(tags)
    return any(need <= set(c.tags) for c in scene.components)


# --- section validators ------------------------------------------------------


def _validate_scene(raw, strict: bool) -> SceneSpec:
    obj = _expect_object(raw, "scene")
    _reject_unknown(obj, {"dimension", "components"}, "scene", strict)
    if "dimension" not in obj:
        raise ConfigError("scene.dimension", "required key missing")
    dim = _expect_int(obj["dimension"], "scene.dimension")
    if not 1 <= dim <= 4096:
        raise ConfigError("scene.dimension", f"dimension must lie in [1, 4096], got {dim}")
    if "components" not in obj:
        raise ConfigError("scene.components", "required key missing")
    raw_components = _expect_array(obj["components"], "scene.components")
    if not raw_components:
        raise ConfigError("scene.components", "scene needs at least one component")
    weights = []
    parsed = []
    for i, raw_comp in enumerate(raw_components):
        path = f"scene.components[{i}]"
        comp = _expect_object(raw_comp, path)
        _reject_unknown(comp, {"mean", "variances", "weight", "tags"}, path, strict)
        for key in ("mean", "variances", "tags"):
            if key not in comp:
                raise ConfigError(f"{path}.{key}", "required key missing")
        mean = tuple(
            _expect_number(v, f"{path}.mean[{j}]")
            for j, v in enumerate(_expect_array(comp["mean"], f"{path}.mean"))
        )
        variances = tuple(
            _expect_number(v, f"{path}.variances[{j}]")
            for j, v in enumerate(_expect_array(comp["variances"], f"{path}.variances"))
        )
        if len(mean) != dim:
            raise ConfigError(f"{path}.mean", f"expected {dim} elements, got {len(mean)}")
        if len(variances) != dim:
            raise ConfigError(
                f"{path}.variances", f"expected {dim} elements, got {len(variances)}"
            )
        for j, v in enumerate(variances):
            if not v > 0:
                raise ConfigError(f"{path}.variances[{j}]", f"variances must be > 0, got {v}")
        weight = _expect_number(comp.get("weight", 1.0), f"{path}.weight")
        if not weight > 0:
            raise ConfigError(f"{path}.weight", f"weight must be > 0, got {weight}")
        tags = _expect_tags(comp["tags"], f"{path}.tags")
        if not tags:
            raise ConfigError(f"{path}.tags", "component needs at least one tag")
        weights.append(weight)
        parsed.append((mean, variances, tags))
    normalized = _normalized(weights)
    components = tuple(
        ComponentSpec(mean=m, variances=v, weight=w, tags=t)
        for (m, v, t), w in zip(parsed, normalized)
    )
    return SceneSpec(dimension=dim, components=components)


def _validate_prompt(raw, scene: SceneSpec, strict: bool) -> tuple[str, ...]:
    obj = _expect_object(raw, "prompt")
    _reject_unknown(obj, {"tags"}, "prompt", strict)
    if "tags" not in obj:
        raise ConfigError("prompt.tags", "required key missing")
    tags = _expect_tags(obj["tags"], "prompt.tags")
    if not _match_components(tags, scene):
        raise ConfigError("prompt.tags", f"no scene component matches tags {list(tags)}")
    return tags


def _validate_edit(raw, index: int, scene: SceneSpec, strict: bool) -> EditSpec:
    path = f"edits[{index}]"
    obj = _expect_object(raw, path)
    allowed = {"tags", "composite", "direction", "s_e", "lambda", "delta", "g"}
    _reject_unknown(obj, allowed, path, strict)

    if ("tags" in obj) == ("composite" in obj):
        raise ConfigError(path, "exactly one of 'tags' or 'composite' is required")

    direction = _expect_string(obj.get("direction", "positive"), f"{path}.direction")
    if direction not in ("positive", "negative"):
        raise ConfigError(
            f"{path}.direction", f"direction must be 'positive' or 'negative', got {direction!r}"
        )

    tags = None
    composite = None
    if "tags" in obj:
        tags = _expect_tags(obj["tags"], f"{path}.tags")
        if not _match_components(tags, scene):
            raise ConfigError(f"{path}.tags", f"no scene component matches tags {list(tags)}")
    else:
        raw_parts = _expect_array(obj["composite"], f"{path}.composite")
        if not raw_parts:
            raise ConfigError(f"{path}.composite", "composite needs at least one part")
        part_weights = []
        part_tags = []
        for j, raw_part in enumerate(raw_parts):
            part_path = f"{path}.composite[{j}]"
            part = _expect_object(raw_part, part_path)
            _reject_unknown(part, {"tags", "weight"}, part_path, strict)
            if "tags" not in part:
                raise ConfigError(f"{part_path}.tags", "required key missing")
            ptags = _expect_tags(part["tags"], f"{part_path}.tags")
            if not _match_components(ptags, scene):
                raise ConfigError(
                    f"{part_path}.tags", f"no scene component matches tags {list(ptags)}"
                )
            pweight = _expect_number(part.get("weight", 1.0), f"{part_path}.weight")
            if not pweight > 0:
                raise ConfigError(f"{part_path}.weight", f"weight must be > 0, got {pweight}")
            part_tags.append(ptags)
            part_weights.append(pweight)
        normalized = _normalized(part_weights)
        composite = tuple(
            CompositePartSpec(tags=t, weight=w) for t, w in zip(part_tags, normalized)
        )

    edit_scale = _expect_number(obj.get("s_e", DEFAULT_EDIT_SCALE), f"{path}.s_e")
    if not edit_scale >= 0:
        raise ConfigError(f"{path}.s_e", f"s_e must lie in [0, inf), got {edit_scale}")
    if edit_scale > 5000:
        warnings.warn(
            f"{path}.s_e = {edit_scale} exceeds the calibrated range [0, 5000]",
            ConfigWarning,
            stacklevel=4,
        )

    threshold = _expect_number(obj.get("lambda", DEFAULT_THRESHOLD[direction]), f"{path}.lambda")
    if not -1.0 <= threshold <= 1.0:
        raise ConfigError(f"{path}.lambda", f"lambda must lie in [-1, 1], got {threshold}")

    warmup = _expect_int(obj.get("delta", DEFAULT_WARMUP), f"{path}.delta")
    if warmup < 0:
        raise ConfigError(f"{path}.delta", f"delta must be >= 0, got {warmup}")
    if warmup > 20:
        warnings.warn(
            f"{path}.delta = {warmup} exceeds the calibrated range [0, 20]",
            ConfigWarning,
            stacklevel=4,
        )

    weight = _expect_number(obj.get("g", 1.0), f"{path}.g")
    if not weight >= 0:
        raise ConfigError(f"{path}.g", f"g must be >= 0, got {weight}")

    return EditSpec(
        tags=tags,
        composite=composite,
        direction=direction,
        edit_scale=edit_scale,
        threshold=threshold,
        warmup=warmup,
        weight=weight,
    )


def _validate_guidance(raw, strict: bool) -> GuidanceSpec:
    obj = _expect_object(raw, "guidance")
    _reject_unknown(obj, {"s_g", "s_m", "beta_m", "mu_mode", "s_max"}, "guidance", strict)
    s_g = _expect_number(obj.get("s_g", DEFAULT_GUIDANCE["s_g"]), "guidance.s_g")
    if not s_g >= 0:
        raise ConfigError("guidance.s_g", f"s_g must lie in [0, inf), got {s_g}")
    s_m = _expect_number(obj.get("s_m", DEFAULT_GUIDANCE["s_m"]), "guidance.s_m")
    if not 0.0 <= s_m <= 1.0:
        raise ConfigError("guidance.s_m", f"s_m must lie in [0, 1], got {s_m}")
    beta_m = _expect_number(obj.get("beta_m", DEFAULT_GUIDANCE["beta_m"]), "guidance.beta_m")
    if not 0.0 <= beta_m < 1.0:
        raise ConfigError("guidance.beta_m", f"beta_m must lie in [0, 1), got {beta_m}")
    mu_mode = _expect_string(obj.get("mu_mode", DEFAULT_GUIDANCE["mu_mode"]), "guidance.mu_mode")
    if mu_mode not in ("paper", "clamped"):
        raise ConfigError("guidance.mu_mode", f"mu_mode must be 'paper' or 'clamped', got {mu_mode!r}")
    s_max = _expect_number(obj.get("s_max", DEFAULT_GUIDANCE["s_max"]), "guidance.s_max")
    if not s_max > 0:
        raise ConfigError("guidance.s_max", f"s_max must be > 0, got {s_max}")
    return GuidanceSpec(
        guidance_scale=s_g, momentum_scale=s_m, momentum_beta=beta_m, mu_mode=mu_mode, scale_cap=s_max
    )


def _validate_sampler(raw, strict: bool) -> SamplerSpec:
    obj = _expect_object(raw, "sampler")
    _reject_unknown(obj, {"steps", "schedule", "seed", "num_samples"}, "sampler", strict)
    steps = _expect_int(obj.get("steps", DEFAULT_SAMPLER["steps"]), "sampler.steps")
    if not 1 <= steps <= 10000:
        raise ConfigError("sampler.steps", f"steps must lie in [1, 10000], got {steps}")
    schedule = _expect_string(obj.get("schedule", DEFAULT_SAMPLER["schedule"]), "sampler.schedule")
    if schedule not in SCHEDULE_KINDS:
        raise ConfigError(
            "sampler.schedule", f"schedule must be one of {list(SCHEDULE_KINDS)}, got {schedule!r}"
        )
    seed = _expect_int(obj.get("seed", DEFAULT_SAMPLER["seed"]), "sampler.seed")
    if not 0 <= seed <= MAX_SEED:
        raise ConfigError("sampler.seed", f"seed must lie in [0, 2^63 - 1], got {seed}")
    num_samples = _expect_int(
        obj.get("num_samples", DEFAULT_SAMPLER["num_samples"]), "sampler.num_samples"
    )
    if not 1 <= num_samples <= 1_000_000:
        raise ConfigError(
            "sampler.num_samples", f"num_samples must lie in [1, 1000000], got {num_samples}"
        )
    return SamplerSpec(steps=steps, schedule=schedule, seed=seed, num_samples=num_samples)


def _validate_outputs(raw, strict: bool) -> OutputSpec:
    obj = _expect_object(raw, "outputs")
    _reject_unknown(obj, {"dir", "csv", "metrics", "svg"}, "outputs", strict)
    out_dir = _expect_string(obj.get("dir", DEFAULT_OUTPUTS["dir"]), "outputs.dir")
    if not out_dir:
        raise ConfigError("outputs.dir", "dir must be a non-empty path")
    csv = _expect_bool(obj.get("csv", DEFAULT_OUTPUTS["csv"]), "outputs.csv")
    metrics = _expect_bool(obj.get("metrics", DEFAULT_OUTPUTS["metrics"]), "outputs.metrics")
    svg = _expect_bool(obj.get("svg", DEFAULT_OUTPUTS["svg"]), "outputs.svg")
    return OutputSpec(dir=out_dir, csv=csv, metrics=metrics, svg=svg)


# --- top-level API -----------------------------------------------------------


def load_document(text: str) -> dict:
    """Parse raw JSON text into a document, mapping syntax errors to ConfigError."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc}") from None
    return _expect_object(doc, "")


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply dotted-path key=value overrides to a raw document, in order.

    Values are parsed as JSON literals, falling back to plain strings.
    Overridden values pass through the same validation as file values.
    """
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must have the form path=value")
        raw_path, raw_value = item.split("=", 1)
        try:
            value = json.loads(raw_value)
        except json.JSONDecodeError:
            value = raw_value
        tokens = _parse_path(raw_path)
        _set_path(doc, tokens, value, raw_path)
    return doc


def _parse_path(path: str) -> list:
    tokens: list = []
    for piece in path.split("."):
        name = piece
        while "[" in name:
            head, rest = name.split("[", 1)
            if head:
                tokens.append(head)
            if "]" not in rest:
                raise ConfigError(path, "unterminated index in override path")
            idx, name = rest.split("]", 1)
            try:
                tokens.append(int(idx))
            except ValueError:
                raise ConfigError(path, f"invalid index {idx!r} in override path") from None
        if name:
            tokens.append(name)
    if not tokens:
        raise ConfigError(path, "empty override path")
    return tokens


def _set_path(doc, tokens: list, value, path: str) -> None:
    target = doc
    for i, token in enumerate(tokens[:-1]):
        if isinstance(token, int):
            if not isinstance(target, list) or not 0 <= token < len(target):
                raise ConfigError(path, f"index {token} out of range in override path")
            target = target[token]
        else:
            if not isinstance(target, dict):
                raise ConfigError(path, f"cannot index {type(target).__name__} with {token!r}")
            target = target.setdefault(token, {})
    last = tokens[-1]
    if isinstance(last, int):
        if not isinstance(target, list) or not 0 <= last < len(target):
            raise ConfigError(path, f"index {last} out of range in override path")
        target[last] = value
    else:
        if not isinstance(target, dict):
            raise ConfigError(path, f"cannot index {type(target).__name__} with {last!r}")
        target[last] = value


def validate_document(doc: dict, strict: bool = True) -> RunConfig:
    """Validate a raw document, apply defaults, and normalize weights."""
    top_allowed = {"schema_version", "scene", "prompt", "edits", "guidance", "sampler", "outputs"}
    _reject_unknown(doc, top_allowed, "", strict)

    version = _expect_int(doc.get("schema_version", SCHEMA_VERSION), "schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported schema_version {version}, expected {SCHEMA_VERSION}")

    if "scene" not in doc:
        raise ConfigError("scene", "required key missing")
    scene = _validate_scene(doc["scene"], strict)
    if "prompt" not in doc:
        raise ConfigError("prompt", "required key missing")
    prompt = _validate_prompt(doc["prompt"], scene, strict)

    raw_edits = _expect_array(doc.get("edits", []), "edits")
    edits = [_validate_edit(raw, i, scene, strict) for i, raw in enumerate(raw_edits)]
    if edits:
        normalized = _normalized([e.weight for e in edits])
        edits = [
            EditSpec(e.tags, e.composite, e.direction, e.edit_scale, e.threshold, e.warmup, w)
            for e, w in zip(edits, normalized)
        ]

    guidance = _validate_guidance(doc.get("guidance", {}), strict)
    sampler = _validate_sampler(doc.get("sampler", {}), strict)
    outputs = _validate_outputs(doc.get("outputs", {}), strict)
    return RunConfig(
        schema_version=version,
        scene=scene,
        prompt=prompt,
        edits=tuple(edits),
        guidance=guidance,
        sampler=sampler,
        outputs=outputs,
    )


def parse(text: str, strict: bool = True) -> RunConfig:
    """Parse and validate a JSON run configuration."""
    return validate_document(load_document(text), strict=strict)


def emit_normalized(config: RunConfig) -> str:
    """Canonical serialization: every default explicit, keys sorted, stable floats."""
    doc = {
        "schema_version": config.schema_version,
        "scene": {
            "dimension": config.scene.dimension,
            "components": [
                {
                    "mean": list(c.mean),
                    "variances": list(c.variances),
                    "weight": c.weight,
                    "tags": list(c.tags),
                }
                for c in config.scene.components
            ],
        },
        "prompt": {"tags": list(config.prompt)},
        "edits": [],
        "guidance": {
            "s_g": config.guidance.guidance_scale,
            "s_m": config.guidance.momentum_scale,
            "beta_m": config.guidance.momentum_beta,
            "mu_mode": config.guidance.mu_mode,
            "s_max": config.guidance.scale_cap,
        },
        "sampler": {
            "steps": config.sampler.steps,
            "schedule": config.sampler.schedule,
            "seed": config.sampler.seed,
            "num_samples": config.sampler.num_samples,
        },
        "outputs": {
            "dir": config.outputs.dir,
            "csv": config.outputs.csv,
            "metrics": config.outputs.metrics,
            "svg": config.outputs.svg,
        },
    }
    for e in config.edits:
        entry: dict = {}
        if e.tags is not None:
            entry["tags"] = list(e.tags)
        else:
            entry["composite"] = [{"tags": list(p.tags), "weight": p.weight} for p in e.composite]
        entry.update(
            {
                "direction": e.direction,
                "s_e": e.edit_scale,
                "lambda": e.threshold,
                "delta": e.warmup,
                "g": e.weight,
            }
        )
        doc["edits"].append(entry)
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"
