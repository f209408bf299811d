"""Semantic guidance arithmetic: combining noise estimates along edit directions.

Everything here is elementwise float64 math on 1-D noise-estimate vectors.
The only state is the momentum accumulator, passed in and returned explicitly.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .mixture import ConceptQuery

__all__ = [
    "EditDirective",
    "GuidanceConfig",
    "GuidanceState",
    "cfg_combine",
    "edit_direction",
    "edit_mask_scale",
    "gamma_single",
    "aggregate_edits",
    "momentum_apply",
    "momentum_update",
    "guided_prediction",
    "sega_step",
    "normalize_weights",
]

#: Reciprocal guard for the per-element scale: keeps s_e / diff finite at diff == 0.
RECIPROCAL_GUARD = 1e-12

#: Edit scales above this are legal but almost certainly a configuration mistake.
EDIT_SCALE_WARN_LIMIT = 5000.0

DIRECTIONS = ("positive", "negative")
MU_MODES = ("paper", "clamped")


def _check_estimate(name: str, values: np.ndarray) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite elements")
    return arr


def _check_same_shape(**named: np.ndarray) -> None:
    shapes = {name: arr.shape for name, arr in named.items()}
    if len(set(shapes.values())) > 1:
        raise ValueError(f"shape mismatch between noise estimates: {shapes}")


@dataclass(frozen=True)
class EditDirective:
    """One edit concept with its strength, threshold, warm-up, and mix weight."""

    query: ConceptQuery
    direction: str = "positive"
    edit_scale: float = 5.0
    threshold: float = 0.0
    warmup: int = 5
    weight: float = 1.0

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if not self.edit_scale >= 0:
            raise ValueError("edit_scale must be >= 0")
        if self.edit_scale > EDIT_SCALE_WARN_LIMIT:
            warnings.warn(
                f"edit_scale {self.edit_scale} exceeds the calibrated range "
                f"[0, {EDIT_SCALE_WARN_LIMIT:g}]",
                stacklevel=2,
            )
        if not -1.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [-1, 1]")
        if not (isinstance(self.warmup, int) and self.warmup >= 0):
            raise ValueError("warmup must be a non-negative integer")
        if not self.weight >= 0:
            raise ValueError("weight must be >= 0")


def normalize_weights(directives: list[EditDirective]) -> list[EditDirective]:
    """Rescale directive weights to sum to one (done once, at configuration load)."""
    if not directives:
        return []
    total = sum(d.weight for d in directives)
    if not total > 0:
        raise ValueError("directive weights must not all be zero")
    if abs(total - 1.0) <= 1e-9:
        return list(directives)
    return [
        EditDirective(d.query, d.direction, d.edit_scale, d.threshold, d.warmup, d.weight / total)
        for d in directives
    ]


@dataclass(frozen=True)
class GuidanceConfig:
    """Global guidance parameters shared by every edit."""

    guidance_scale: float = 7.5
    momentum_scale: float = 0.0
    momentum_beta: float = 0.4
    mu_mode: str = "paper"
    scale_cap: float = 100.0

    def __post_init__(self):
        if not self.guidance_scale >= 0:
            raise ValueError("guidance_scale must be >= 0")
        if not 0.0 <= self.momentum_scale <= 1.0:
            raise ValueError("momentum_scale must lie in [0, 1]")
        if not 0.0 <= self.momentum_beta < 1.0:
            raise ValueError("momentum_beta must lie in [0, 1)")
        if self.mu_mode not in MU_MODES:
            raise ValueError(f"mu_mode must be one of {MU_MODES}, got {self.mu_mode!r}")
        if not self.scale_cap > 0:
            raise ValueError("scale_cap must be > 0")


@dataclass(frozen=True)
class GuidanceState:
    """Momentum accumulator and step counter for one sampling chain."""

    momentum: np.ndarray
    t: int = 0

    @classmethod
    def initial(cls, dim: int) -> "GuidanceState":
        return cls(momentum=np.zeros(dim), t=0)


def cfg_combine(
    eps_uncond: np.ndarray, eps_prompt: np.ndarray, guidance_scale: float
) -> np.ndarray:
    """Classifier-free combination: push the unconditioned estimate toward the prompt.

    Evaluated as ``(1 - s) * uncond + s * prompt`` so both endpoints (s = 0
    and s = 1) reproduce their input exactly.
    """
    eps_uncond = _check_estimate("eps_uncond", eps_uncond)
    eps_prompt = _check_estimate("eps_prompt", eps_prompt)
    _check_same_shape(eps_uncond=eps_uncond, eps_prompt=eps_prompt)
    if not guidance_scale >= 0:
        raise ValueError("guidance_scale must be >= 0")
    return (1.0 - guidance_scale) * eps_uncond + guidance_scale * eps_prompt


def edit_direction(
    eps_uncond: np.ndarray, eps_edit: np.ndarray, direction: str
) -> np.ndarray:
    """Raw edit direction between the unconditioned and edit-conditioned estimates."""
    eps_uncond = _check_estimate("eps_uncond", eps_uncond)
    eps_edit = _check_estimate("eps_edit", eps_edit)
    _check_same_shape(eps_uncond=eps_uncond, eps_edit=eps_edit)
    if direction == "positive":
        return eps_uncond - eps_edit
    if direction == "negative":
        return -(eps_uncond - eps_edit)
    raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")


def edit_mask_scale(
    eps_prompt: np.ndarray,
    eps_edit: np.ndarray,
    edit_scale: float,
    threshold: float,
    direction: str,
    mu_mode: str = "paper",
    scale_cap: float = 100.0,
) -> np.ndarray:
    """Elementwise mask-and-scale selecting the dimensions relevant to an edit.

    Elements whose prompt-minus-edit difference passes the threshold get a
    scale of ``max(1, |edit_scale / diff|)`` (or ``min(scale_cap, ...)`` in
    clamped mode); everything else is zeroed out.
    """
    eps_prompt = _check_estimate("eps_prompt", eps_prompt)
    eps_edit = _check_estimate("eps_edit", eps_edit)
    _check_same_shape(eps_prompt=eps_prompt, eps_edit=eps_edit)
    if not edit_scale >= 0:
        raise ValueError("edit_scale must be >= 0")
    if not -1.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [-1, 1]")
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    if mu_mode not in MU_MODES:
        raise ValueError(f"mu_mode must be one of {MU_MODES}, got {mu_mode!r}")

    diff = eps_prompt - eps_edit
    guarded = diff + RECIPROCAL_GUARD * np.where(diff >= 0.0, 1.0, -1.0)
    magnitude = np.abs(edit_scale / guarded)
    if mu_mode == "paper":
        scale = np.maximum(1.0, magnitude)
    else:
        scale = np.minimum(scale_cap, magnitude)
    active = diff > threshold if direction == "positive" else diff < threshold
    return np.where(active, scale, 0.0)


def gamma_single(psi: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Guidance term of one edit: mask-and-scale applied to the edit direction."""
    psi = _check_estimate("psi", psi)
    mu = _check_estimate("mu", mu)
    _check_same_shape(psi=psi, mu=mu)
    return mu * psi


def aggregate_edits(
    gammas: list[np.ndarray],
    directives: list[EditDirective],
    t: int,
    dim: int | None = None,
) -> np.ndarray:
    """Weighted sum of per-edit guidance terms, gating edits still warming up.

    Weights of gated edits are dropped, not redistributed, so an edit's
    contribution never jumps when another edit's warm-up elapses.
    """
    if len(gammas) != len(directives):
        raise ValueError("gammas and directives must have the same length")
    if not gammas:
        if dim is None:
            raise ValueError("dim is required to aggregate an empty edit list")
        return np.zeros(dim)
    total = np.zeros_like(gammas[0])
    for gamma, directive in zip(gammas, directives):
        if t < directive.warmup:
            continue
        total = total + directive.weight * gamma
    return total


def momentum_apply(
    gamma_hat: np.ndarray,
    state: GuidanceState,
    momentum_scale: float,
    all_warmups_done: bool,
) -> np.ndarray:
    """Add the scaled momentum term, but only once every warm-up has elapsed."""
    gamma_hat = _check_estimate("gamma_hat", gamma_hat)
    _check_same_shape(gamma_hat=gamma_hat, momentum=state.momentum)
    if not all_warmups_done:
        return gamma_hat
    return gamma_hat + momentum_scale * state.momentum


def momentum_update(
    state: GuidanceState, gamma_t: np.ndarray, momentum_beta: float
) -> GuidanceState:
    """Exponential-moving-average update of the momentum; runs every step."""
    gamma_t = _check_estimate("gamma_t", gamma_t)
    _check_same_shape(gamma_t=gamma_t, momentum=state.momentum)
    if not 0.0 <= momentum_beta < 1.0:
        raise ValueError("momentum_beta must lie in [0, 1)")
    momentum = momentum_beta * state.momentum + (1.0 - momentum_beta) * gamma_t
    return GuidanceState(momentum=momentum, t=state.t + 1)


def guided_prediction(
    eps_uncond: np.ndarray,
    eps_prompt: np.ndarray,
    gamma_t: np.ndarray,
    guidance_scale: float,
    past_warmup: bool,
) -> np.ndarray:
    """Final combined prediction; falls back to plain CFG during warm-up.

    Uses the same evaluation form as cfg_combine, so a zero guidance term
    reproduces the plain CFG output bit for bit.
    """
    if not past_warmup:
        return cfg_combine(eps_uncond, eps_prompt, guidance_scale)
    eps_uncond = _check_estimate("eps_uncond", eps_uncond)
    eps_prompt = _check_estimate("eps_prompt", eps_prompt)
    gamma_t = _check_estimate("gamma_t", gamma_t)
    _check_same_shape(eps_uncond=eps_uncond, eps_prompt=eps_prompt, gamma_t=gamma_t)
    return (1.0 - guidance_scale) * eps_uncond + guidance_scale * (eps_prompt - gamma_t)


def sega_step(
    eps_uncond: np.ndarray,
    eps_prompt: np.ndarray,
    eps_edits: list[np.ndarray],
    directives: list[EditDirective],
    config: GuidanceConfig,
    state: GuidanceState,
    diag: dict | None = None,
) -> tuple[np.ndarray, GuidanceState]:
    """One full guidance step: per-edit terms, aggregation, momentum, prediction.

    Returns the combined noise prediction and the advanced guidance state.
    The momentum accumulator is fed the ungated weighted sum over all edits,
    so it builds up during warm-up even though gated edits do not steer the
    prediction yet. Pass a dict as ``diag`` to capture per-step diagnostics.
    """
    eps_uncond = _check_estimate("eps_uncond", eps_uncond)
    eps_prompt = _check_estimate("eps_prompt", eps_prompt)
    if len(eps_edits) != len(directives):
        raise ValueError("eps_edits and directives must have the same length")

    t = state.t
    gammas = []
    for directive, eps_edit in zip(directives, eps_edits):
        psi = edit_direction(eps_uncond, eps_edit, directive.direction)
        mu = edit_mask_scale(
            eps_prompt,
            eps_edit,
            directive.edit_scale,
            directive.threshold,
            directive.direction,
            config.mu_mode,
            config.scale_cap,
        )
        gammas.append(gamma_single(psi, mu))
        if diag is not None:
            diag.setdefault("mask_fractions", []).append(float(np.mean(mu != 0.0)))

    dim = eps_uncond.shape[0]
    gated = aggregate_edits(gammas, directives, t, dim=dim)
    full = np.zeros(dim)
    for gamma, directive in zip(gammas, directives):
        full = full + directive.weight * gamma

    all_warmups_done = all(t >= d.warmup for d in directives)
    applied = momentum_apply(gated, state, config.momentum_scale, all_warmups_done)
    built = momentum_apply(full, state, config.momentum_scale, all_warmups_done)
    new_state = momentum_update(state, built, config.momentum_beta)

    past_warmup = any(t >= d.warmup for d in directives)
    prediction = guided_prediction(
        eps_uncond, eps_prompt, applied, config.guidance_scale, past_warmup
    )
    if diag is not None:
        diag["guidance_norm"] = float(np.linalg.norm(applied))
        diag["momentum_norm"] = float(np.linalg.norm(new_state.momentum))
    return prediction, new_state
