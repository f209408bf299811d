"""Deterministic reverse-diffusion sampling with semantic guidance.

The reverse update is plain deterministic DDIM so that a trajectory is a pure
function of (scene, prompt, edits, config, schedule, seed). Initial latents
come from a counter-based Philox generator keyed with the seed, which makes
them reproducible bit-for-bit and independent across seeds.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .guidance import EditDirective, GuidanceConfig, GuidanceState, sega_step
from .mixture import ConceptQuery, MixtureScene, eps_predict

__all__ = [
    "Schedule",
    "LatentState",
    "StepRecord",
    "SampleTrajectory",
    "NonFiniteLatentError",
    "make_schedule",
    "sample_initial",
    "denoise_update",
    "sample_loop",
    "run_chains",
]

SCHEDULE_KINDS = ("linear_vp", "cosine")

# Continuous VP rate for the linear_vp schedule (standard SDE values).
_BETA_MIN = 0.1
_BETA_MAX = 20.0

# Offsets keeping the cosine signal level inside (0, 1] at both ends.
_COSINE_S = 0.008
_COSINE_ALPHA_END = 1e-3


class NonFiniteLatentError(RuntimeError):
    """Raised when a latent turns NaN/Inf; carries the offending step."""

    def __init__(self, t: int):
        super().__init__(f"non-finite latent encountered at step t={t}")
        self.t = t


@dataclass(frozen=True)
class Schedule:
    """Variance-preserving noise levels, indexed by step t=0 (clean) .. T (noise)."""

    steps: int
    alphas: np.ndarray
    omegas: np.ndarray

    def __post_init__(self):
        if self.alphas.shape != (self.steps + 1,) or self.omegas.shape != (self.steps + 1,):
            raise ValueError("alphas and omegas must have length steps + 1")


@dataclass(frozen=True)
class LatentState:
    """Latent vector together with its noise-level index (None if not attached yet)."""

    z: np.ndarray
    t: int | None


@dataclass(frozen=True)
class StepRecord:
    """Per-step diagnostics recorded by the sampling loop."""

    t: int
    z: np.ndarray
    guidance_norm: float
    momentum_norm: float
    mask_fractions: tuple[float, ...]


@dataclass(frozen=True)
class SampleTrajectory:
    """All per-step records of one deterministic run, plus the final sample."""

    seed: int
    records: tuple[StepRecord, ...]
    x0: np.ndarray


def make_schedule(steps: int, kind: str = "cosine") -> Schedule:
    """Build a variance-preserving schedule with alpha[0] = 1 exactly.

    ``linear_vp`` integrates a linearly increasing variance rate;
    ``cosine`` follows the squared-cosine cumulative signal level, with the
    endpoint pulled off zero so alpha stays positive and strictly monotone.
    """
    if not (isinstance(steps, int) and 1 <= steps <= 10000):
        raise ValueError("steps must be an integer in [1, 10000]")
    if kind not in SCHEDULE_KINDS:
        raise ValueError(f"schedule kind must be one of {SCHEDULE_KINDS}, got {kind!r}")
    u = np.arange(steps + 1, dtype=np.float64) / steps
    if kind == "linear_vp":
        integrated_rate = _BETA_MIN * u + 0.5 * (_BETA_MAX - _BETA_MIN) * u * u
        alphas = np.exp(-0.5 * integrated_rate)
    else:
        theta0 = _COSINE_S / (1.0 + _COSINE_S) * math.pi / 2.0
        theta_end = math.acos(_COSINE_ALPHA_END * math.cos(theta0))
        theta = theta0 + u * (theta_end - theta0)
        alphas = np.cos(theta) / math.cos(theta0)
    alphas[0] = 1.0
    omegas = np.sqrt(1.0 - alphas * alphas)
    return Schedule(steps=steps, alphas=alphas, omegas=omegas)


def sample_initial(seed: int, dim: int, t: int | None = None) -> LatentState:
    """Initial latent: i.i.d. standard normals from Philox keyed with the seed."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = np.random.Generator(np.random.Philox(key=seed))
    return LatentState(z=rng.standard_normal(dim), t=t)


def denoise_update(state: LatentState, eps_bar: np.ndarray, schedule: Schedule) -> LatentState:
    """One deterministic DDIM update from noise level t to t - 1."""
    t = state.t
    if t is None or t < 1:
        raise ValueError("denoise_update requires t >= 1")
    alpha_t = schedule.alphas[t]
    omega_t = schedule.omegas[t]
    x_hat = (state.z - omega_t * eps_bar) / alpha_t
    if t == 1:
        return LatentState(z=x_hat, t=0)
    z_prev = schedule.alphas[t - 1] * x_hat + schedule.omegas[t - 1] * eps_bar
    return LatentState(z=z_prev, t=t - 1)


def sample_loop(
    scene: MixtureScene,
    prompt: ConceptQuery | None,
    directives: list[EditDirective],
    config: GuidanceConfig,
    schedule: Schedule,
    seed: int,
) -> SampleTrajectory:
    """Run the full guided reverse-diffusion loop for one chain.

    Per step: gather the unconditioned, prompt-conditioned, and per-edit
    noise estimates from the backend, combine them with sega_step, and take
    one DDIM update. Aborts with the step index if a latent goes non-finite.
    """
    dim = scene.dimension
    state = sample_initial(seed, dim, t=schedule.steps)
    guidance_state = GuidanceState.initial(dim)
    records = []
    for t in range(schedule.steps, 0, -1):
        alpha_t = schedule.alphas[t]
        omega_t = schedule.omegas[t]
        eps_uncond = eps_predict(scene, None, state.z, alpha_t, omega_t)
        eps_prompt = eps_predict(scene, prompt, state.z, alpha_t, omega_t)
        eps_edits = [
            eps_predict(scene, d.query, state.z, alpha_t, omega_t) for d in directives
        ]
        # a diverged latent can overflow inside the backend before the latent
        # itself turns non-finite; treat that as the same abort
        for estimate in (eps_uncond, eps_prompt, *eps_edits):
            if not np.all(np.isfinite(estimate)):
                raise NonFiniteLatentError(t)
        diag: dict = {}
        prediction, guidance_state = sega_step(
            eps_uncond, eps_prompt, eps_edits, directives, config, guidance_state, diag=diag
        )
        state = denoise_update(state, prediction, schedule)
        if not np.all(np.isfinite(state.z)):
            raise NonFiniteLatentError(t)
        records.append(
            StepRecord(
                t=t,
                z=state.z.copy(),
                guidance_norm=diag.get("guidance_norm", 0.0),
                momentum_norm=diag.get("momentum_norm", 0.0),
                mask_fractions=tuple(diag.get("mask_fractions", [])),
            )
        )
    return SampleTrajectory(seed=seed, records=tuple(records), x0=state.z)


def _thread_limit() -> int:
    raw = os.environ.get("SEGA_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_chains(
    scene: MixtureScene,
    prompt: ConceptQuery | None,
    directives: list[EditDirective],
    config: GuidanceConfig,
    schedule: Schedule,
    seeds: list[int],
) -> list[SampleTrajectory]:
    """Run one independent chain per seed; results come back in seed order.

    Chains share nothing mutable, so they may run concurrently; the
    SEGA_THREADS environment variable caps the worker count (default 1).
    """
    def one(seed: int) -> SampleTrajectory:
        return sample_loop(scene, prompt, directives, config, schedule, seed)

    workers = _thread_limit()
    if workers <= 1 or len(seeds) <= 1:
        return [one(seed) for seed in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, seeds))
