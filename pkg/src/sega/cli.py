"""Command-line entry point: run edits, sweeps, and config validation.

Every artifact is written atomically (temp file + rename) and contains no
timestamps, so repeated identical invocations produce byte-identical output.
Iterative editing is expressed as repeated invocations with edited configs.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, RunConfig, apply_overrides, emit_normalized, load_document, validate_document
from .metrics import strength_sweep
from .mixture import ConceptQuery, argmax_component, mixture_moments, posterior_tag_probability
from .sampler import run_chains

__all__ = ["InvocationResult", "cmd_sample", "cmd_sweep", "cmd_validate", "main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


@dataclass
class InvocationResult:
    """Outcome of one CLI invocation."""

    exit_code: int
    artifacts: list[str] = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def _atomic_write_text(path: str, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as handle:
        handle.write(text)
    os.replace(tmp, path)


def _load_config(config_path: str, overrides: list[str]) -> tuple[RunConfig, list[str]]:
    try:
        with open(config_path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigError(config_path, f"cannot read config: {exc}") from None
    doc = load_document(text)
    apply_overrides(doc, overrides)
    collected: list[str] = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        config = validate_document(doc)
    for w in caught:
        collected.append(str(w.message))
    return config, collected


def _tracked_queries(config: RunConfig) -> list[ConceptQuery]:
    queries = [ConceptQuery.atomic(config.prompt)]
    for edit in config.edits:
        if edit.tags is not None:
            queries.append(ConceptQuery.atomic(edit.tags))
        else:
            queries.extend(ConceptQuery.atomic(p.tags) for p in edit.composite)
    seen = set()
    unique = []
    for q in queries:
        if q not in seen:
            seen.add(q)
            unique.append(q)
    return unique


def _samples_csv(seeds, samples, scene, queries) -> str:
    dim = scene.dimension
    header = ["seed", "sample_index"]
    header += [f"x_{i}" for i in range(dim)]
    header += [f"posterior:{q.describe()}" for q in queries]
    lines = [",".join(header)]
    for index, (seed, x) in enumerate(zip(seeds, samples)):
        row = [str(seed), str(index)]
        row += [repr(float(v)) for v in x]
        row += [repr(posterior_tag_probability(scene, x, q)) for q in queries]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _sample_metrics(config: RunConfig, scene, prompt, seeds, samples, queries) -> dict:
    points = np.stack(samples)
    prompt_mean, prompt_cov = mixture_moments(scene, prompt)
    fractions: dict[str, float] = {}
    for x in samples:
        name = "+".join(sorted(scene.components[argmax_component(scene, x)].tags))
        fractions[name] = fractions.get(name, 0.0) + 1.0
    for name in fractions:
        fractions[name] /= len(samples)
    return {
        "command": "sample",
        "num_samples": len(samples),
        "seed_start": config.sampler.seed,
        "steps": config.sampler.steps,
        "schedule": config.sampler.schedule,
        "sample_mean": [float(v) for v in points.mean(axis=0)],
        "sample_variance": [float(v) for v in points.var(axis=0, ddof=1)]
        if len(samples) > 1
        else [0.0] * points.shape[1],
        "prompt_moments": {
            "mean": [float(v) for v in prompt_mean],
            "covariance": [[float(v) for v in row] for row in prompt_cov],
        },
        "mean_posterior": {
            q.describe(): float(
                np.mean([posterior_tag_probability(scene, x, q) for x in samples])
            )
            for q in queries
        },
        "argmax_fraction": dict(sorted(fractions.items())),
    }


def cmd_sample(
    config_path: str,
    overrides: list[str] | None = None,
    out_dir: str | None = None,
    quiet: bool = False,
    svg: bool = False,
) -> InvocationResult:
    """Sample num_samples chains (seeds seed, seed+1, ...) and write artifacts."""
    started = time.perf_counter()
    config, warned = _load_config(config_path, overrides or [])
    run = config.build()
    out = out_dir or config.outputs.dir
    os.makedirs(out, exist_ok=True)

    seeds = [config.sampler.seed + i for i in range(config.sampler.num_samples)]
    trajectories = run_chains(
        run.scene, run.prompt, run.directives, run.guidance, run.schedule, seeds
    )
    samples = [tr.x0 for tr in trajectories]
    queries = _tracked_queries(config)

    artifacts = []
    config_path_out = os.path.join(out, "config.normalized.json")
    _atomic_write_text(config_path_out, emit_normalized(config))
    artifacts.append(config_path_out)

    if config.outputs.csv:
        csv_path = os.path.join(out, "samples.csv")
        _atomic_write_text(csv_path, _samples_csv(seeds, samples, run.scene, queries))
        artifacts.append(csv_path)

    if config.outputs.metrics:
        metrics_path = os.path.join(out, "metrics.json")
        metrics = _sample_metrics(config, run.scene, run.prompt, seeds, samples, queries)
        _atomic_write_text(metrics_path, json.dumps(metrics, sort_keys=True, indent=2) + "\n")
        artifacts.append(metrics_path)

    if svg or config.outputs.svg:
        from .plots import save_sample_scatter

        figure_path = os.path.join(out, "samples.svg")
        save_sample_scatter(figure_path, samples, run.scene)
        artifacts.append(figure_path)

    summary = {
        "command": "sample",
        "num_samples": len(samples),
        "steps": config.sampler.steps,
        "artifacts": artifacts,
        "warnings": warned,
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    _emit_summary(summary, quiet)
    return InvocationResult(exit_code=EXIT_OK, artifacts=artifacts, summary=summary)


def cmd_sweep(
    config_path: str,
    edit_index: int,
    edit_scales: list[float],
    num_seeds: int | None = None,
    overrides: list[str] | None = None,
    out_dir: str | None = None,
    quiet: bool = False,
    svg: bool = False,
) -> InvocationResult:
    """Sweep one edit's strength and report the target posterior per point."""
    started = time.perf_counter()
    if len(edit_scales) < 3:
        raise ConfigError("--se", f"a sweep needs at least 3 strength values, got {len(edit_scales)}")
    if any(b <= a for a, b in zip(edit_scales, edit_scales[1:])):
        raise ConfigError("--se", "strength values must be strictly increasing")
    config, warned = _load_config(config_path, overrides or [])
    if not 0 <= edit_index < len(config.edits):
        raise ConfigError("--edit-index", f"edit index {edit_index} out of range")
    out = out_dir or config.outputs.dir
    os.makedirs(out, exist_ok=True)
    count = num_seeds if num_seeds is not None else config.sampler.num_samples
    if count < 1:
        raise ConfigError("--num-seeds", f"number of seeds must be >= 1, got {count}")
    seeds = [config.sampler.seed + i for i in range(count)]

    artifacts = []
    run = config.build()
    queries = _tracked_queries(config)

    def write_point(index: int, scale: float, trajectories) -> None:
        path = os.path.join(out, f"sweep_point_{index:02d}.csv")
        samples = [tr.x0 for tr in trajectories]
        _atomic_write_text(path, _samples_csv(seeds, samples, run.scene, queries))
        artifacts.append(path)

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        report = strength_sweep(config, edit_index, edit_scales, seeds, on_point=write_point)
    warned.extend(str(w.message) for w in caught)

    config_path_out = os.path.join(out, "config.normalized.json")
    _atomic_write_text(config_path_out, emit_normalized(config))
    artifacts.append(config_path_out)

    report_path = os.path.join(out, "sweep.json")
    _atomic_write_text(report_path, json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    artifacts.append(report_path)

    if svg or config.outputs.svg:
        from .plots import save_sweep_curve

        figure_path = os.path.join(out, "sweep.svg")
        save_sweep_curve(figure_path, report)
        artifacts.append(figure_path)

    summary = {
        "command": "sweep",
        "points": len(report.points),
        "spearman": report.spearman,
        "num_seeds": count,
        "artifacts": artifacts,
        "warnings": warned,
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    _emit_summary(summary, quiet)
    return InvocationResult(exit_code=EXIT_OK, artifacts=artifacts, summary=summary)


def cmd_validate(
    config_path: str,
    overrides: list[str] | None = None,
    quiet: bool = False,
) -> InvocationResult:
    """Parse and echo the normalized configuration without sampling."""
    config, warned = _load_config(config_path, overrides or [])
    for message in warned:
        print(f"warning: {message}", file=sys.stderr)
    sys.stdout.write(emit_normalized(config))
    return InvocationResult(
        exit_code=EXIT_OK, artifacts=[], summary={"command": "validate", "warnings": warned}
    )


def _emit_summary(summary: dict, quiet: bool) -> None:
    for message in summary.get("warnings", []):
        print(f"warning: {message}", file=sys.stderr)
    if quiet:
        print(json.dumps(summary, sort_keys=True))
        return
    print(f"{summary['command']}: ok")
    for path in summary.get("artifacts", []):
        print(f"  wrote {path}")
    print(f"  wall time {summary['wall_time_s']} s")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sega",
        description="Concept-guided diffusion sampling on analytic mixture scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("config", help="path to a JSON run configuration")
        p.add_argument(
            "--overrides",
            nargs="+",
            default=[],
            metavar="KEY=VALUE",
            help="dotted-path config overrides applied before validation",
        )
        p.add_argument("--quiet", action="store_true", help="machine-readable stdout only")

    p_sample = sub.add_parser("sample", help="run sampling chains and write artifacts")
    common(p_sample)
    p_sample.add_argument("--out", default=None, help="output directory (default: outputs.dir)")
    p_sample.add_argument("--svg", action="store_true", help="also render the scatter figure")

    p_sweep = sub.add_parser("sweep", help="sweep one edit's strength")
    common(p_sweep)
    p_sweep.add_argument("--out", default=None, help="output directory (default: outputs.dir)")
    p_sweep.add_argument("--svg", action="store_true", help="also render the sweep figure")
    p_sweep.add_argument("--edit-index", type=int, default=0, help="which edit to sweep")
    p_sweep.add_argument(
        "--se", type=float, nargs="+", required=True, metavar="S_E",
        help="strictly increasing edit strengths (at least 3)",
    )
    p_sweep.add_argument(
        "--num-seeds", type=int, default=None,
        help="chains per sweep point (default: sampler.num_samples)",
    )

    p_validate = sub.add_parser("validate", help="validate and echo the normalized config")
    common(p_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "sample":
            result = cmd_sample(
                args.config,
                overrides=args.overrides,
                out_dir=args.out,
                quiet=args.quiet,
                svg=args.svg,
            )
        elif args.command == "sweep":
            result = cmd_sweep(
                args.config,
                edit_index=args.edit_index,
                edit_scales=args.se,
                num_seeds=args.num_seeds,
                overrides=args.overrides,
                out_dir=args.out,
                quiet=args.quiet,
                svg=args.svg,
            )
        else:
            result = cmd_validate(args.config, overrides=args.overrides, quiet=args.quiet)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, IndexError, RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
