"""Shared fixtures and generators for the test suite."""
from __future__ import annotations

import json
import random

import numpy as np
import pytest

from sega import ConceptQuery, GuidanceConfig, make_schedule, royal_court_scene
from sega.mixture import Component, MixtureScene


@pytest.fixture(scope="session")
def royal_scene():
    return royal_court_scene()


@pytest.fixture(scope="session")
def cosine_schedule():
    return make_schedule(50, "cosine")


@pytest.fixture
def plain_guidance():
    return GuidanceConfig(guidance_scale=1.0)


@pytest.fixture
def royal_prompt():
    return ConceptQuery.atomic({"royal"})


def royal_config_doc() -> dict:
    """Reference royal-court configuration document."""
    return {
        "schema_version": 1,
        "scene": {
            "dimension": 2,
            "components": [
                {"mean": [-3.0, 3.0], "variances": [1.0, 1.0], "weight": 0.25, "tags": ["royal", "male"]},
                {"mean": [3.0, 3.0], "variances": [1.0, 1.0], "weight": 0.25, "tags": ["royal", "female"]},
                {"mean": [-3.0, -3.0], "variances": [1.0, 1.0], "weight": 0.25, "tags": ["common", "male"]},
                {"mean": [3.0, -3.0], "variances": [1.0, 1.0], "weight": 0.25, "tags": ["common", "female"]},
            ],
        },
        "prompt": {"tags": ["royal", "male"]},
        "edits": [
            {"tags": ["male"], "direction": "negative", "s_e": 5.0, "lambda": -0.1, "delta": 5, "g": 1.0},
            {"tags": ["female"], "direction": "positive", "s_e": 5.0, "lambda": 0.1, "delta": 5, "g": 1.0},
        ],
        "guidance": {"s_g": 7.5, "s_m": 0.0, "beta_m": 0.4, "mu_mode": "paper", "s_max": 100.0},
        "sampler": {"steps": 50, "schedule": "cosine", "seed": 0, "num_samples": 24},
        "outputs": {"dir": "sega_out", "csv": True, "metrics": True, "svg": False},
    }


@pytest.fixture
def config_file(tmp_path):
    def write(doc: dict, name: str = "config.json") -> str:
        path = tmp_path / name
        path.write_text(json.dumps(doc))
        return str(path)

    return write


def random_scene(rng: random.Random, max_dim: int = 6) -> MixtureScene:
    """Random well-separated mixture scene for property tests."""
    dim = rng.randint(1, max_dim)
    count = rng.randint(1, 4)
    components = []
    for i in range(count):
        mean = np.array([rng.uniform(-5.0, 5.0) for _ in range(dim)])
        variances = np.array([rng.uniform(0.3, 2.0) for _ in range(dim)])
        tags = frozenset({f"c{i}", "all"})
        components.append(
            Component(mean=mean, variances=variances, weight=rng.uniform(0.2, 1.0), tags=tags)
        )
    return MixtureScene(components=tuple(components), dimension=dim)


def random_valid_document(rng: random.Random) -> dict:
    """Random valid configuration document exercising defaults and options."""
    dim = rng.randint(1, 3)
    count = rng.randint(1, 4)
    tag_pool = ["a", "b", "c", "d"]
    components = []
    for i in range(count):
        tags = sorted(set([tag_pool[i % len(tag_pool)], rng.choice(tag_pool)]))
        comp = {
            "mean": [round(rng.uniform(-4, 4), 3) for _ in range(dim)],
            "variances": [round(rng.uniform(0.2, 2.0), 3) for _ in range(dim)],
            "tags": tags,
        }
        if rng.random() < 0.7:
            comp["weight"] = round(rng.uniform(0.1, 3.0), 3)
        components.append(comp)
    doc: dict = {
        "scene": {"dimension": dim, "components": components},
        "prompt": {"tags": [rng.choice(components[0]["tags"])]},
    }
    if rng.random() < 0.8:
        edits = []
        for _ in range(rng.randint(0, 2)):
            source = rng.choice(components)
            edit: dict = {}
            if rng.random() < 0.75:
                edit["tags"] = [rng.choice(source["tags"])]
            else:
                edit["composite"] = [
                    {"tags": [rng.choice(source["tags"])], "weight": round(rng.uniform(0.5, 2.0), 2)},
                    {"tags": [rng.choice(components[-1]["tags"])], "weight": round(rng.uniform(0.5, 2.0), 2)},
                ]
            if rng.random() < 0.8:
                edit["direction"] = rng.choice(["positive", "negative"])
            if rng.random() < 0.8:
                edit["s_e"] = round(rng.uniform(0.0, 20.0), 3)
            if rng.random() < 0.8:
                edit["lambda"] = round(rng.uniform(-1.0, 1.0), 3)
            if rng.random() < 0.8:
                edit["delta"] = rng.randint(0, 15)
            if rng.random() < 0.8:
                edit["g"] = round(rng.uniform(0.1, 3.0), 3)
            edits.append(edit)
        doc["edits"] = edits
    if rng.random() < 0.8:
        doc["guidance"] = {
            "s_g": round(rng.uniform(0.0, 12.0), 3),
            "s_m": round(rng.uniform(0.0, 1.0), 3),
            "beta_m": round(rng.uniform(0.0, 0.95), 3),
            "mu_mode": rng.choice(["paper", "clamped"]),
            "s_max": round(rng.uniform(1.0, 200.0), 3),
        }
    if rng.random() < 0.8:
        doc["sampler"] = {
            "steps": rng.randint(1, 60),
            "schedule": rng.choice(["cosine", "linear_vp"]),
            "seed": rng.randint(0, 10_000),
            "num_samples": rng.randint(1, 8),
        }
    if rng.random() < 0.5:
        doc["outputs"] = {
            "dir": rng.choice(["out", "artifacts/run"]),
            "csv": rng.random() < 0.5,
            "metrics": rng.random() < 0.5,
            "svg": rng.random() < 0.5,
        }
    return doc
