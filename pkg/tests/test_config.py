"""Configuration parsing, validation, normalization, and round-trips."""
from __future__ import annotations

import json
import random

import pytest

from sega import ConfigError, ConfigWarning, parse
from sega.config import apply_overrides, emit_normalized, load_document, validate_document
from conftest import random_valid_document, royal_config_doc

MINIMAL = {
    "scene": {
        "dimension": 1,
        "components": [
            {"mean": [0.0], "variances": [1.0], "tags": ["a"]},
            {"mean": [2.0], "variances": [1.0], "tags": ["b"]},
        ],
    },
    "prompt": {"tags": ["a"]},
}


class TestDefaults:
    def test_minimal_document_gets_documented_defaults(self):
        cfg = parse(json.dumps(MINIMAL))
        assert cfg.guidance.guidance_scale == 7.5
        assert cfg.guidance.momentum_scale == 0.0
        assert cfg.guidance.momentum_beta == 0.4
        assert cfg.guidance.mu_mode == "paper"
        assert cfg.sampler.steps == 50
        assert cfg.sampler.schedule == "cosine"
        assert cfg.sampler.seed == 0
        assert cfg.edits == ()

    def test_edit_defaults(self):
        doc = dict(MINIMAL, edits=[{"tags": ["b"]}])
        cfg = parse(json.dumps(doc))
        edit = cfg.edits[0]
        assert edit.direction == "positive"
        assert edit.edit_scale == 5.0
        assert edit.warmup == 5
        assert edit.weight == 1.0
        assert edit.threshold == 0.1

    def test_threshold_default_depends_on_direction(self):
        doc = dict(MINIMAL, edits=[{"tags": ["b"], "direction": "negative"}])
        cfg = parse(json.dumps(doc))
        assert cfg.edits[0].threshold == -0.1

    def test_scene_weights_default_uniform(self):
        cfg = parse(json.dumps(MINIMAL))
        assert [c.weight for c in cfg.scene.components] == [0.5, 0.5]


class TestRangeValidation:
    def test_lambda_range_cited(self):
        doc = dict(MINIMAL, edits=[{"tags": ["b"], "lambda": 1.5}])
        with pytest.raises(ConfigError, match=r"\[-1, 1\]") as err:
            parse(json.dumps(doc))
        assert err.value.path == "edits[0].lambda"

    def test_momentum_scale_range_cited(self):
        doc = dict(MINIMAL, guidance={"s_m": 2.0})
        with pytest.raises(ConfigError, match=r"\[0, 1\]") as err:
            parse(json.dumps(doc))
        assert err.value.path == "guidance.s_m"

    @pytest.mark.parametrize(
        "section, payload, path",
        [
            ("guidance", {"beta_m": 1.0}, "guidance.beta_m"),
            ("guidance", {"s_g": -0.1}, "guidance.s_g"),
            ("guidance", {"s_max": 0.0}, "guidance.s_max"),
            ("guidance", {"mu_mode": "weird"}, "guidance.mu_mode"),
            ("sampler", {"steps": 0}, "sampler.steps"),
            ("sampler", {"steps": 20000}, "sampler.steps"),
            ("sampler", {"schedule": "exp"}, "sampler.schedule"),
            ("sampler", {"seed": -1}, "sampler.seed"),
            ("sampler", {"num_samples": 0}, "sampler.num_samples"),
        ],
    )
    def test_section_ranges(self, section, payload, path):
        doc = dict(MINIMAL)
        doc[section] = payload
        with pytest.raises(ConfigError) as err:
            parse(json.dumps(doc))
        assert err.value.path == path

    @pytest.mark.parametrize(
        "edit, path",
        [
            ({"tags": ["b"], "s_e": -1.0}, "edits[0].s_e"),
            ({"tags": ["b"], "delta": -1}, "edits[0].delta"),
            ({"tags": ["b"], "g": -0.5}, "edits[0].g"),
            ({"tags": ["b"], "direction": "up"}, "edits[0].direction"),
            ({"tags": ["nope"]}, "edits[0].tags"),
            ({}, "edits[0]"),
            ({"tags": ["b"], "composite": []}, "edits[0]"),
        ],
    )
    def test_edit_validation(self, edit, path):
        doc = dict(MINIMAL, edits=[edit])
        with pytest.raises(ConfigError) as err:
            parse(json.dumps(doc))
        assert err.value.path == path

    def test_warnings_on_suspicious_values(self):
        doc = dict(MINIMAL, edits=[{"tags": ["b"], "s_e": 6000.0}])
        with pytest.warns(ConfigWarning, match="5000"):
            parse(json.dumps(doc))
        doc = dict(MINIMAL, edits=[{"tags": ["b"], "delta": 25}])
        with pytest.warns(ConfigWarning, match="20"):
            parse(json.dumps(doc))

    def test_scene_validation(self):
        bad_dim = {
            "scene": {"dimension": 2, "components": [{"mean": [0.0], "variances": [1.0], "tags": ["a"]}]},
            "prompt": {"tags": ["a"]},
        }
        with pytest.raises(ConfigError) as err:
            parse(json.dumps(bad_dim))
        assert err.value.path == "scene.components[0].mean"

        bad_var = json.loads(json.dumps(MINIMAL))
        bad_var["scene"]["components"][0]["variances"] = [0.0]
        with pytest.raises(ConfigError, match="> 0"):
            parse(json.dumps(bad_var))

    def test_prompt_must_match_scene(self):
        doc = dict(MINIMAL, prompt={"tags": ["zebra"]})
        with pytest.raises(ConfigError) as err:
            parse(json.dumps(doc))
        assert err.value.path == "prompt.tags"

    def test_non_finite_numbers_rejected(self):
        text = json.dumps(MINIMAL).replace('"s_g": 7.5', "")
        doc = json.loads(text)
        doc["guidance"] = {"s_g": float("inf")}
        rendered = json.dumps(doc)  # json emits Infinity
        with pytest.raises(ConfigError, match="finite"):
            parse(rendered)


class TestStrictness:
    def test_unknown_key_rejected_with_path(self):
        doc = dict(MINIMAL, edits=[{"tags": ["b"], "strenght": 3}])
        with pytest.raises(ConfigError, match="unknown key") as err:
            parse(json.dumps(doc))
        assert err.value.path == "edits[0].strenght"

    def test_unknown_key_warns_in_lax_mode(self):
        doc = dict(MINIMAL, edits=[{"tags": ["b"], "strenght": 3}])
        with pytest.warns(ConfigWarning, match="strenght"):
            cfg = parse(json.dumps(doc), strict=False)
        assert cfg.edits[0].edit_scale == 5.0

    def test_invalid_json_is_config_error(self):
        with pytest.raises(ConfigError, match="invalid JSON"):
            parse("{not json")

    def test_empty_document_is_config_error(self):
        with pytest.raises(ConfigError):
            parse("")
        with pytest.raises(ConfigError, match="scene"):
            parse("{}")

    def test_non_object_document(self):
        with pytest.raises(ConfigError, match="object"):
            parse("[1, 2, 3]")

    def test_arbitrary_bytes_never_crash(self):
        rng = random.Random(0)
        for _ in range(50):
            blob = bytes(rng.randrange(256) for _ in range(rng.randrange(1, 60)))
            with pytest.raises(ConfigError):
                parse(blob.decode("latin1"))


class TestNormalization:
    def test_edit_weights_normalized(self):
        doc = dict(MINIMAL, edits=[{"tags": ["a"], "g": 2.0}, {"tags": ["b"], "g": 2.0}])
        cfg = parse(json.dumps(doc))
        assert [e.weight for e in cfg.edits] == [0.5, 0.5]

    def test_scene_weights_normalized(self):
        doc = json.loads(json.dumps(MINIMAL))
        doc["scene"]["components"][0]["weight"] = 3.0
        doc["scene"]["components"][1]["weight"] = 1.0
        cfg = parse(json.dumps(doc))
        assert [c.weight for c in cfg.scene.components] == [0.75, 0.25]

    def test_tags_sorted_and_deduplicated(self):
        doc = json.loads(json.dumps(MINIMAL))
        doc["scene"]["components"][0]["tags"] = ["b", "a", "b"]
        doc["prompt"] = {"tags": ["b", "a"]}
        cfg = parse(json.dumps(doc))
        assert cfg.scene.components[0].tags == ("a", "b")
        assert cfg.prompt == ("a", "b")


class TestEmitNormalized:
    def test_round_trip_reference_config(self):
        cfg = parse(json.dumps(royal_config_doc()))
        text = emit_normalized(cfg)
        assert parse(text) == cfg
        assert emit_normalized(parse(text)) == text

    def test_defaults_are_materialized(self):
        text = emit_normalized(parse(json.dumps(MINIMAL)))
        doc = json.loads(text)
        assert doc["guidance"]["s_g"] == 7.5
        assert doc["sampler"]["num_samples"] == 64
        assert doc["outputs"]["dir"] == "sega_out"

    def test_output_keys_sorted(self):
        text = emit_normalized(parse(json.dumps(MINIMAL)))
        doc = json.loads(text)
        assert list(doc) == sorted(doc)
        assert list(doc["sampler"]) == sorted(doc["sampler"])

    def test_round_trip_randomized_documents(self):
        rng = random.Random(1234)
        for _ in range(60):
            doc = random_valid_document(rng)
            first = parse(json.dumps(doc))
            again = parse(emit_normalized(first))
            assert again == first


class TestOverrides:
    def test_scalar_override(self):
        doc = json.loads(json.dumps(MINIMAL))
        apply_overrides(doc, ["guidance.s_g=2.5", "sampler.steps=7"])
        cfg = validate_document(doc)
        assert cfg.guidance.guidance_scale == 2.5
        assert cfg.sampler.steps == 7

    def test_indexed_override(self):
        doc = dict(json.loads(json.dumps(MINIMAL)), edits=[{"tags": ["b"], "s_e": 1.0}])
        apply_overrides(doc, ["edits[0].s_e=9.5"])
        cfg = validate_document(doc)
        assert cfg.edits[0].edit_scale == 9.5

    def test_override_values_face_validation(self):
        doc = json.loads(json.dumps(MINIMAL))
        apply_overrides(doc, ["guidance.s_m=2"])
        with pytest.raises(ConfigError, match=r"\[0, 1\]"):
            validate_document(doc)

    def test_string_values_pass_through(self):
        doc = json.loads(json.dumps(MINIMAL))
        apply_overrides(doc, ["sampler.schedule=linear_vp"])
        assert validate_document(doc).sampler.schedule == "linear_vp"

    def test_bad_override_paths(self):
        doc = json.loads(json.dumps(MINIMAL))
        with pytest.raises(ConfigError, match="path=value"):
            apply_overrides(doc, ["no-equals-sign"])
        with pytest.raises(ConfigError, match="out of range"):
            apply_overrides(dict(doc, edits=[]), ["edits[3].s_e=1"])
        with pytest.raises(ConfigError, match="index"):
            apply_overrides(doc, ["edits[x].s_e=1"])

    def test_unknown_override_key_rejected_by_validation(self):
        doc = json.loads(json.dumps(MINIMAL))
        apply_overrides(doc, ["guidance.scale=3"])
        with pytest.raises(ConfigError, match="unknown key") as err:
            validate_document(doc)
        assert err.value.path == "guidance.scale"


class TestBuild:
    def test_build_produces_runtime_objects(self):
        cfg = parse(json.dumps(royal_config_doc()))
        run = cfg.build()
        assert run.scene.dimension == 2
        assert len(run.directives) == 2
        assert run.directives[0].direction == "negative"
        assert run.schedule.steps == 50
        assert sum(d.weight for d in run.directives) == pytest.approx(1.0)

    def test_composite_edit_builds(self):
        doc = dict(
            MINIMAL,
            edits=[
                {
                    "composite": [
                        {"tags": ["a"], "weight": 1.0},
                        {"tags": ["b"], "weight": 3.0},
                    ]
                }
            ],
        )
        cfg = parse(json.dumps(doc))
        part_weights = [p.weight for p in cfg.edits[0].composite]
        assert part_weights == [0.25, 0.75]
        run = cfg.build()
        assert not run.directives[0].query.is_atomic

    def test_load_document_rejects_non_dict(self):
        with pytest.raises(ConfigError):
            load_document("3")
