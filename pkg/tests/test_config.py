import json

import pytest

from blendqc.config import (ConfigError, ExperimentConfig, SCHEMA_VERSION,
                            load_config)


def base_doc(**extra):
    doc = {"schema_version": SCHEMA_VERSION}
    doc.update(extra)
    return doc


def test_defaults_validate():
    cfg = ExperimentConfig().validate()
    assert cfg.r0_values == (3.0, 4.0, 6.0, 8.0)
    assert cfg.models == ("ATM", "BQCE", "BQCF", "BGFC")


def test_load_from_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(base_doc(r0_values=[2.0, 3.0], seed=7)))
    cfg = load_config(p)
    assert cfg.r0_values == (2.0, 3.0)
    assert cfg.seed == 7


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown keys: r0_valuesx"):
        load_config(base_doc(r0_valuesx=[2.0]))


def test_missing_schema_version():
    with pytest.raises(ConfigError, match="schema_version"):
        load_config({"r0_values": [2.0, 3.0]})


def test_wrong_schema_version():
    with pytest.raises(ConfigError, match="schema_version"):
        load_config({"schema_version": 99})


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(p)


@pytest.mark.parametrize("field,value,msg", [
    ("potential_kind", "lj", "potential_kind"),
    ("defect_kind", "void", "defect_kind"),
    ("crack_sites", 0, "crack_sites"),
    ("models", [], "models"),
    ("models", ["ATM", "QNL"], "models"),
    ("models", ["ATM", "ATM"], "models"),
    ("r0_values", [], "r0_values"),
    ("r0_values", [3.0, 3.0], "strictly increasing"),
    ("r0_values", [4.0, 3.0], "strictly increasing"),
    ("r1_ratio", 1.0, "r1_ratio"),
    ("r_domain_ratio", 1.5, "r_domain_ratio"),
    ("reference_ratio", 0.5, "reference_ratio"),
    ("blend_profile", "septic", "blend_profile"),
    ("grading_exponent", -1.0, "grading_exponent"),
    ("jobs", 0, "jobs"),
])
def test_invariant_violations_name_field(field, value, msg):
    with pytest.raises(ConfigError, match=msg):
        load_config(base_doc(**{field: value}))


def test_roundtrip():
    cfg = ExperimentConfig(seed=3, r0_values=(2.0, 5.0)).validate()
    again = load_config(json.loads(cfg.to_json()))
    assert again == cfg


def test_defect_spec_derivation():
    cfg = ExperimentConfig(defect_kind="microcrack", crack_sites=5).validate()
    spec = cfg.defect(1.3)
    assert spec.kind == "microcrack"
    assert spec.core_radius >= 1.5 * 1.3
    assert ExperimentConfig(defect_kind="none").validate().defect(1.3).core_radius is None
