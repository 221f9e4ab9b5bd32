"""Experiment configuration: a versioned JSON document validated fail-loud.

Unknown keys are rejected so a typo never silently falls back to a default;
every invariant violation names the offending field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

from .lattice import DefectSpec
from .models import VARIANTS

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Resolved benchmark configuration.

    Radii are stored in lattice-constant units; r1 and r_domain derive from
    r0 by fixed ratios so the blend width scales with the core radius.
    """

    potential_kind: str = "morse_pair"
    potential_params: dict = field(default_factory=dict)
    defect_kind: str = "vacancy"
    crack_sites: int = 3
    models: tuple = VARIANTS
    r0_values: tuple = (3.0, 4.0, 6.0, 8.0)
    r1_ratio: float = 2.0
    r_domain_ratio: float = 2.5
    reference_ratio: float = 2.0
    blend_profile: str = "quintic"
    grading_exponent: float = 1.5
    solver: dict = field(default_factory=dict)
    output_dir: str = "out"
    seed: int = 0
    deterministic: bool = False
    jobs: int = 1
    compare_to_reference: bool = True

    def validate(self):
        if self.potential_kind not in ("morse_pair", "toy_eam"):
            raise ConfigError(f"potential_kind: unknown kind {self.potential_kind!r}")
        if self.defect_kind not in DefectSpec.KINDS:
            raise ConfigError(f"defect_kind: unknown kind {self.defect_kind!r}")
        if self.crack_sites < 1:
            raise ConfigError("crack_sites: must be at least 1")
        if not self.models:
            raise ConfigError("models: list must be nonempty")
        for m in self.models:
            if m not in VARIANTS:
                raise ConfigError(f"models: unknown model {m!r}")
        if len(self.models) != len(set(self.models)):
            raise ConfigError("models: duplicate entry")
        vals = list(self.r0_values)
        if not vals:
            raise ConfigError("r0_values: list must be nonempty")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigError("r0_values: radii must be strictly increasing")
        if vals[0] <= 0:
            raise ConfigError("r0_values: radii must be positive")
        if self.r1_ratio <= 1.0:
            raise ConfigError("r1_ratio: must exceed 1 so that r0 < r1")
        if self.r_domain_ratio <= self.r1_ratio:
            raise ConfigError("r_domain_ratio: must exceed r1_ratio so that r1 < r_domain")
        if self.reference_ratio < 1.0:
            raise ConfigError("reference_ratio: must be at least 1")
        if self.blend_profile not in ("cubic", "quintic"):
            raise ConfigError(f"blend_profile: unknown profile {self.blend_profile!r}")
        if self.grading_exponent < 0:
            raise ConfigError("grading_exponent: must be nonnegative")
        if self.jobs < 1:
            raise ConfigError("jobs: must be at least 1")
        return self

    def defect(self, lattice_constant: float) -> DefectSpec:
        core = None
        if self.defect_kind != "none":
            spread = (self.crack_sites + 1) // 2 if self.defect_kind == "microcrack" else 1
            core = 1.5 * lattice_constant * max(1, spread)
        return DefectSpec(kind=self.defect_kind, crack_sites=self.crack_sites,
                          core_radius=core)

    def to_json(self) -> str:
        doc = {"schema_version": SCHEMA_VERSION}
        doc.update(asdict(self))
        doc["models"] = list(self.models)
        doc["r0_values"] = list(self.r0_values)
        return json.dumps(doc, indent=2, sort_keys=True)


_FIELDS = set(ExperimentConfig.__dataclass_fields__)


def load_config(path_or_dict) -> ExperimentConfig:
    if isinstance(path_or_dict, dict):
        doc = dict(path_or_dict)
    else:
        with open(path_or_dict) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    version = doc.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {version!r}")
    unknown = set(doc) - _FIELDS
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(sorted(unknown))}")
    for key in ("models", "r0_values"):
        if key in doc:
            doc[key] = tuple(doc[key])
    return ExperimentConfig(**doc).validate()
