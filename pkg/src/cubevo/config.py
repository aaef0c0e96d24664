"""Run configuration: presets, JSON config files, flag overrides.

Precedence, lowest to highest: built-in defaults, ``--preset``, config
file, command-line flags. Every command writes the fully resolved
configuration (including the master seed) next to its outputs as
``config.resolved.json`` so any artifact can be regenerated.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path

from cubevo.env import EnvironmentSpec, GeneratorParams
from cubevo.evo import EvoParams

__all__ = [
    "PAPER_PRESET",
    "PRESETS",
    "dataclass_from_dict",
    "load_json",
    "save_json",
    "load_environment",
    "save_environment",
    "config_digest",
    "csv_meta_line",
    "write_resolved_config",
]

# The reference parameter set: 8-bit worlds, 250-step lifetimes, 30-step
# reward recovery, per-bit flip probability 0.0085, population 250 evolved
# for 5000 generations with P_m=0.6, D_m=0.08, P_addsyn=0.1, P_delsyn=0.05,
# P_dup=0.007.
PAPER_PRESET = {
    "evo": {
        "population_size": 250,
        "generations": 5000,
        "lifetime": 250,
        "p_weight_mutation": 0.6,
        "weight_mutation_variance": 0.08,
        "p_add_synapse": 0.1,
        "p_delete_synapse": 0.05,
        "p_duplication": 0.007,
    },
    "generator": {
        "n_env": 8,
        "t_rec": 30,
        "p_stoch": 0.0085,
    },
}

PRESETS = {"paper": PAPER_PRESET}


def dataclass_from_dict(cls, values: dict, section: str):
    """Build a dataclass from a config dict, rejecting unknown keys with a
    message that names the offending field."""
    allowed = {f.name for f in dataclasses.fields(cls)}
    for key in values:
        if key not in allowed:
            raise ValueError(f"unknown config field {key!r} in section {section!r}")
    return cls(**values)


def merge_sections(*layers: dict | None) -> dict:
    """Shallow-merge config layers; later layers win, None values ignored."""
    merged: dict = {}
    for layer in layers:
        if not layer:
            continue
        for key, value in layer.items():
            if value is not None:
                merged[key] = value
    return merged


def load_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ValueError(f"malformed JSON in {path}: {err}") from None


def save_json(path, document: dict) -> None:
    Path(path).write_text(json.dumps(document, indent=2) + "\n")


def load_environment(path) -> EnvironmentSpec:
    return EnvironmentSpec.from_json_dict(load_json(path))


def save_environment(path, spec: EnvironmentSpec) -> None:
    save_json(path, spec.to_json_dict())


def config_digest(document: dict) -> str:
    """Short stable digest of the scientific configuration. Execution-only
    settings (worker count, output paths) must be excluded by the caller
    so they can never change result bytes."""
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def csv_meta_line(seed: int, science: dict) -> str:
    from cubevo import __version__

    return f"# cubevo={__version__} seed={seed} config={config_digest(science)}"


def write_resolved_config(out_dir, resolved: dict) -> None:
    save_json(Path(out_dir) / "config.resolved.json", resolved)


def evo_params_from_layers(*layers: dict | None) -> EvoParams:
    return dataclass_from_dict(EvoParams, merge_sections(*layers), "evo")


def generator_params_from_layers(*layers: dict | None) -> GeneratorParams:
    return dataclass_from_dict(GeneratorParams, merge_sections(*layers), "generator")
