"""Scenario configuration: strict JSON schema plus kind-specific checks."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema

KINDS = ("free_particle", "pauli_spin", "free_field_modes", "coupled_qed_toy", "measurement")
FIELD_KINDS = ("free_field_modes", "coupled_qed_toy")

DEFAULTS: dict[str, Any] = {
    "name": "",
    "description": "",
    "hamiltonian": {"mass": 1.0, "charge": 1.0, "magnetic_moment": 1.0, "potential": {"type": "none"}},
    "run": {"snapshot_stride": 10, "trajectory_stride": 2, "checkpoint_every": None},
    "collapse": {"threshold": 1e-6, "track": 20},
    "assertions": {"norm_drift": 1e-10, "energy_drift": 1e-6, "equivariance": "pass"},
    "output": {"formats": ["csv", "json"]},
}
ENSEMBLE_DEFAULTS: dict[str, Any] = {
    "n": 1000,
    "seed": 0,
    "method": "auto",
    "record_every": 1,
    "write_trajectories": 100,
    "velocity_scale": 1.0,
}
MEASUREMENT_DEFAULTS: dict[str, Any] = {"width": 1.0, "mass": 1.0, "center": 0.0}


class ConfigError(ValueError):
    """Invalid scenario; ``errors`` lists every problem found."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.errors))


def load_schema() -> dict:
    text = resources.files("pilotwave").joinpath("schema/scenario.schema.json").read_text()
    return json.loads(text)


_VALIDATOR = None


def _validator():
    global _VALIDATOR
    if _VALIDATOR is None:
        schema = load_schema()
        cls = jsonschema.validators.validator_for(schema)
        cls.check_schema(schema)
        _VALIDATOR = cls(schema)
    return _VALIDATOR


def _path(err) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def _schema_errors(data: dict) -> list[str]:
    errs = sorted(_validator().iter_errors(data), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    return [f"{_path(e)}: {e.message}" for e in errs]


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _n_amp(values) -> int:
    return len(values) if values is not None else 0


def _kind_errors(d: dict) -> list[str]:
    errs: list[str] = []
    kind = d["kind"]
    ham = d.get("hamiltonian", {})
    init = d.get("initial_state")
    grid = d.get("grid", {})
    extents = grid.get("extents")
    dims = len(extents) if extents else None

    if kind in ("free_particle", "pauli_spin", "measurement") and not extents:
        errs.append(f"grid.extents: required for kind {kind!r}")
    if kind in FIELD_KINDS and "modes" not in d:
        errs.append(f"modes: required for kind {kind!r}")
    if kind != "measurement" and init is None:
        errs.append(f"initial_state: required for kind {kind!r}")
    if kind == "measurement":
        if "measurement" not in d:
            errs.append("measurement: required for kind 'measurement'")
        elif dims not in (None, 1):
            errs.append("grid.extents: the pointer grid must be one-dimensional")
        m = d.get("measurement", {})
        if "amplitudes" in m and _n_amp(m["amplitudes"]) != m.get("levels"):
            errs.append(f"measurement.amplitudes: need {m.get('levels')} entries, got {_n_amp(m['amplitudes'])}")
    if kind == "pauli_spin" and dims is not None and dims > 3:
        errs.append("grid.extents: a spin-1/2 particle lives in at most three dimensions")

    labels = 1
    if kind in ("pauli_spin", "measurement"):
        labels = 2 if kind == "pauli_spin" else d.get("measurement", {}).get("levels", 1)
    elif kind == "coupled_qed_toy":
        lev = ham.get("level_energies")
        if lev is None:
            errs.append("hamiltonian.level_energies: required for kind 'coupled_qed_toy'")
        else:
            labels = len(lev)
    else:
        labels = ham.get("labels", 1)

    if kind == "coupled_qed_toy":
        n_modes = None
        if "modes" in d:
            m = d["modes"]
            n_modes = len(m.get("k", [])) * len(m.get("polarizations", [1, 2])) * len(m.get("parities", ["cos", "sin"]))
        for i, c in enumerate(ham.get("couplings", [])):
            mat = c.get("matrix", [])
            if len(mat) != labels or any(len(r) != labels for r in mat):
                errs.append(f"hamiltonian.couplings.{i}.matrix: must be {labels}x{labels}")
            if n_modes is not None and c.get("mode", 0) >= n_modes:
                errs.append(f"hamiltonian.couplings.{i}.mode: index {c['mode']} out of range for {n_modes} modes")

    pot = ham.get("potential", {})
    if pot.get("type") == "harmonic" and "omega" not in pot:
        errs.append("hamiltonian.potential.omega: required for a harmonic potential")

    if init is not None:
        t = init.get("type")
        if kind not in FIELD_KINDS and t in ("coherent", "ground"):
            errs.append(f"initial_state.type: {t!r} needs a mode basis (kinds {', '.join(FIELD_KINDS)})")
        if t == "gaussian" and "center" not in init:
            errs.append("initial_state.center: required for a Gaussian")
        if t == "superposition" and "components" not in init:
            errs.append("initial_state.components: required for a superposition")
        packets = init.get("components", []) if t == "superposition" else [init]
        for i, p in enumerate(packets):
            where = f"initial_state.components.{i}" if t == "superposition" else "initial_state"
            if dims is not None and "center" in p and len(p["center"]) != dims:
                errs.append(f"{where}.center: need {dims} coordinates, got {len(p['center'])}")
            if dims is not None and "momentum" in p and len(p["momentum"]) != dims:
                errs.append(f"{where}.momentum: need {dims} coordinates, got {len(p['momentum'])}")
            la = p.get("label_amplitudes")
            if la is not None and len(la) != labels:
                errs.append(f"{where}.label_amplitudes: need {labels} entries, got {len(la)}")
        if init.get("stationary") and t != "ground":
            errs.append("initial_state.stationary: only meaningful for a ground state")
    return errs


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario with documented defaults filled in."""

    data: dict
    source: str | None = None

    @property
    def kind(self) -> str:
        return self.data["kind"]

    @property
    def name(self) -> str:
        return self.data["name"]

    def section(self, key: str) -> dict:
        return self.data.get(key, {})

    @property
    def has_ensemble(self) -> bool:
        return "ensemble" in self.data

    def portable(self) -> dict:
        """The configuration without its output location, which does not affect results."""
        d = copy.deepcopy(self.data)
        d["output"].pop("directory", None)
        return d

    def canonical(self) -> str:
        return json.dumps(self.portable(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def with_overrides(self, seed: int | None = None, out: str | None = None) -> "ScenarioConfig":
        d = copy.deepcopy(self.data)
        if seed is not None:
            if "ensemble" not in d:
                raise ConfigError(["--seed: scenario has no ensemble section"])
            d["ensemble"]["seed"] = int(seed)
        if out is not None:
            d["output"]["directory"] = str(out)
        return ScenarioConfig(d, self.source)


def validate_config(data: Any) -> list[str]:
    """Every validation error in ``data``; empty when valid."""
    if not isinstance(data, dict):
        return ["<root>: a scenario must be a JSON object"]
    errs = _schema_errors(data)
    try:
        more = _kind_errors(_fill_defaults(data))
    except (KeyError, TypeError, AttributeError, IndexError, ValueError):
        # malformed sections were already reported by the schema pass
        more = []
    return errs + [e for e in more if e not in errs]


def _fill_defaults(data: dict) -> dict:
    d = _merge(DEFAULTS, data)
    if "ensemble" in d:
        d["ensemble"] = _merge(ENSEMBLE_DEFAULTS, d["ensemble"])
    if "measurement" in d:
        d["measurement"] = _merge(MEASUREMENT_DEFAULTS, d["measurement"])
    if "grid" in d and "extents" in d["grid"]:
        d["grid"].setdefault("boundary", "periodic")
    if not d["name"]:
        d["name"] = d["kind"]
    d["output"].setdefault("directory", str(Path("out") / d["name"]))
    if "ensemble" not in d:
        d["assertions"]["equivariance"] = "off"
    return d


def config_from_dict(data: Any, source: str | None = None) -> ScenarioConfig:
    errs = validate_config(data)
    if errs:
        raise ConfigError(errs)
    return ScenarioConfig(_fill_defaults(data), source)


def parse_config(path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError([f"{p}: cannot read ({exc.strerror or exc})"]) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{p}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"]) from None
    return config_from_dict(data, str(p))


def shipped_scenarios() -> dict[str, Path]:
    root = resources.files("pilotwave").joinpath("scenarios")
    out = {}
    for entry in root.iterdir():
        if entry.name.endswith(".json") and entry.name != "coverage.json":
            out[entry.name[:-5]] = Path(str(entry))
    return dict(sorted(out.items()))


def load_scenario(name: str) -> ScenarioConfig:
    """A shipped scenario by name, or a path to a config file."""
    known = shipped_scenarios()
    if name in known:
        return parse_config(known[name])
    return parse_config(name)


def as_complex(v) -> complex:
    if isinstance(v, (list, tuple)):
        return complex(v[0], v[1])
    return complex(v)
