"""JSON run configuration: schema validation, model-list expansion, resolution.

Model entries may be strings or objects::

    "DNN8_3"                      one network preset
    "MLP_ALL"                     all 16 network presets
    "RF_GRID" / "SVR_GRID"        the full hyperparameter grids
    "RF_BEST" / "SVR_BEST"        RF_F25_D7 and SVR_C0.1_G0.01_E0.1
    "RF_F25_D7", "SVR_C0.1_G0.01_E0.1"
    "ensemble:[SVR_BEST,RF_BEST,DNN8_3]"
    {"rf": {...}}, {"svr": {...}}, {"mlp": {"name": ..., "hidden_sizes": [...], ...}}
    {"ensemble": [...], "mode": "mean", "name": "Ensemble"}
"""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, replace
from pathlib import Path

import jsonschema

from . import forest as rf
from . import mlp
from . import svr
from .errors import ConfigError
from .panel import MonthId
from .pipeline import EnsembleSpec, MlpSpec, WalkForwardConfig, spec_to_dict
from .synth import SynthConfig

_MONTH = {"type": "string", "pattern": r"^\d{4}-(0[1-9]|1[0-2])$"}

SYNTH_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "n_stocks": {"type": "integer", "minimum": 10},
        "n_months": {"type": "integer", "minimum": 14},
        "signal_strength": {"type": "number", "minimum": 0, "maximum": 1},
        "signal_factor": {"type": "integer", "minimum": 1, "maximum": 25},
        "signal_sigma": {"type": "number", "minimum": 0},
        "noise_sigma": {"type": "number", "minimum": 0},
        "market_mean": {"type": "number"},
        "market_sigma": {"type": "number", "minimum": 0},
        "ar_rho": {"type": "number", "minimum": -1, "maximum": 1},
        "missing_rate": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "start": _MONTH,
        "seed": {"type": "integer", "minimum": 0},
    },
}

_RF_OBJ = {
    "type": "object", "additionalProperties": False,
    "required": ["max_features", "max_depth"],
    "properties": {"max_features": {"type": "integer", "minimum": 1},
                   "max_depth": {"type": "integer", "minimum": 1},
                   "n_estimators": {"type": "integer", "minimum": 1}},
}
_SVR_OBJ = {
    "type": "object", "additionalProperties": False,
    "required": ["C", "gamma", "epsilon"],
    "properties": {"C": {"type": "number", "exclusiveMinimum": 0},
                   "gamma": {"type": "number", "exclusiveMinimum": 0},
                   "epsilon": {"type": "number", "minimum": 0}},
}
_MLP_OBJ = {
    "type": "object", "additionalProperties": False,
    "required": ["name", "hidden_sizes"],
    "properties": {"name": {"type": "string", "minLength": 1},
                   "hidden_sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                   "dropout_rate": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}},
}

MODEL_SCHEMA = {
    "oneOf": [
        {"type": "string", "minLength": 1},
        {"type": "object", "additionalProperties": False, "required": ["rf"],
         "properties": {"rf": _RF_OBJ}},
        {"type": "object", "additionalProperties": False, "required": ["svr"],
         "properties": {"svr": _SVR_OBJ}},
        {"type": "object", "additionalProperties": False, "required": ["mlp"],
         "properties": {"mlp": _MLP_OBJ}},
        {"type": "object", "additionalProperties": False, "required": ["ensemble"],
         "properties": {"ensemble": {"type": "array", "minItems": 2, "items": {"type": "string"}},
                        "mode": {"enum": ["mean", "rank"]},
                        "name": {"type": "string", "minLength": 1}}},
    ]
}

RUN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["eval_start", "eval_end", "models"],
    "properties": {
        "panel": {"type": "string", "minLength": 1},
        "synth": SYNTH_SCHEMA,
        "eval_start": _MONTH,
        "eval_end": _MONTH,
        "train_window": {"type": "integer", "minimum": 1},
        "retrain_every": {"type": "integer", "minimum": 1},
        "models": {"type": "array", "items": MODEL_SCHEMA},
        "mlp": {"type": "object", "additionalProperties": False,
                "properties": {"epochs": {"type": "integer", "minimum": 1},
                               "learning_rate": {"type": "number", "exclusiveMinimum": 0}}},
        "rf": {"type": "object", "additionalProperties": False,
               "properties": {"n_estimators": {"type": "integer", "minimum": 1}}},
        "svr": {"type": "object", "additionalProperties": False,
                "properties": {"tol": {"type": "number", "exclusiveMinimum": 0},
                               "max_iter": {"type": "integer", "minimum": 1},
                               "cache_mb": {"type": "number", "exclusiveMinimum": 0}}},
        "ensemble_mode": {"enum": ["mean", "rank"]},
        "seed": {"type": "integer", "minimum": 0},
        "threads": {"type": "integer", "minimum": 1},
        "out": {"type": "string"},
    },
    "oneOf": [{"required": ["panel"]}, {"required": ["synth"]}],
}

SYNTH_CMD_SCHEMA = {
    "type": "object", "additionalProperties": False,
    "properties": {"synth": SYNTH_SCHEMA, "out": {"type": "string"}},
}

DEFAULTS = {
    "train_window": 120,
    "retrain_every": 1,
    "mlp": {"epochs": 100, "learning_rate": 1e-3},
    "rf": {"n_estimators": 1000},
    "svr": {"tol": 1e-3, "max_iter": 1_000_000, "cache_mb": 1024.0},
    "ensemble_mode": "mean",
    "seed": 0,
    "threads": 1,
}


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def validate(doc: dict, schema: dict = RUN_SCHEMA) -> None:
    validator = jsonschema.Draft7Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = jsonschema.exceptions.best_match(errors)
        raise ConfigError(_pointer(e.absolute_path), e.message)


def load_json(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError("", f"cannot read config {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise ConfigError("", f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from None
    if not isinstance(doc, dict):
        raise ConfigError("", "config must be a JSON object")
    return doc


@dataclass
class RunConfig:
    resolved: dict
    configs: list
    panel_path: Path | None
    synth: SynthConfig | None
    threads: int


_RF_NAME = re.compile(r"^RF_F(\d+)_D(\d+)$")
_SVR_NAME = re.compile(r"^SVR_C([0-9.eE+-]+)_G([0-9.eE+-]+)_E([0-9.eE+-]+)$")


def _expand_name(name: str, doc: dict, pointer: str) -> list:
    mcfg, rcfg, scfg = doc["mlp"], doc["rf"], doc["svr"]
    mk_mlp = lambda arch: MlpSpec(arch, mcfg["epochs"], mcfg["learning_rate"])  # noqa: E731
    mk_rf = lambda h: replace(h, n_estimators=rcfg["n_estimators"])  # noqa: E731
    mk_svr = lambda h: replace(h, tol=scfg["tol"], max_iter=scfg["max_iter"],  # noqa: E731
                               cache_mb=float(scfg["cache_mb"]))
    key = name.strip()
    upper = key.upper()
    if upper == "MLP_ALL":
        return [mk_mlp(a) for a in mlp.PRESETS.values()]
    if upper == "RF_GRID":
        return [mk_rf(h) for h in rf.RF_GRID]
    if upper == "SVR_GRID":
        return [mk_svr(h) for h in svr.SVR_GRID]
    if upper == "RF_BEST":
        return [mk_rf(rf.RF_BEST)]
    if upper == "SVR_BEST":
        return [mk_svr(svr.SVR_BEST)]
    if key in mlp.PRESETS:
        return [mk_mlp(mlp.PRESETS[key])]
    m = _RF_NAME.match(key)
    if m:
        return [mk_rf(rf.ForestHyper(int(m.group(1)), int(m.group(2))))]
    m = _SVR_NAME.match(key)
    if m:
        try:
            return [mk_svr(svr.SvrHyper(float(m.group(1)), float(m.group(2)), float(m.group(3))))]
        except ValueError as e:
            raise ConfigError(pointer, str(e)) from None
    if key.lower().startswith("ensemble:"):
        inner = key.split(":", 1)[1].strip()
        if not (inner.startswith("[") and inner.endswith("]")):
            raise ConfigError(pointer, "ensemble syntax is ensemble:[A,B,...]")
        names = [x.strip() for x in inner[1:-1].split(",") if x.strip()]
        return [_ensemble(names, doc["ensemble_mode"], "Ensemble", doc, pointer)]
    raise ConfigError(pointer, f"unknown model {name!r}")


def _ensemble(names, mode, label, doc, pointer):
    members = []
    for n in names:
        members.extend(_expand_name(n, doc, pointer))
    if len(members) < 2:
        raise ConfigError(pointer, "an ensemble needs at least two members")
    if any(isinstance(m, EnsembleSpec) for m in members):
        raise ConfigError(pointer, "ensembles cannot be nested")
    return EnsembleSpec(tuple(members), mode, label)


def _expand_model(entry, doc: dict, pointer: str) -> list:
    if isinstance(entry, str):
        return _expand_name(entry, doc, pointer)
    if "rf" in entry:
        o = entry["rf"]
        return [rf.ForestHyper(o["max_features"], o["max_depth"],
                               o.get("n_estimators", doc["rf"]["n_estimators"]))]
    if "svr" in entry:
        o = entry["svr"]
        s = doc["svr"]
        return [svr.SvrHyper(o["C"], o["gamma"], o["epsilon"], s["tol"], s["max_iter"],
                             float(s["cache_mb"]))]
    if "mlp" in entry:
        o = entry["mlp"]
        arch = mlp.ArchitectureSpec(o["name"], tuple(o["hidden_sizes"]), o.get("dropout_rate", 0.0))
        return [MlpSpec(arch, doc["mlp"]["epochs"], doc["mlp"]["learning_rate"])]
    return [_ensemble(entry["ensemble"], entry.get("mode", doc["ensemble_mode"]),
                      entry.get("name", "Ensemble"), doc, pointer)]


def resolve(doc: dict, base_dir: Path | None = None, seed: int | None = None,
            threads: int | None = None) -> RunConfig:
    """Validate, fill defaults and expand the model list."""
    validate(doc)
    doc = copy.deepcopy(doc)
    doc.pop("out", None)
    for k, v in DEFAULTS.items():
        if isinstance(v, dict):
            doc[k] = {**v, **doc.get(k, {})}
        else:
            doc.setdefault(k, v)
    if seed is not None:
        doc["seed"] = seed
    if threads is not None:
        doc["threads"] = threads
    start, end = MonthId.parse(doc["eval_start"]), MonthId.parse(doc["eval_end"])
    if end < start:
        raise ConfigError("/eval_end", "eval_end is before eval_start")

    specs = []
    for k, entry in enumerate(doc["models"]):
        specs.extend(_expand_model(entry, doc, f"/models/{k}"))
    names = [s.name for s in specs]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ConfigError("/models", f"duplicate model names {dupes}")

    synth = None
    panel_path = None
    if "synth" in doc:
        synth = SynthConfig(**doc["synth"])
        doc["synth"] = synth.to_dict()
    else:
        panel_path = Path(doc["panel"])
        if base_dir is not None and not panel_path.is_absolute():
            panel_path = base_dir / panel_path

    configs = [WalkForwardConfig(s, start, end, doc["train_window"], doc["retrain_every"],
                                 doc["seed"]) for s in specs]
    # threads only changes scheduling, never results, so it stays out of the echo
    resolved = {k: doc[k] for k in sorted(doc) if k not in ("models", "threads")}
    resolved["models"] = [spec_to_dict(s) for s in specs]
    return RunConfig(resolved, configs, panel_path, synth, doc["threads"])
