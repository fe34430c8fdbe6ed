"""Parameter files: one YAML document with ``thermal``, ``heat_distribution``, ``hvac`` and ``ddpc`` sections."""
from __future__ import annotations

import copy
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigurationError
from .hvac import FloorWallTable, HvacParams, PidGains, RuleTable, StateThresholds, SubstateRule
from .sim import DECKS, PARTS, HeatDistribution, ThermalParams


@dataclass(frozen=True)
class SystemParams:
    thermal: ThermalParams
    distribution: HeatDistribution
    hvac: HvacParams
    ddpc: dict


def default_document() -> dict:
    text = resources.files("coachddpc").joinpath("data/default_params.yaml").read_text()
    return yaml.safe_load(text)


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def _by_node(section: dict, name: str) -> dict:
    try:
        return {f"{p}_{d}": float(section[p][d]) for p in PARTS for d in DECKS}
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"thermal.{name} must map every part/deck pair") from exc


def thermal_from_dict(doc: dict) -> ThermalParams:
    th = dict(doc)
    try:
        return ThermalParams(
            mass=_by_node(th.pop("mass"), "mass"),
            heat_capacity=_by_node(th.pop("heat_capacity"), "heat_capacity"),
            conv_coeff={k: float(v) for k, v in th.pop("conv_coeff").items()},
            cond_coeff={k: float(v) for k, v in th.pop("cond_coeff").items()},
            ext_conv_base={k: float(v) for k, v in th.pop("ext_conv_base").items()},
            ext_conv_speed_gain={k: float(v) for k, v in th.pop("ext_conv_speed_gain").items()},
            occupancy_split=tuple(float(x) for x in th.pop("occupancy_split", (1 / 3, 1 / 3, 1 / 3))),
            **{k: float(v) for k, v in th.items()},
        )
    except KeyError as exc:
        raise ConfigurationError(f"thermal section missing key {exc}") from exc
    except TypeError as exc:
        raise ConfigurationError(f"thermal section: {exc}") from exc


def hvac_from_dict(doc: dict) -> HvacParams:
    try:
        pid = doc["pid"]
        fw = doc["floor_wall"]
        return HvacParams(
            rule_table=RuleTable(tuple(tuple(p) for p in doc["rule_table"])),
            thresholds=StateThresholds(**doc.get("thresholds", {})),
            substate=SubstateRule(**doc.get("substate", {})),
            pid=PidGains(**{k: (None if v is None else np.asarray(v, dtype=float)) for k, v in pid.items()}),
            floor_wall=FloorWallTable(np.asarray(fw["maxima"], dtype=float), tuple(tuple(p) for p in fw["table"])),
        )
    except KeyError as exc:
        raise ConfigurationError(f"hvac section missing key {exc}") from exc


def params_from_document(doc: dict) -> SystemParams:
    for section in ("thermal", "heat_distribution", "hvac", "ddpc"):
        if section not in doc:
            raise ConfigurationError(f"parameter document lacks section {section!r}")
    lam = doc["heat_distribution"].get("lambda")
    if lam is None:
        raise ConfigurationError("heat_distribution.lambda is required")
    return SystemParams(
        thermal=thermal_from_dict(doc["thermal"]),
        distribution=HeatDistribution(np.asarray(lam, dtype=float)),
        hvac=hvac_from_dict(doc["hvac"]),
        ddpc=dict(doc["ddpc"]),
    )


def load_params(path: str | Path | None = None, overrides: dict | None = None) -> SystemParams:
    """Defaults, overlaid by the file at ``path`` and then by ``overrides``."""
    doc = default_document()
    if path is not None:
        with open(path) as fh:
            user = yaml.safe_load(fh) or {}
        if not isinstance(user, dict):
            raise ConfigurationError(f"{path}: top level must be a mapping")
        doc = _merge(doc, user)
    if overrides:
        doc = _merge(doc, overrides)
    return params_from_document(doc)


def thermal_to_dict(p: ThermalParams) -> dict:
    split = lambda m: {part: {d: float(m[f"{part}_{d}"]) for d in DECKS} for part in PARTS}  # noqa: E731
    out = {
        "mass": split(p.mass),
        "heat_capacity": split(p.heat_capacity),
        "conv_coeff": {k: float(v) for k, v in p.conv_coeff.items()},
        "cond_coeff": {k: float(v) for k, v in p.cond_coeff.items()},
        "ext_conv_base": {k: float(v) for k, v in p.ext_conv_base.items()},
        "ext_conv_speed_gain": {k: float(v) for k, v in p.ext_conv_speed_gain.items()},
        "occupancy_split": [float(x) for x in p.occupancy_split],
    }
    for name in ("window_gain_top", "window_gain_side", "ground_emis_coeff", "door_coeff", "occupant_power",
                 "max_capacity", "track_temp_slope", "track_temp_offset", "ground_threshold", "vent_coeff"):
        out[name] = float(getattr(p, name))
    return out


def dump_params(params: SystemParams, path: str | Path) -> None:
    h = params.hvac
    doc = {
        "thermal": thermal_to_dict(params.thermal),
        "heat_distribution": {"lambda": params.distribution.lam.tolist()},
        "hvac": {
            "rule_table": [list(p) for p in h.rule_table.breakpoints],
            "thresholds": vars(h.thresholds).copy(),
            "substate": vars(h.substate).copy(),
            "pid": {k: getattr(h.pid, k).tolist() for k in ("kp", "ki", "kd", "q_min", "q_max", "rate_limit", "aw_gain")},
            "floor_wall": {"maxima": h.floor_wall.maxima.tolist(), "table": [list(p) for p in h.floor_wall.breakpoints]},
        },
        "ddpc": dict(params.ddpc),
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


