"""
Configuration file loading.

Precedence: command-line flag > config file > built-in default. The file is
YAML with four optional sections; see config.example.yaml for every key.

  sim:         dt, max_t, collision_radius, goal_tol, seed
  apf:         k_att, k_rep, rho0, force_cap
  deflection:  r_imp, k_impF, soft_scale
  perception:  endpoint, timeout
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from errors import ConfigError
from impedance import DeflectionConstants
from perception import DEFAULT_TIMEOUT
from planner import ApfConfig
from swarm_sim import SimConfig

PROJECT_ROOT = Path(__file__).parent.parent
DATA_DIR = PROJECT_ROOT / "data"
SCENARIO_DIR = DATA_DIR / "scenarios"
BUNDLED_DIR = SCENARIO_DIR / "bundled"
DB_PATH = DATA_DIR / "impedance_db.json"
OUTPUT_DIR = PROJECT_ROOT / "output"


@dataclass(frozen=True)
class PerceptionSettings:
    endpoint: str | None = None
    timeout: float = DEFAULT_TIMEOUT

    def __post_init__(self):
        if not self.timeout > 0:
            raise ValueError(f"timeout must be positive, got {self.timeout}")


@dataclass(frozen=True)
class AppConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    perception: PerceptionSettings = field(default_factory=PerceptionSettings)

    def with_overrides(self, seed: int | None = None, max_t: float | None = None,
                       endpoint: str | None = None) -> "AppConfig":
        sim, perception = self.sim, self.perception
        if seed is not None:
            sim = replace(sim, seed=seed)
        if max_t is not None:
            sim = replace(sim, max_t=max_t)
        if endpoint is not None:
            perception = replace(perception, endpoint=endpoint)
        return AppConfig(sim, perception)


_SIM_KEYS = {"dt", "max_t", "collision_radius", "goal_tol", "seed"}
_SECTIONS = {
    "sim": _SIM_KEYS,
    "apf": {f.name for f in fields(ApfConfig)},
    "deflection": {f.name for f in fields(DeflectionConstants)},
    "perception": {f.name for f in fields(PerceptionSettings)},
}


def _section(data: dict, name: str, issues: list[tuple[str, str]]) -> dict:
    values = data.get(name) or {}
    if not isinstance(values, dict):
        issues.append((name, "expected a mapping"))
        return {}
    for key in sorted(set(values) - _SECTIONS[name]):
        issues.append((f"{name}.{key}", "unknown key"))
    return {k: v for k, v in values.items() if k in _SECTIONS[name]}


def load_config(path: Path | None = None) -> AppConfig:
    if path is None:
        return AppConfig()
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise ConfigError([("file", f"invalid YAML: {e}")], str(path)) from e
    if not isinstance(data, dict):
        raise ConfigError([("file", "expected a mapping of sections")], str(path))

    issues = [(key, "unknown section") for key in sorted(set(data) - set(_SECTIONS))]
    sections = {name: _section(data, name, issues) for name in _SECTIONS}
    if issues:
        raise ConfigError(issues, str(path))

    try:
        apf = ApfConfig(**sections["apf"])
        deflection = DeflectionConstants(**sections["deflection"])
        sim = SimConfig(**sections["sim"], apf=apf, deflection=deflection)
        perception = PerceptionSettings(**sections["perception"])
    except (TypeError, ValueError) as e:
        raise ConfigError([("values", str(e))], str(path)) from e
    return AppConfig(sim, perception)
