"""
RunConfig: everything one reproducible run needs, loaded from a JSON file
with optional key=value overrides.
"""

import json
import logging
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Sequence, Union

import pydantic
from pydantic import BaseModel, ConfigDict, Field, model_validator

from mldgg.core.errors import ValidationError
from mldgg.data.graphdata import SbmDomainConfig, ScenarioSpec
from mldgg.data.scenarios import build_suite
from mldgg.training.metaloop import AblationMode, TrainConfig

logger = logging.getLogger(__name__)

DEFAULT_EVAL_STEPS = [1, 5, 10, 20, 30, 40]
DEFAULT_MIX_VALUES = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]


class AblationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    modes: List[AblationMode] = Field(default_factory=lambda: list(AblationMode))
    seeds: List[int] = Field(default_factory=lambda: [0])
    mix_values: List[Annotated[float, Field(ge=0.0, le=1.0)]] = Field(
        default_factory=lambda: list(DEFAULT_MIX_VALUES), min_length=1
    )


class RunConfig(BaseModel):
    """Data, scenario, training and evaluation settings of one run"""

    model_config = ConfigDict(extra="forbid")

    seed: int = Field(0, ge=0)
    out_dir: str = "runs/default"
    graph_dir: Optional[str] = None
    data_name: str = "Synthetic"
    suite: Optional[Literal["S1T1", "S1T2", "S12T3"]] = "S12T3"
    nodes_per_domain: int = Field(100, ge=1)
    scenario: Optional[ScenarioSpec] = None
    domains: List[SbmDomainConfig] = Field(default_factory=list)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval_steps: List[int] = Field(default_factory=lambda: list(DEFAULT_EVAL_STEPS))
    ablation: AblationConfig = Field(default_factory=AblationConfig)

    @model_validator(mode="after")
    def _expand_and_check(self):
        # An empty domain list is filled from the named suite
        if not self.domains and self.suite is not None:
            self.scenario, self.domains = build_suite(self.suite, self.seed, n=self.nodes_per_domain)
        if self.domains:
            names = [d.name for d in self.domains]
            if len(set(names)) != len(names):
                raise ValueError(f"domain names must be unique: {names}")
            if self.scenario is None:
                raise ValueError("a scenario is required when domains are listed")
            unknown = [d for d in self.scenario.sources + [self.scenario.target] if d not in names]
            if unknown:
                raise ValueError(f"scenario names unknown domains: {unknown}")
        if any(s < 0 for s in self.eval_steps):
            raise ValueError("eval_steps must be non-negative")
        return self

    @property
    def graph_path(self) -> Path:
        return Path(self.graph_dir) if self.graph_dir else Path(self.out_dir) / "graphs"

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2) + "\n"


def _set_path(data: Dict[str, Any], dotted: str, raw: str):
    """Assign raw (parsed as JSON when possible) at a dotted key path"""
    keys = dotted.split(".")
    node = data
    for key in keys[:-1]:
        child = node.get(key)
        if child is None:
            child = node[key] = {}
        if not isinstance(child, dict):
            raise ValidationError(f"cannot override '{dotted}': '{key}' is not a section")
        node = child
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node[keys[-1]] = value


def _first_error(error: pydantic.ValidationError) -> str:
    first = error.errors()[0]
    location = ".".join(str(part) for part in first["loc"]) or "<root>"
    return f"{location}: {first['msg']}"


def parse_run_config(data: Dict[str, Any], overrides: Sequence[str] = ()) -> RunConfig:
    data = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"override '{item}' is not of the form key=value")
        key, raw = item.split("=", 1)
        _set_path(data, key.strip(), raw.strip())
    try:
        return RunConfig.model_validate(data)
    except pydantic.ValidationError as e:
        raise ValidationError(f"invalid run config: {_first_error(e)}") from None


def load_run_config(path: Optional[Union[str, Path]] = None, overrides: Sequence[str] = ()) -> RunConfig:
    """Read a config file (or start from defaults) and apply key=value overrides"""
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ValidationError(f"config file {path} is not valid JSON: {e}") from None
        if not isinstance(data, dict):
            raise ValidationError(f"config file {path} must hold an object")
    return parse_run_config(data, overrides)
