"""
Checkpoint files: the training config, the epoch counter, the layout
needed to rebuild an empty state and every parameter as shape + flat values.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import pydantic
import torch
from pydantic import BaseModel, ConfigDict

from mldgg.core.errors import CheckpointError
from mldgg.core.numcore import DTYPE
from mldgg.training.metaloop import MetaState, TrainConfig, blank_state

logger = logging.getLogger(__name__)


class StoredParam(BaseModel):
    model_config = ConfigDict(extra="forbid")

    shape: List[int]
    values: List[float]


class CheckpointLayout(BaseModel):
    model_config = ConfigDict(extra="forbid")

    domains: List[str]
    num_features: int
    num_classes: int


class CheckpointFile(BaseModel):
    """On-disk checkpoint schema"""

    model_config = ConfigDict(extra="forbid")

    config: Dict[str, Any]
    train: TrainConfig
    epoch: int
    layout: CheckpointLayout
    params: Dict[str, StoredParam]


def flatten_state(state: MetaState) -> Dict[str, torch.Tensor]:
    """prefix.param_name -> tensor for every parameter in the state"""
    return {
        f"{prefix}.{p.name}": p.value.detach()
        for prefix, group in state.named_groups().items()
        for p in group
    }


def save_checkpoint(path: Union[str, Path], state: MetaState, cfg: TrainConfig, domains: List[str],
                    config: Optional[Dict[str, Any]] = None):
    """Write the state, its train config and the run config that produced it"""
    record = CheckpointFile(
        config=config or {},
        train=cfg,
        epoch=state.epoch,
        layout=CheckpointLayout(
            domains=list(domains),
            num_features=state.struct.w_hat.shape[0],
            num_classes=state.rep.num_classes,
        ),
        params={
            name: StoredParam(shape=list(value.shape), values=value.reshape(-1).tolist())
            for name, value in flatten_state(state).items()
        },
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record.model_dump(mode="json"), indent=1) + "\n")
    logger.info("saved checkpoint at epoch %d to %s", state.epoch, path)


def load_checkpoint(path: Union[str, Path], cfg: Optional[TrainConfig] = None) -> Tuple[MetaState, TrainConfig]:
    """
    Rebuild a MetaState from a checkpoint.

    With cfg given the state is laid out by cfg instead of the stored train
    config, so any mismatch in shapes or parameter names is reported.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    try:
        record = CheckpointFile.model_validate_json(path.read_text())
    except pydantic.ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"]) or "<root>"
        raise CheckpointError(f"malformed checkpoint {path}: {location}: {first['msg']}") from None

    cfg = cfg or record.train
    layout = record.layout
    state = blank_state(layout.domains, layout.num_features, layout.num_classes, cfg)
    expected = flatten_state(state)

    missing = sorted(set(expected) - set(record.params))
    extra = sorted(set(record.params) - set(expected))
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {missing}")
    if extra:
        raise CheckpointError(f"checkpoint has unknown parameters: {extra}")

    loaded = {}
    for name, template in expected.items():
        stored = record.params[name]
        if tuple(stored.shape) != tuple(template.shape):
            raise CheckpointError(f"shape mismatch for {name}: file {stored.shape}, model {list(template.shape)}")
        if len(stored.values) != template.numel():
            raise CheckpointError(f"{name}: {len(stored.values)} values for shape {stored.shape}")
        loaded[name] = torch.tensor(stored.values, dtype=DTYPE).reshape(template.shape)

    for prefix, group in state.named_groups().items():
        replaced = group.replace({p.name: loaded[f"{prefix}.{p.name}"] for p in group}).detach()
        _assign(state, prefix, replaced)
    state.epoch = record.epoch
    return state, cfg


def _assign(state: MetaState, prefix: str, group):
    if prefix in ("struct", "rep", "head"):
        setattr(state, prefix, group)
    elif prefix.startswith("gnn."):
        state.gnns[prefix[len("gnn."):]] = group
    else:
        domain, part = prefix[len("copy."):].rsplit(".", 1)
        copy = state.task_copies[domain]
        state.task_copies[domain] = copy.with_groups({part: group, "gnn": state.gnns[domain]})


def checkpoint_config(path: Union[str, Path]) -> Dict[str, Any]:
    """The run config stored alongside a checkpoint"""
    return json.loads(Path(path).read_text()).get("config", {})
