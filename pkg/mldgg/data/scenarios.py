"""
Synthetic multi-domain suites.

A family fixes the feature dimension, the class count and the base class
means; domains of a family differ by a feature-mean offset, block
probabilities and a rewiring fraction.
"""

import logging
from typing import Dict, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from mldgg.core.errors import ValidationError
from mldgg.core.numcore import SeededRng
from mldgg.data.graphdata import SbmDomainConfig, ScenarioSpec

logger = logging.getLogger(__name__)


class DomainFamily(BaseModel):
    """Shared layout of the domains generated from one dataset-like family"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    feature_dim: int = Field(ge=1)
    num_classes: int = Field(ge=1)
    separation: float = Field(2.0, gt=0.0)
    index: int = Field(0, ge=0)


FAMILIES: Dict[str, DomainFamily] = {
    "alpha": DomainFamily(name="alpha", feature_dim=8, num_classes=3, index=0),
    "beta": DomainFamily(name="beta", feature_dim=6, num_classes=2, index=1),
    "gamma": DomainFamily(name="gamma", feature_dim=10, num_classes=3, index=2),
}

# Per-domain knobs: (feature-mean offset, p_in, p_out, rewire fraction)
SOURCE_KNOBS = [
    (0.0, 0.10, 0.010, 0.00),
    (0.5, 0.12, 0.015, 0.05),
    (1.0, 0.08, 0.012, 0.10),
]
TARGET_KNOBS = (2.0, 0.09, 0.020, 0.15)


def family_means(family: DomainFamily, seed: int) -> np.ndarray:
    """Base class means of a family, fixed by the suite seed"""
    rng = SeededRng(seed).child(1000 + family.index)
    return family.separation * rng.generator.standard_normal((family.num_classes, family.feature_dim))


def shift_direction(family: DomainFamily, seed: int) -> np.ndarray:
    """Unit vector along which domains of a family drift"""
    rng = SeededRng(seed).child(2000 + family.index)
    direction = rng.generator.standard_normal(family.feature_dim)
    return direction / np.linalg.norm(direction)


def make_domain(family: DomainFamily, name: str, seed: int, offset: float, p_in: float,
                p_out: float, rewire: float, n: int = 100, noise_std: float = 1.0) -> SbmDomainConfig:
    """Domain config whose class means are the family means shifted by offset"""
    means = family_means(family, seed) + offset * shift_direction(family, seed)
    return SbmDomainConfig(
        name=name,
        n=n,
        num_classes=family.num_classes,
        feature_dim=family.feature_dim,
        class_means=means.tolist(),
        noise_std=noise_std,
        p_in=p_in,
        p_out=p_out,
        rewire_fraction=rewire,
    )


def _family_domains(family: DomainFamily, seed: int, count: int, n: int,
                    start: int = 0) -> List[SbmDomainConfig]:
    domains = []
    for i in range(count):
        offset, p_in, p_out, rewire = SOURCE_KNOBS[(start + i) % len(SOURCE_KNOBS)]
        domains.append(make_domain(family, f"{family.name}-{start + i}", seed, offset, p_in, p_out, rewire, n))
    return domains


def build_suite(mode: str, seed: int, n: int = 100,
                num_sources: int = 3) -> Tuple[ScenarioSpec, List[SbmDomainConfig]]:
    """Scenario plus domain configs for one of the S1T1 / S1T2 / S12T3 settings"""
    if num_sources < 1:
        raise ValidationError("a suite needs at least one source domain")
    offset, p_in, p_out, rewire = TARGET_KNOBS

    if mode == "S1T1":
        # Sources and target from one family
        family = FAMILIES["alpha"]
        sources = _family_domains(family, seed, num_sources, n)
        target = make_domain(family, f"{family.name}-target", seed, offset, p_in, p_out, rewire, n)
    elif mode == "S1T2":
        # Sources from one family, target from another with different D and C
        sources = _family_domains(FAMILIES["alpha"], seed, num_sources, n)
        family = FAMILIES["beta"]
        target = make_domain(family, f"{family.name}-target", seed, offset, p_in, p_out, rewire, n)
    elif mode == "S12T3":
        # Sources from two families, target from a third
        first = (num_sources + 1) // 2
        sources = _family_domains(FAMILIES["alpha"], seed, first, n)
        sources += _family_domains(FAMILIES["beta"], seed, num_sources - first, n)
        family = FAMILIES["gamma"]
        target = make_domain(family, f"{family.name}-target", seed, offset, p_in, p_out, rewire, n)
    else:
        raise ValidationError(f"unknown scenario mode '{mode}'")

    spec = ScenarioSpec(sources=[d.name for d in sources], target=target.name, mode=mode)
    logger.debug("built %s suite: sources=%s target=%s", mode, spec.sources, spec.target)
    return spec, sources + [target]


def shift_suite(levels: Sequence[float], seed: int, n: int = 100,
                num_sources: int = 3) -> Tuple[List[SbmDomainConfig], List[SbmDomainConfig]]:
    """Shared sources and one target per shift level, all from one family"""
    if not levels:
        raise ValidationError("shift_suite needs at least one level")
    family = FAMILIES["alpha"]
    sources = [
        make_domain(family, f"{family.name}-{i}", seed, 0.0, 0.10, 0.010, 0.0, n)
        for i in range(num_sources)
    ]
    targets = [
        make_domain(family, f"{family.name}-shift{i}", seed, float(level), 0.10, 0.010, 0.0, n)
        for i, level in enumerate(levels)
    ]
    return sources, targets


def leave_one_out(names: Sequence[str], mode: str = "S1T1") -> List[ScenarioSpec]:
    """One scenario per domain, holding it out as the target and training on the rest"""
    names = list(names)
    if len(names) < 2:
        raise ValidationError("leave-one-out needs at least two domains")
    if len(set(names)) != len(names):
        raise ValidationError(f"domain names must be unique: {names}")
    return [
        ScenarioSpec(sources=[n for n in names if n != held_out], target=held_out, mode=mode)
        for held_out in names
    ]
