"""
Dense numerics, seeded randomness and the finite-difference harness.

Every matrix in the package is a float64 torch tensor. Parameters live in
DiffParam / ParamGroup containers so that MAML can build adapted copies
functionally (theta' = theta - lr * grad) without touching the originals.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Iterator, List, Mapping, Sequence, Tuple, TypeVar, Union

import numpy as np
import torch

from mldgg.core.errors import NumericsError, ValidationError

logger = logging.getLogger(__name__)

DTYPE = torch.float64

DenseMatrix = torch.Tensor

G = TypeVar("G", bound="ParamGroup")

# Denominator floor of the relative gradient error
GRAD_FLOOR = 1e-8

# Differences within this many ulps of the loss, scaled by 1/epsilon, count as exact
ROUND_OFF_ULPS = 8.0


def as_matrix(values, rows: int = None, cols: int = None) -> DenseMatrix:
    """Convert nested lists / arrays to a float64 tensor, optionally checking the shape"""
    matrix = torch.as_tensor(np.asarray(values, dtype=np.float64), dtype=DTYPE)
    if rows is not None and matrix.shape[0] != rows:
        raise ValidationError(f"expected {rows} rows, got {matrix.shape[0]}")
    if cols is not None and (matrix.dim() < 2 or matrix.shape[1] != cols):
        raise ValidationError(f"expected {cols} columns, got shape {tuple(matrix.shape)}")
    return matrix


def check_finite(tensor: torch.Tensor, what: str) -> torch.Tensor:
    """Raise if any entry is NaN or infinite"""
    if not torch.isfinite(tensor).all():
        raise NumericsError(f"{what} contains non-finite entries")
    return tensor


def logsumexp(values: Union[Sequence[float], torch.Tensor]) -> float:
    """log(sum(exp(v))) with the max-shift trick"""
    v = torch.as_tensor(values, dtype=DTYPE).reshape(-1)
    if v.numel() == 0:
        raise NumericsError("empty vector")
    check_finite(v, "logsumexp input")
    m = torch.max(v)
    return float(m + torch.log(torch.sum(torch.exp(v - m))))


def stable_sigmoid(x):
    """Logistic function that never overflows; accepts floats or tensors"""
    if isinstance(x, torch.Tensor):
        return torch.sigmoid(x)
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


class SeededRng:
    """Counter-based splittable generator (Philox keyed by seed and stream path)"""

    def __init__(self, seed: int, stream: Tuple[int, ...] = ()):
        if not 0 <= int(seed) < 2 ** 64:
            raise ValidationError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)
        self._generator = None

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, stream={self.stream})"

    @property
    def stream_id(self) -> int:
        """64-bit identifier of this stream"""
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        return int(sequence.generate_state(1, np.uint64)[0])

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            sequence = np.random.SeedSequence(self.seed, spawn_key=self.stream)
            self._generator = np.random.Generator(np.random.Philox(sequence))
        return self._generator

    def child(self, index: int) -> "SeededRng":
        """Independent sub-stream identified by index"""
        return SeededRng(self.seed, self.stream + (index,))

    def split(self, k: int) -> List["SeededRng"]:
        """k pairwise independent sub-streams"""
        return [self.child(i) for i in range(k)]

    def normal(self, *shape: int) -> torch.Tensor:
        return torch.as_tensor(self.generator.standard_normal(shape), dtype=DTYPE)

    def uniform(self, *shape: int) -> torch.Tensor:
        return torch.as_tensor(self.generator.random(shape), dtype=DTYPE)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def integers(self, low: int, high: int, size=None):
        return self.generator.integers(low, high, size=size)


def glorot_uniform(fan_in: int, fan_out: int, rng: SeededRng) -> torch.Tensor:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out))"""
    # drawn from the seeded stream, never from torch.nn.init and the global torch generator
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return (rng.uniform(fan_in, fan_out) * 2.0 - 1.0) * bound


@dataclass
class DiffParam:
    """A named parameter tensor; its gradient accumulates on the tensor itself"""

    name: str
    value: torch.Tensor

    @classmethod
    def leaf(cls, name: str, value) -> "DiffParam":
        tensor = torch.as_tensor(value, dtype=DTYPE).detach().clone()
        return cls(name, tensor.requires_grad_(True))

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.value.shape)

    @property
    def grad(self) -> torch.Tensor:
        if self.value.grad is None:
            return torch.zeros_like(self.value)
        return self.value.grad

    def zero_grad(self):
        self.value.grad = None


class ParamGroup:
    """Ordered collection of uniquely named DiffParams"""

    def __init__(self, params: Iterable[DiffParam] = ()):
        self._params: Dict[str, DiffParam] = {}
        for param in params:
            if param.name in self._params:
                raise ValidationError(f"duplicate parameter name '{param.name}'")
            self._params[param.name] = param

    @classmethod
    def from_tensors(cls: type, tensors: Mapping[str, torch.Tensor]) -> G:
        return cls(DiffParam.leaf(name, value) for name, value in tensors.items())

    def __iter__(self) -> Iterator[DiffParam]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> DiffParam:
        try:
            return self._params[name]
        except KeyError:
            raise ValidationError(f"unknown parameter '{name}'") from None

    def __repr__(self):
        shapes = ", ".join(f"{p.name}{list(p.shape)}" for p in self)
        return f"{type(self).__name__}({shapes})"

    def names(self) -> List[str]:
        return list(self._params)

    def tensors(self) -> List[torch.Tensor]:
        return [p.value for p in self]

    def state(self) -> Dict[str, torch.Tensor]:
        return {p.name: p.value for p in self}

    def value(self, name: str) -> torch.Tensor:
        return self[name].value

    def numel(self) -> int:
        return sum(p.value.numel() for p in self)

    def _rebuild(self: G, params: Iterable[DiffParam]) -> G:
        return type(self)(params)

    def map(self: G, fn: Callable[[DiffParam], torch.Tensor]) -> G:
        """New group of the same type whose tensors are fn(param)"""
        return self._rebuild(DiffParam(p.name, fn(p)) for p in self)

    def replace(self: G, updates: Mapping[str, torch.Tensor]) -> G:
        """New group with the named tensors swapped in"""
        unknown = set(updates) - set(self._params)
        if unknown:
            raise ValidationError(f"unknown parameters: {sorted(unknown)}")
        return self.map(lambda p: updates.get(p.name, p.value))

    def detach(self: G) -> G:
        """Fresh leaf copies, cut from any autograd history"""
        return self.map(lambda p: p.value.detach().clone().requires_grad_(True))

    def clone(self: G) -> G:
        return self.detach()

    def zero_grads(self):
        for param in self:
            param.zero_grad()


def autograd_grads(loss_fn: Callable[[ParamGroup], torch.Tensor], params: G) -> G:
    """Analytic gradients of loss_fn at params through torch autograd"""
    leaves = params.detach()
    loss = loss_fn(leaves)
    grads = dict(zip(leaves.names(), torch.autograd.grad(loss, leaves.tensors(), allow_unused=True)))
    return leaves.map(
        lambda p: torch.zeros_like(p.value) if grads[p.name] is None else grads[p.name].detach()
    )


def finite_diff_check(loss_fn: Callable[[ParamGroup], float], params: ParamGroup,
                      analytic_grads: Union[ParamGroup, Mapping[str, torch.Tensor]],
                      epsilon: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences"""
    if not 0.0 < epsilon <= 1e-2:
        raise ValidationError(f"epsilon must lie in (0, 1e-2], got {epsilon}")
    if isinstance(analytic_grads, ParamGroup):
        analytic = analytic_grads.state()
    else:
        analytic = dict(analytic_grads)

    trial = params.map(lambda p: p.value.detach().clone())

    def evaluate() -> float:
        with torch.no_grad():
            return float(loss_fn(trial))

    first, second = evaluate(), evaluate()
    if first != second:
        raise NumericsError("loss not reproducible")
    # central differences cannot resolve gradients below this
    round_off = ROUND_OFF_ULPS * torch.finfo(DTYPE).eps * max(1.0, abs(first)) / epsilon

    worst = 0.0
    for param in trial:
        if param.name not in analytic:
            raise ValidationError(f"no analytic gradient for '{param.name}'")
        expected = analytic[param.name].detach().reshape(-1)
        flat = param.value.view(-1)
        if expected.numel() != flat.numel():
            raise ValidationError(f"gradient shape mismatch for '{param.name}'")
        for i in range(flat.numel()):
            original = flat[i].item()
            flat[i] = original + epsilon
            plus = evaluate()
            flat[i] = original - epsilon
            minus = evaluate()
            flat[i] = original
            numeric = (plus - minus) / (2.0 * epsilon)
            a = expected[i].item()
            gap = abs(a - numeric)
            error = 0.0 if gap <= round_off else gap / max(GRAD_FLOOR, abs(a) + abs(numeric))
            worst = max(worst, error)
    logger.debug("finite difference check over %d params: max rel error %.3e", trial.numel(), worst)
    return worst
