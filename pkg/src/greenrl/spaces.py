"""Observation/action vector layout, bounds, normalization and clipping.

The layout is loaded from ``assets/spacespec.json``. Vectors are the
concatenation of the blocks in file order; 24-dim blocks hold the hourly
values of one day (hour 0 first). The first 52 observation components echo
the action that was applied on the day the observation describes.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

SPACESPEC_FORMAT = "greenrl.spacespec"
SPACESPEC_VERSION = 1


class SpaceError(ValueError):
    """Raised for dimension mismatches and out-of-bounds vectors."""


@dataclass(frozen=True)
class VariableBlock:
    name: str
    min: float
    max: float
    dim: int

    def __post_init__(self):
        if not self.min < self.max:
            raise SpaceError(f"block {self.name!r}: min {self.min} must be < max {self.max}")
        if self.dim not in (1, 24):
            raise SpaceError(f"block {self.name!r}: dim must be 1 or 24, got {self.dim}")


@dataclass(frozen=True)
class SpaceSpec:
    name: str
    blocks: tuple[VariableBlock, ...]
    lower: np.ndarray = field(init=False, repr=False, compare=False)
    upper: np.ndarray = field(init=False, repr=False, compare=False)
    _offsets: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        lower, upper, offsets = [], [], {}
        start = 0
        for block in self.blocks:
            if block.name in offsets:
                raise SpaceError(f"duplicate block name {block.name!r}")
            offsets[block.name] = slice(start, start + block.dim)
            lower += [block.min] * block.dim
            upper += [block.max] * block.dim
            start += block.dim
        lo = np.array(lower, dtype=np.float64)
        hi = np.array(upper, dtype=np.float64)
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "_offsets", offsets)

    @property
    def total_dim(self) -> int:
        return int(sum(b.dim for b in self.blocks))

    @property
    def span(self) -> np.ndarray:
        return self.upper - self.lower

    def slice(self, name: str) -> slice:
        """Index range of block ``name`` inside the flat vector."""
        try:
            return self._offsets[name]
        except KeyError:
            raise KeyError(f"{self.name} space has no block {name!r}") from None

    def block(self, name: str) -> VariableBlock:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(f"{self.name} space has no block {name!r}")

    def to_dict(self) -> list[dict]:
        return [dict(name=b.name, min=b.min, max=b.max, dim=b.dim) for b in self.blocks]


def _document(observation: SpaceSpec, action: SpaceSpec) -> dict:
    return {
        "format": SPACESPEC_FORMAT,
        "version": SPACESPEC_VERSION,
        "layout": "blocks concatenated in listed order; 24-dim blocks are hour 0..23",
        "spaces": {"observation": observation.to_dict(), "action": action.to_dict()},
    }


def spaces_from_json(text: str) -> tuple[SpaceSpec, SpaceSpec]:
    doc = json.loads(text)
    if doc.get("format") != SPACESPEC_FORMAT:
        raise SpaceError(f"not a spacespec document (format={doc.get('format')!r})")
    if doc.get("version") != SPACESPEC_VERSION:
        raise SpaceError(f"unsupported spacespec version {doc.get('version')!r}")
    specs = []
    for key in ("observation", "action"):
        blocks = tuple(
            VariableBlock(b["name"], float(b["min"]), float(b["max"]), int(b["dim"]))
            for b in doc["spaces"][key]
        )
        specs.append(SpaceSpec(key, blocks))
    return specs[0], specs[1]


def spaces_to_json(observation: SpaceSpec, action: SpaceSpec) -> str:
    return json.dumps(_document(observation, action), indent=2, sort_keys=True) + "\n"


def spacespec_hash(observation: SpaceSpec | None = None, action: SpaceSpec | None = None) -> str:
    """SHA-256 of the canonical JSON form; logs and checkpoints reference this."""
    observation = observation or OBSERVATION_SPACE
    action = action or ACTION_SPACE
    canonical = json.dumps(_document(observation, action), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _load_default():
    text = resources.files("greenrl").joinpath("assets/spacespec.json").read_text()
    return spaces_from_json(text)


OBSERVATION_SPACE, ACTION_SPACE = _load_default()
OBS_DIM = OBSERVATION_SPACE.total_dim
ACT_DIM = ACTION_SPACE.total_dim


def _check_dim(v: np.ndarray, spec: SpaceSpec):
    if v.ndim == 0 or v.shape[-1] != spec.total_dim:
        raise SpaceError(
            f"{spec.name} vector must have {spec.total_dim} components, got shape {v.shape}"
        )


def _tolerance(spec: SpaceSpec) -> np.ndarray:
    return 1e-9 * spec.span


def within_bounds(v, spec: SpaceSpec) -> bool:
    """True when every component lies in its block's closed [min, max]."""
    v = np.asarray(v, dtype=np.float64)
    _check_dim(v, spec)
    tol = _tolerance(spec)
    return bool(np.all(v >= spec.lower - tol) and np.all(v <= spec.upper + tol) and np.all(np.isfinite(v)))


def check_bounds(v, spec: SpaceSpec):
    v = np.asarray(v, dtype=np.float64)
    _check_dim(v, spec)
    tol = _tolerance(spec)
    bad = ~((v >= spec.lower - tol) & (v <= spec.upper + tol))
    if np.any(bad):
        idx = int(np.flatnonzero(bad.reshape(-1, spec.total_dim).any(axis=0))[0])
        name = _block_at(spec, idx)
        raise SpaceError(
            f"{spec.name} component {idx} ({name}) outside "
            f"[{spec.lower[idx]}, {spec.upper[idx]}]"
        )


def _block_at(spec: SpaceSpec, idx: int) -> str:
    for b in spec.blocks:
        s = spec.slice(b.name)
        if s.start <= idx < s.stop:
            return b.name
    return "?"


def clip_to_bounds(v, spec: SpaceSpec) -> np.ndarray:
    """Project ``v`` (shape ``(..., total_dim)``) onto the box of valid values."""
    v = np.asarray(v, dtype=np.float64)
    _check_dim(v, spec)
    return np.clip(v, spec.lower, spec.upper)


def normalize(v, spec: SpaceSpec, check: bool = True) -> np.ndarray:
    """Affine map of each component from [min, max] onto [-1, 1]."""
    v = np.asarray(v, dtype=np.float64)
    if check:
        check_bounds(v, spec)
    else:
        _check_dim(v, spec)
    return (v - spec.lower) / spec.span * 2.0 - 1.0


def denormalize(u, spec: SpaceSpec, check: bool = True) -> np.ndarray:
    """Inverse of :func:`normalize`."""
    u = np.asarray(u, dtype=np.float64)
    _check_dim(u, spec)
    if check and (np.any(u < -1.0 - 1e-9) or np.any(u > 1.0 + 1e-9)):
        raise SpaceError(f"normalized {spec.name} vector has components outside [-1, 1]")
    return spec.lower + (u + 1.0) * 0.5 * spec.span
