"""Shared domain types: convolution shapes, machine descriptions, tensors.

Layer and machine descriptions are plain frozen dataclasses loaded from JSON
files, so a corpus of shapes stays human-editable and diff-friendly.  All
types here are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

# NCHW (batch 1) float32 tensors are plain contiguous ndarrays:
# Tensor3 has shape (channels, height, width), Tensor4 (filters, channels, h, w).
Tensor3 = np.ndarray
Tensor4 = np.ndarray


class LayerSpecError(ValueError):
    """A layer record is malformed or violates a shape invariant."""


class MachineSpecError(ValueError):
    """A machine description is malformed or inconsistent."""


@dataclass(frozen=True)
class ConvShape:
    """Dimensions of one convolution layer.

    in_c, in_h, in_w: input channels / height / width
    out_c:            number of filters (output channels)
    f_h, f_w:         filter height / width
    stride_h/w:       strides, >= 1
    pad_h/w:          zero padding added to both sides, >= 0
    dt_bytes:         element width in bytes (4 for float32)
    name:             optional tag, e.g. the source model layer
    """

    in_c: int
    in_h: int
    in_w: int
    out_c: int
    f_h: int
    f_w: int
    stride_h: int = 1
    stride_w: int = 1
    pad_h: int = 0
    pad_w: int = 0
    dt_bytes: int = 4
    name: str = ""

    def __post_init__(self):
        for fname in ("in_c", "in_h", "in_w", "out_c", "f_h", "f_w",
                      "stride_h", "stride_w", "dt_bytes"):
            if int(getattr(self, fname)) < 1:
                raise LayerSpecError(f"{fname} must be positive, got {getattr(self, fname)}")
        for fname in ("pad_h", "pad_w"):
            if int(getattr(self, fname)) < 0:
                raise LayerSpecError(f"{fname} must be non-negative, got {getattr(self, fname)}")
        if self.in_h + 2 * self.pad_h < self.f_h:
            raise LayerSpecError(
                f"f_h={self.f_h} exceeds padded input height {self.in_h + 2 * self.pad_h}:"
                " no window fits")
        if self.in_w + 2 * self.pad_w < self.f_w:
            raise LayerSpecError(
                f"f_w={self.f_w} exceeds padded input width {self.in_w + 2 * self.pad_w}:"
                " no window fits")

    @property
    def out_h(self) -> int:
        return (self.in_h + 2 * self.pad_h - self.f_h) // self.stride_h + 1

    @property
    def out_w(self) -> int:
        return (self.in_w + 2 * self.pad_w - self.f_w) // self.stride_w + 1

    @property
    def out_positions(self) -> int:
        return self.out_h * self.out_w


def output_dims(shape: ConvShape) -> tuple[int, int]:
    """Output (height, width) of a convolution: floor((in + 2*pad - f)/stride) + 1."""
    out_h = (shape.in_h + 2 * shape.pad_h - shape.f_h) // shape.stride_h + 1
    out_w = (shape.in_w + 2 * shape.pad_w - shape.f_w) // shape.stride_w + 1
    if out_h < 1 or out_w < 1:
        raise LayerSpecError(f"non-positive output dims ({out_h}, {out_w})")
    return out_h, out_w


@dataclass(frozen=True)
class MachineSpec:
    """Cache hierarchy and micro-kernel geometry of one target machine.

    l1/l2/l3_bytes:  cache capacities
    line_bytes:      cache line size
    cost_l2/l3/dram: access cost per line, in cycles
    alpha/beta/gamma: fraction of L1/L2/L3 usable for tile storage, in (0, 1]
    nf, nwin:        filters and windows consumed per micro-kernel call
    """

    l1_bytes: int
    l2_bytes: int
    l3_bytes: int
    nf: int
    nwin: int
    line_bytes: int = 64
    cost_l2: int = 12
    cost_l3: int = 40
    cost_dram: int = 200
    alpha: float = 0.9
    beta: float = 0.9
    gamma: float = 0.9
    dt_bytes: int = 4

    def __post_init__(self):
        if not (0 < self.l1_bytes < self.l2_bytes < self.l3_bytes):
            raise MachineSpecError(
                f"cache sizes must satisfy 0 < l1 < l2 < l3, got "
                f"{self.l1_bytes}/{self.l2_bytes}/{self.l3_bytes}")
        if self.line_bytes < 1:
            raise MachineSpecError(f"line_bytes must be positive, got {self.line_bytes}")
        for level in ("l1_bytes", "l2_bytes", "l3_bytes"):
            if getattr(self, level) % self.line_bytes != 0:
                raise MachineSpecError(f"line_bytes must divide {level}")
        for fname in ("alpha", "beta", "gamma"):
            frac = getattr(self, fname)
            if not (0.0 < frac <= 1.0):
                raise MachineSpecError(f"{fname} must be in (0, 1], got {frac}")
        if self.nf < 1 or self.nwin < 1:
            raise MachineSpecError(f"nf/nwin must be >= 1, got {self.nf}/{self.nwin}")
        for fname in ("cost_l2", "cost_l3", "cost_dram", "dt_bytes"):
            if getattr(self, fname) < 1:
                raise MachineSpecError(f"{fname} must be positive")

    # Usable-cache budgets are exact integers: floor(fraction * capacity),
    # evaluated without float rounding so the planner stays in integer
    # arithmetic.
    @property
    def l1_budget(self) -> int:
        return scaled_capacity(self.l1_bytes, self.alpha)

    @property
    def l2_budget(self) -> int:
        return scaled_capacity(self.l2_bytes, self.beta)

    @property
    def l3_budget(self) -> int:
        return scaled_capacity(self.l3_bytes, self.gamma)


def scaled_capacity(capacity_bytes: int, fraction: float) -> int:
    """floor(fraction * capacity) computed exactly via rationals."""
    return int(Fraction(fraction) * capacity_bytes)


def ceildiv(a: int, b: int) -> int:
    return -(-a // b)


# ---------------------------------------------------------------------------
# Tensor helpers

def check_tensor3(a: np.ndarray, dims: tuple[int, int, int] | None = None) -> None:
    """Validate a (c, h, w) float32 tensor; raises ValueError on mismatch."""
    if a.ndim != 3:
        raise ValueError(f"expected 3-d tensor, got ndim={a.ndim}")
    if a.dtype != np.float32:
        raise ValueError(f"expected float32, got {a.dtype}")
    if not a.flags.c_contiguous:
        raise ValueError("tensor must be C-contiguous")
    if dims is not None and a.shape != dims:
        raise ValueError(f"expected dims {dims}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("tensor contains non-finite values")


def check_tensor4(a: np.ndarray, dims: tuple[int, int, int, int] | None = None) -> None:
    """Validate an (f, c, h, w) float32 tensor."""
    if a.ndim != 4:
        raise ValueError(f"expected 4-d tensor, got ndim={a.ndim}")
    if a.dtype != np.float32:
        raise ValueError(f"expected float32, got {a.dtype}")
    if not a.flags.c_contiguous:
        raise ValueError("tensor must be C-contiguous")
    if dims is not None and a.shape != dims:
        raise ValueError(f"expected dims {dims}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("tensor contains non-finite values")


def random_input(shape: ConvShape, seed: int, layer_index: int = 0) -> Tensor3:
    """Pseudorandom input tensor in [0, 1), reproducible across platforms.

    Streams come from the counter-based Philox generator keyed by
    (seed, layer_index, 0), so the same corpus can be regenerated anywhere.
    """
    gen = np.random.Generator(_philox_key(seed, layer_index, 0))
    return gen.random((shape.in_c, shape.in_h, shape.in_w), dtype=np.float32)


def random_filters(shape: ConvShape, seed: int, layer_index: int = 0) -> Tensor4:
    """Pseudorandom filter set in [-1, 1), keyed by (seed, layer_index, 1)."""
    gen = np.random.Generator(_philox_key(seed, layer_index, 1))
    u = gen.random((shape.out_c, shape.in_c, shape.f_h, shape.f_w), dtype=np.float32)
    return (np.float32(2.0) * u - np.float32(1.0)).astype(np.float32)


def _philox_key(seed: int, layer_index: int, stream: int) -> np.random.Philox:
    return np.random.Philox(key=(seed & 0xFFFFFFFFFFFFFFFF)
                            + ((layer_index & 0xFFFFFFFF) << 64)
                            + ((stream & 0xFF) << 96))


# ---------------------------------------------------------------------------
# JSON ingestion

_SHAPE_FIELDS = {f.name for f in fields(ConvShape)}
_MACHINE_FIELDS = {f.name for f in fields(MachineSpec)}
_SHAPE_REQUIRED = ("in_c", "in_h", "in_w", "out_c", "f_h", "f_w")
_MACHINE_REQUIRED = ("l1_bytes", "l2_bytes", "l3_bytes", "nf", "nwin")


def shape_from_dict(record: dict, index: int = 0) -> ConvShape:
    if not isinstance(record, dict):
        raise LayerSpecError(f"record {index}: expected an object, got {type(record).__name__}")
    unknown = set(record) - _SHAPE_FIELDS
    if unknown:
        raise LayerSpecError(f"record {index}: unknown fields {sorted(unknown)}")
    missing = [k for k in _SHAPE_REQUIRED if k not in record]
    if missing:
        raise LayerSpecError(f"record {index}: missing fields {missing}")
    try:
        return ConvShape(**record)
    except LayerSpecError as exc:
        raise LayerSpecError(f"record {index}: {exc}") from None


def shape_to_dict(shape: ConvShape) -> dict:
    d = {
        "in_c": shape.in_c, "in_h": shape.in_h, "in_w": shape.in_w,
        "out_c": shape.out_c, "f_h": shape.f_h, "f_w": shape.f_w,
        "stride_h": shape.stride_h, "stride_w": shape.stride_w,
        "pad_h": shape.pad_h, "pad_w": shape.pad_w,
        "dt_bytes": shape.dt_bytes,
    }
    if shape.name:
        d["name"] = shape.name
    return d


def load_layer_specs(path: Union[str, Path]) -> list[ConvShape]:
    """Load a JSON array of layer records, preserving order.

    Errors carry the failing record index and field name.
    """
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LayerSpecError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, list):
        raise LayerSpecError(f"{path}: expected a JSON array of layer records")
    return [shape_from_dict(rec, i) for i, rec in enumerate(data)]


def save_layer_specs(path: Union[str, Path], shapes: Iterable[ConvShape]) -> None:
    Path(path).write_text(json.dumps([shape_to_dict(s) for s in shapes], indent=2) + "\n")


def machine_from_dict(record: dict) -> MachineSpec:
    if not isinstance(record, dict):
        raise MachineSpecError(f"expected an object, got {type(record).__name__}")
    unknown = set(record) - _MACHINE_FIELDS
    if unknown:
        raise MachineSpecError(f"unknown fields {sorted(unknown)}")
    missing = [k for k in _MACHINE_REQUIRED if k not in record]
    if missing:
        raise MachineSpecError(f"missing fields {missing}")
    return MachineSpec(**record)


def machine_to_dict(machine: MachineSpec) -> dict:
    return {
        "l1_bytes": machine.l1_bytes, "l2_bytes": machine.l2_bytes,
        "l3_bytes": machine.l3_bytes, "nf": machine.nf, "nwin": machine.nwin,
        "line_bytes": machine.line_bytes, "cost_l2": machine.cost_l2,
        "cost_l3": machine.cost_l3, "cost_dram": machine.cost_dram,
        "alpha": machine.alpha, "beta": machine.beta, "gamma": machine.gamma,
        "dt_bytes": machine.dt_bytes,
    }


def load_machine_spec(path: Union[str, Path]) -> MachineSpec:
    """Load a machine description from a JSON object file."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MachineSpecError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    try:
        return machine_from_dict(data)
    except MachineSpecError as exc:
        raise MachineSpecError(f"{path}: {exc}") from None


def max_rel_error(got: np.ndarray, want: np.ndarray) -> float:
    """Largest element-wise difference, relative to the oracle's largest magnitude.

    ||got - want||_inf / ||want||_inf, the usual scale-invariant conformance
    metric; every element's error is bounded by the returned value times the
    oracle's max magnitude.
    """
    if got.shape != want.shape:
        raise ValueError(f"shape mismatch {got.shape} vs {want.shape}")
    scale = float(np.max(np.abs(want)))
    diff = float(np.max(np.abs(got.astype(np.float64) - want.astype(np.float64))))
    if scale == 0.0:
        return 0.0 if diff == 0.0 else float("inf")
    return diff / scale
