"""Small teacher/student networks and their checkpoint format.

Parameters are stored as float32 arrays; every forward pass promotes them to
float64, so the loss math runs in double precision.

Checkpoint layout (little-endian)::

    b"SLDC" | u32 format_version | u32 n | n bytes UTF-8 JSON metadata
    then for each array listed in metadata: u64 count | count * f32
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import tape as tp
from .numeric import ShapeError

MAGIC = b"SLDC"
FORMAT_VERSION = 1
STREAM_INIT = 0x1D17


class FormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class ModelSpec:
    """Network shape.

    For ``mlp``, ``layer_sizes`` are the widths of the successive linear layers.
    For ``small_cnn`` the first two entries are the channel counts of two 3x3
    convolutions (each followed by ReLU and 2x2 average pooling) and the rest
    are linear widths. The last width is always ``num_classes``.
    """

    layer_sizes: tuple[int, ...]
    input_dim: int
    num_classes: int
    kind: str = "mlp"
    activation: str = "relu"
    image_shape: Optional[tuple[int, int]] = None

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(w) for w in self.layer_sizes))
        if self.image_shape is not None:
            object.__setattr__(self, "image_shape", tuple(int(s) for s in self.image_shape))
        if self.kind not in ("mlp", "small_cnn"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if not self.layer_sizes:
            raise ValueError("layer_sizes must not be empty")
        if any(w < 1 for w in self.layer_sizes) or self.input_dim < 1:
            raise ValueError(f"all widths must be >= 1, got {self.layer_sizes} (input {self.input_dim})")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.layer_sizes[-1] != self.num_classes:
            raise ValueError(
                f"last layer width {self.layer_sizes[-1]} != num_classes {self.num_classes}"
            )
        if self.kind == "small_cnn":
            if len(self.layer_sizes) < 3:
                raise ValueError("small_cnn needs two conv channel counts plus at least one linear layer")
            h, w = self.image_hw
            if h * w != self.input_dim or h % 4 or w % 4:
                raise ValueError(f"small_cnn needs an image shape divisible by 4 matching input_dim, got {h}x{w}")

    @property
    def image_hw(self) -> tuple[int, int]:
        if self.image_shape is not None:
            return self.image_shape
        side = math.isqrt(self.input_dim)
        return side, side

    def param_shapes(self) -> list[tuple[int, ...]]:
        shapes = []
        if self.kind == "mlp":
            widths = (self.input_dim,) + self.layer_sizes
            for a, b in zip(widths, widths[1:]):
                shapes += [(a, b), (b,)]
            return shapes
        c1, c2 = self.layer_sizes[:2]
        shapes += [(c1, 1, 3, 3), (c1,), (c2, c1, 3, 3), (c2,)]
        h, w = self.image_hw
        widths = (c2 * (h // 4) * (w // 4),) + self.layer_sizes[2:]
        for a, b in zip(widths, widths[1:]):
            shapes += [(a, b), (b,)]
        return shapes

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        if d.get("image_shape") is not None:
            d["image_shape"] = tuple(d["image_shape"])
        d["layer_sizes"] = tuple(d["layer_sizes"])
        return cls(**d)


@dataclass
class Model:
    spec: ModelSpec
    params: list[np.ndarray]

    def copy(self) -> "Model":
        return Model(self.spec, [p.copy() for p in self.params])


@dataclass
class Checkpoint:
    model: Model
    seed: int
    epoch: int
    velocity: Optional[list[np.ndarray]] = None
    format_version: int = FORMAT_VERSION
    extra: dict = field(default_factory=dict)

    @property
    def spec(self) -> ModelSpec:
        return self.model.spec


def _fan_in(shape) -> int:
    if len(shape) == 4:
        return shape[1] * shape[2] * shape[3]
    return shape[0]


def init_params(spec: ModelSpec, seed: int) -> Model:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases from a Philox stream."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), STREAM_INIT])))
    params = []
    shapes = spec.param_shapes()
    for i in range(0, len(shapes), 2):
        w_shape, b_shape = shapes[i], shapes[i + 1]
        bound = 1.0 / math.sqrt(_fan_in(w_shape))
        params.append(rng.uniform(-bound, bound, size=w_shape).astype(np.float32))
        params.append(rng.uniform(-bound, bound, size=b_shape).astype(np.float32))
    return Model(spec, params)


def _check_input(model: Model, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.spec.input_dim:
        raise ShapeError(f"expected features of shape (B, {model.spec.input_dim}), got {x.shape}")
    return x


def forward_graph(model: Model, tape: tp.GradientTape, x, params=None) -> tp.Node:
    """Record the forward pass; ``params`` are nodes (e.g. tape variables) or
    None to treat the model parameters as constants."""
    x = _check_input(model, x)
    if params is None:
        params = [tape.constant(p) for p in model.params]
    h = tape.constant(x)
    spec = model.spec
    linear = params
    if spec.kind == "small_cnn":
        hh, ww = spec.image_hw
        h = tp.reshape(h, (x.shape[0], 1, hh, ww))
        for i in (0, 2):
            h = tp.avg_pool2(tp.relu(tp.conv2d(h, params[i], params[i + 1])))
        h = tp.reshape(h, (x.shape[0], -1))
        linear = params[4:]
    n_layers = len(linear) // 2
    for i in range(n_layers):
        h = tp.add_bias(tp.matmul(h, linear[2 * i]), linear[2 * i + 1])
        if i < n_layers - 1:
            h = tp.relu(h)
    return h


def forward(model: Model, x) -> np.ndarray:
    """Logits (B, C) in float64; no softmax."""
    tape = tp.GradientTape()
    return forward_graph(model, tape, x).value


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    arrays = list(ckpt.model.params)
    if ckpt.velocity is not None:
        arrays += list(ckpt.velocity)
    meta = {
        "spec": ckpt.spec.to_dict(),
        "seed": int(ckpt.seed),
        "epoch": int(ckpt.epoch),
        "has_velocity": ckpt.velocity is not None,
        "shapes": [list(a.shape) for a in arrays],
        "extra": ckpt.extra,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta_bytes)), meta_bytes]
    for a in arrays:
        data = np.ascontiguousarray(a, dtype="<f4")
        chunks.append(struct.pack("<Q", data.size))
        chunks.append(data.tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def _read(buf: bytes, offset: int, n: int, what: str) -> bytes:
    if offset + n > len(buf):
        raise FormatError(f"truncated file while reading {what}: need {n} bytes, have {len(buf) - offset}", offset)
    return buf[offset : offset + n]


def load_checkpoint(path) -> Checkpoint:
    buf = Path(path).read_bytes()
    if _read(buf, 0, 4, "magic") != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}", 0)
    version, meta_len = struct.unpack("<II", _read(buf, 4, 8, "header"))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format_version {version} (expected {FORMAT_VERSION})", 4)
    off = 12
    try:
        meta = json.loads(_read(buf, off, meta_len, "metadata").decode("utf-8"))
        spec = ModelSpec.from_dict(meta["spec"])
        shapes = [tuple(s) for s in meta["shapes"]]
    except FormatError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed metadata: {exc}", off) from exc
    off += meta_len
    arrays = []
    for i, shape in enumerate(shapes):
        (count,) = struct.unpack("<Q", _read(buf, off, 8, f"length of array {i}"))
        if count != int(np.prod(shape)):
            raise FormatError(f"array {i} holds {count} values but shape {shape} needs {int(np.prod(shape))}", off)
        off += 8
        raw = _read(buf, off, 4 * count, f"array {i}")
        arrays.append(np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape))
        off += 4 * count
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes after last array", off)
    expected = spec.param_shapes()
    n = len(expected)
    if [a.shape for a in arrays[:n]] != expected:
        raise FormatError("parameter shapes do not match the model spec", 12)
    velocity = None
    if meta.get("has_velocity"):
        velocity = arrays[n:]
        if [a.shape for a in velocity] != expected:
            raise FormatError("velocity shapes do not match the model spec", 12)
    elif len(arrays) != n:
        raise FormatError(f"expected {n} arrays, found {len(arrays)}", 12)
    return Checkpoint(
        model=Model(spec, arrays[:n]),
        seed=int(meta["seed"]),
        epoch=int(meta["epoch"]),
        velocity=velocity,
        format_version=version,
        extra=meta.get("extra", {}),
    )
