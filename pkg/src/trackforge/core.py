"""Geometry, embedding math, and precision-reduction primitives.

Boxes are stored as top-left corner plus width/height ("tlwh") because both
the MOT file formats and NMS work in that space; the Kalman measurement
space (cx, cy, aspect, h) is reached only through the explicit conversion
functions below. Embeddings are plain float32 numpy arrays, normalized once
at ingestion so distance computations never re-derive norms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateEmbeddingError,
    DimensionError,
    InvalidBoxError,
    PrecisionOverflowError,
)

EMBEDDING_DIM = 512
BINARY16_MAX = 65504.0


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box: top-left corner (x, y), width w, height h, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        for name in ("x", "y", "w", "h"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InvalidBoxError(f"box field {name!r} is not finite: {value!r}")
        if self.w <= 0 or self.h <= 0:
            raise InvalidBoxError(f"box must have positive size, got w={self.w}, h={self.h}")

    @property
    def right(self) -> float:
        return self.x + self.w

    @property
    def bottom(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_tlwh(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True, eq=False)
class Detection:
    """One detector output: box, objectness and class scores, optional embedding."""

    box: BoundingBox
    objectness: float
    class_score: float = 1.0
    embedding: np.ndarray | None = None


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes; 0.0 when disjoint."""
    inter_w = min(a.right, b.right) - max(a.x, b.x)
    inter_h = min(a.bottom, b.bottom) - max(a.y, b.y)
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    inter = inter_w * inter_h
    union = a.area + b.area - inter
    # (right - x) can exceed w by one ulp, so clamp the ratio into [0, 1].
    return float(min(inter / union, 1.0))


def box_to_measurement(box: BoundingBox) -> np.ndarray:
    """Convert a box to the Kalman measurement vector (cx, cy, aspect, h)."""
    return np.array(
        [box.x + box.w / 2.0, box.y + box.h / 2.0, box.w / box.h, box.h],
        dtype=np.float64,
    )


def measurement_to_box(measurement: np.ndarray) -> BoundingBox:
    """Inverse of :func:`box_to_measurement`; raises on non-positive size."""
    cx, cy, aspect, h = (float(v) for v in measurement)
    w = aspect * h
    if h <= 0 or w <= 0:
        raise InvalidBoxError(f"measurement implies non-positive size: aspect={aspect}, h={h}")
    return BoundingBox(cx - w / 2.0, cy - h / 2.0, w, h)


def normalize(values: np.ndarray) -> np.ndarray:
    """Scale a vector to unit Euclidean norm, returned as float32.

    Raises DegenerateEmbeddingError for (near-)zero or non-finite input.
    """
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise DegenerateEmbeddingError("embedding contains non-finite values")
    norm = float(np.linalg.norm(v))
    if norm < 1e-12:
        raise DegenerateEmbeddingError(f"embedding norm too small to normalize: {norm!r}")
    return (v / norm).astype(np.float32)


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - dot(a, b) for unit vectors: 0 identical, 1 orthogonal, 2 antipodal."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"embedding shapes differ: {a.shape} vs {b.shape}")
    dot = float(np.dot(a.astype(np.float64), b.astype(np.float64)))
    return float(np.clip(1.0 - dot, 0.0, 2.0))


def quantize_binary16(values: np.ndarray) -> np.ndarray:
    """Round each value to the nearest IEEE 754 binary16 value, widened to float32.

    Round-to-nearest-even, idempotent, and monotone. Values outside the
    binary16 range (|v| > 65504) raise PrecisionOverflowError.
    """
    v = np.asarray(values, dtype=np.float32)
    if not np.all(np.isfinite(v)):
        raise PrecisionOverflowError("cannot quantize non-finite values")
    if np.any(np.abs(v) > BINARY16_MAX):
        worst = float(np.max(np.abs(v)))
        raise PrecisionOverflowError(f"value {worst!r} exceeds binary16 range (max {BINARY16_MAX})")
    return v.astype(np.float16).astype(np.float32)
