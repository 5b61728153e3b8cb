"""Detection sources standing in for a detector's forward pass.

Two sources are provided: a seeded synthetic scenario generator that emits
raw output matrices together with exact ground truth, and a loader for
MOT-format detection files with a binary embedding sidecar. Both produce the
same raw row layout that :func:`trackforge.postproc.parse_output` consumes.

Inference cost is emulated, not computed: :class:`LatencyModel` prices a
batch as ``t_fixed + batch_size * t_image * kappa`` milliseconds, where
``kappa`` scales the per-image term for reduced-precision execution. The
default constants are calibrated so that a 20-object scene splits frame time
roughly 80/20 between inference and post-processing at about 19 FPS, and
``KAPPA_MIXED`` reflects the relative model-time reduction observed when
dropping numerically safe operations to half precision. These are
calibration values for the emulator, not measurements of any real model.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import BoundingBox, cosine_distance, normalize
from .errors import ConfigError, ConsistencyError, DimensionError, InvalidBoxError, ParseError

KAPPA_FULL = 1.0
KAPPA_MIXED = 0.786

# Internal rng stream tags, so per-frame noise, identity embeddings, and
# scenario layout never share a seed sequence.
_STREAM_FRAME = 1
_STREAM_IDENTITY = 2
_STREAM_LAYOUT = 3


@dataclass(frozen=True)
class LatencyModel:
    """Per-batch inference cost: t_fixed + batch_size * t_image * kappa (ms)."""

    t_fixed_ms: float = 8.0
    t_image_ms: float = 34.0
    kappa: float = KAPPA_FULL

    def __post_init__(self) -> None:
        if self.t_fixed_ms <= 0 or self.t_image_ms <= 0:
            raise ConfigError("latency terms must be positive")
        if not 0.0 < self.kappa <= 1.0:
            raise ConfigError(f"kappa must be in (0, 1], got {self.kappa}")


def emulated_latency(model: LatencyModel, batch_size: int) -> float:
    """Milliseconds the inference stage stalls for one batch."""
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    return model.t_fixed_ms + batch_size * model.t_image_ms * model.kappa


@dataclass(frozen=True)
class NoiseParams:
    """Observation noise for the synthetic generator; zeros mean exact output."""

    p_miss: float = 0.0
    sigma_box: float = 0.0
    sigma_emb: float = 0.0
    sigma_conf: float = 0.0
    lambda_fp: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_miss <= 1.0:
            raise ConfigError(f"p_miss must be in [0, 1], got {self.p_miss}")
        for name in ("sigma_box", "sigma_emb", "sigma_conf", "lambda_fp"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")


@dataclass(frozen=True, eq=False)
class ScenarioObject:
    """One synthetic target: linear motion from spawn to despawn frame."""

    object_id: int
    spawn_frame: int
    despawn_frame: int
    initial_box: BoundingBox
    velocity: tuple[float, float]
    identity_embedding: np.ndarray

    def __post_init__(self) -> None:
        if self.object_id <= 0:
            raise ConfigError(f"object id must be positive, got {self.object_id}")
        if self.spawn_frame >= self.despawn_frame:
            raise ConfigError(
                f"object {self.object_id}: spawn {self.spawn_frame} must precede "
                f"despawn {self.despawn_frame}"
            )

    def box_at(self, frame_index: int) -> BoundingBox:
        k = frame_index - self.spawn_frame
        return BoundingBox(
            self.initial_box.x + self.velocity[0] * k,
            self.initial_box.y + self.velocity[1] * k,
            self.initial_box.w,
            self.initial_box.h,
        )

    def alive_at(self, frame_index: int) -> bool:
        return self.spawn_frame <= frame_index < self.despawn_frame


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """A full synthetic sequence: objects, length, noise, and embedding geometry."""

    objects: tuple[ScenarioObject, ...]
    frames: int
    image_size: tuple[int, int] = (1920, 1080)
    noise: NoiseParams = field(default_factory=NoiseParams)
    embedding_dim: int = 512
    separation_margin: float = 0.5
    identity_seed: int = 0

    def __post_init__(self) -> None:
        if self.frames < 0:
            raise ConfigError(f"frame count must be non-negative, got {self.frames}")
        ids = [o.object_id for o in self.objects]
        if len(ids) != len(set(ids)):
            raise ConfigError("object ids must be unique within a scenario")

    @property
    def row_width(self) -> int:
        return 6 + self.embedding_dim


def identity_embeddings(
    count: int, dim: int, margin: float, seed: int, max_attempts_per_vector: int = 1000
) -> list[np.ndarray]:
    """Seeded unit vectors with pairwise cosine distance >= margin.

    Candidates are drawn from a Gaussian and rejected until they clear the
    margin against every accepted vector; for margins well below 1 and dims
    in the hundreds, rejections are rare.
    """
    rng = np.random.default_rng([seed, _STREAM_IDENTITY])
    accepted: list[np.ndarray] = []
    attempts = 0
    while len(accepted) < count:
        candidate = normalize(rng.standard_normal(dim))
        attempts += 1
        if all(cosine_distance(candidate, other) >= margin for other in accepted):
            accepted.append(candidate)
        elif attempts > max_attempts_per_vector * count:
            raise ConfigError(
                f"could not draw {count} embeddings with separation {margin} in dim {dim}"
            )
    return accepted


def make_scenario(
    num_objects: int,
    frames: int,
    seed: int,
    image_size: tuple[int, int] = (1920, 1080),
    noise: NoiseParams | None = None,
    embedding_dim: int = 512,
    separation_margin: float = 0.5,
    layout: str = "lanes",
) -> ScenarioConfig:
    """Build a scenario with seeded geometry and identity embeddings.

    ``layout="lanes"`` stacks objects in disjoint horizontal lanes with purely
    horizontal velocities, so true boxes never overlap at any frame (lanes may
    extend below the nominal image height; the image size only bounds
    false-positive placement). ``layout="random"`` scatters boxes and
    velocities freely and gives no separation guarantee.
    """
    if num_objects < 0:
        raise ConfigError(f"object count must be non-negative, got {num_objects}")
    if layout not in ("lanes", "random"):
        raise ConfigError(f"unknown layout {layout!r}")
    rng = np.random.default_rng([seed, _STREAM_LAYOUT])
    width, height = image_size
    identities = identity_embeddings(num_objects, embedding_dim, separation_margin, seed)
    objects = []
    for i in range(num_objects):
        if layout == "lanes":
            w, h = 30.0, 40.0
            x = float(rng.uniform(50.0, max(width - 200.0, 51.0)))
            y = 20.0 + i * (h + 12.0)
            velocity = (float(rng.uniform(-3.0, 3.0)), 0.0)
        else:
            w = float(rng.uniform(24.0, 96.0))
            h = float(rng.uniform(24.0, 96.0))
            x = float(rng.uniform(0.0, max(width - w, 1.0)))
            y = float(rng.uniform(0.0, max(height - h, 1.0)))
            velocity = (float(rng.uniform(-3.0, 3.0)), float(rng.uniform(-3.0, 3.0)))
        objects.append(
            ScenarioObject(
                object_id=i + 1,
                spawn_frame=0,
                despawn_frame=frames,
                initial_box=BoundingBox(x, y, w, h),
                velocity=velocity,
                identity_embedding=identities[i],
            )
        )
    return ScenarioConfig(
        objects=tuple(objects),
        frames=frames,
        image_size=image_size,
        noise=noise or NoiseParams(),
        embedding_dim=embedding_dim,
        separation_margin=separation_margin,
        identity_seed=seed,
    )


def generate_frame(
    scenario: ScenarioConfig, frame_index: int, seed: int
) -> tuple[np.ndarray, list[tuple[int, BoundingBox]]]:
    """One frame of raw output plus ground truth; pure in (scenario, frame, seed)."""
    if frame_index < 0:
        raise ConfigError(f"frame index must be non-negative, got {frame_index}")
    rng = np.random.default_rng([seed, _STREAM_FRAME, frame_index])
    noise = scenario.noise
    width, height = scenario.image_size
    rows: list[np.ndarray] = []
    ground_truth: list[tuple[int, BoundingBox]] = []
    for obj in scenario.objects:
        if not obj.alive_at(frame_index):
            continue
        box = obj.box_at(frame_index)
        ground_truth.append((obj.object_id, box))
        if rng.random() < noise.p_miss:
            continue
        x = box.x + rng.normal(0.0, noise.sigma_box)
        y = box.y + rng.normal(0.0, noise.sigma_box)
        w = max(box.w + rng.normal(0.0, noise.sigma_box), 1e-3)
        h = max(box.h + rng.normal(0.0, noise.sigma_box), 1e-3)
        embedding = normalize(
            obj.identity_embedding.astype(np.float64)
            + rng.normal(0.0, noise.sigma_emb, scenario.embedding_dim)
        )
        objectness = float(np.clip(0.9 + rng.normal(0.0, noise.sigma_conf), 0.0, 1.0))
        rows.append(_make_row(x, y, w, h, objectness, embedding))
    for _ in range(int(rng.poisson(noise.lambda_fp))):
        w = float(rng.uniform(16.0, 120.0))
        h = float(rng.uniform(16.0, 120.0))
        x = float(rng.uniform(0.0, max(width - w, 1.0)))
        y = float(rng.uniform(0.0, max(height - h, 1.0)))
        embedding = normalize(rng.standard_normal(scenario.embedding_dim))
        objectness = float(rng.uniform(0.3, 1.0))
        rows.append(_make_row(x, y, w, h, objectness, embedding))
    if not rows:
        return np.zeros((0, scenario.row_width), dtype=np.float64), ground_truth
    return np.stack(rows), ground_truth


def _make_row(
    x: float, y: float, w: float, h: float, objectness: float, embedding: np.ndarray
) -> np.ndarray:
    row = np.empty(6 + embedding.shape[0], dtype=np.float64)
    row[:6] = (x, y, w, h, objectness, 1.0)
    row[6:] = embedding
    return row


def scenario_frames(scenario: ScenarioConfig, seed: int):
    """Detection source: yields (frame_index, raw_output) for the whole scenario."""
    for frame_index in range(scenario.frames):
        raw, _ = generate_frame(scenario, frame_index, seed)
        yield frame_index, raw


def scenario_ground_truth(scenario: ScenarioConfig) -> dict[int, list[tuple[int, BoundingBox]]]:
    """Exact per-frame ground truth boxes; no randomness involved."""
    truth: dict[int, list[tuple[int, BoundingBox]]] = {}
    for frame_index in range(scenario.frames):
        truth[frame_index] = [
            (obj.object_id, obj.box_at(frame_index))
            for obj in scenario.objects
            if obj.alive_at(frame_index)
        ]
    return truth


# ---------------------------------------------------------------------------
# Scenario JSON round trip
# ---------------------------------------------------------------------------

def scenario_to_json(scenario: ScenarioConfig) -> str:
    """Stable JSON encoding; identity embeddings are re-derived from the seed."""
    payload = {
        "frames": scenario.frames,
        "image_size": list(scenario.image_size),
        "embedding_dim": scenario.embedding_dim,
        "separation_margin": scenario.separation_margin,
        "identity_seed": scenario.identity_seed,
        "noise": {
            "p_miss": scenario.noise.p_miss,
            "sigma_box": scenario.noise.sigma_box,
            "sigma_emb": scenario.noise.sigma_emb,
            "sigma_conf": scenario.noise.sigma_conf,
            "lambda_fp": scenario.noise.lambda_fp,
        },
        "objects": [
            {
                "id": obj.object_id,
                "spawn": obj.spawn_frame,
                "despawn": obj.despawn_frame,
                "box": list(obj.initial_box.as_tlwh()),
                "velocity": list(obj.velocity),
            }
            for obj in scenario.objects
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def scenario_from_json(text: str) -> ScenarioConfig:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"scenario file is not valid JSON: {exc}") from exc
    try:
        noise = NoiseParams(**payload.get("noise", {}))
        dim = int(payload["embedding_dim"])
        margin = float(payload["separation_margin"])
        seed = int(payload["identity_seed"])
        entries = payload["objects"]
        identities = identity_embeddings(len(entries), dim, margin, seed)
        objects = tuple(
            ScenarioObject(
                object_id=int(entry["id"]),
                spawn_frame=int(entry["spawn"]),
                despawn_frame=int(entry["despawn"]),
                initial_box=BoundingBox(*(float(v) for v in entry["box"])),
                velocity=(float(entry["velocity"][0]), float(entry["velocity"][1])),
                identity_embedding=identities[i],
            )
            for i, entry in enumerate(entries)
        )
        return ScenarioConfig(
            objects=objects,
            frames=int(payload["frames"]),
            image_size=(int(payload["image_size"][0]), int(payload["image_size"][1])),
            noise=noise,
            embedding_dim=dim,
            separation_margin=margin,
            identity_seed=seed,
        )
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise ParseError(f"scenario file is missing or corrupt: {exc!r}") from exc


def load_scenario(path: str | Path) -> ScenarioConfig:
    return scenario_from_json(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# MOT detection files and the embedding sidecar
# ---------------------------------------------------------------------------

def load_mot_detections(path: str | Path) -> dict[int, np.ndarray]:
    """Parse a MOT detection file into frame -> (n, 6) raw rows, embeddings absent.

    Rows are ``frame,id,bb_left,bb_top,bb_width,bb_height,conf,...`` with
    1-indexed frames in the file and 0-indexed frames in the returned map; the
    id field is ignored and extra trailing fields are allowed. Confidence is
    clamped into [0, 1].
    """
    per_frame: dict[int, list[np.ndarray]] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 7:
                raise ParseError(f"line {lineno}: expected at least 7 fields, got {len(parts)}")
            try:
                frame = int(float(parts[0]))
                x, y, w, h = (float(v) for v in parts[2:6])
                conf = float(parts[6])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: non-numeric field ({exc})") from exc
            if frame < 1:
                raise ParseError(f"line {lineno}: frame index must be >= 1, got {frame}")
            if w <= 0 or h <= 0:
                raise InvalidBoxError(f"line {lineno}: non-positive box size w={w}, h={h}")
            conf = min(max(conf, 0.0), 1.0)
            per_frame.setdefault(frame - 1, []).append(
                np.array([x, y, w, h, conf, 1.0], dtype=np.float64)
            )
    return {frame: np.stack(rows) for frame, rows in per_frame.items()}


SIDECAR_MAGIC = b"EMB1"


def write_embedding_sidecar(
    path: str | Path, records: dict[tuple[int, int], np.ndarray], dim: int
) -> None:
    """Write the binary sidecar: magic, u32 dim, then (frame, det_index, floats) records."""
    keys = sorted(records)
    with open(path, "wb") as handle:
        handle.write(SIDECAR_MAGIC)
        handle.write(struct.pack("<I", dim))
        for frame, det_index in keys:
            vector = np.asarray(records[(frame, det_index)], dtype=np.float32)
            if vector.shape != (dim,):
                raise DimensionError(
                    f"record ({frame}, {det_index}) has shape {vector.shape}, expected ({dim},)"
                )
            handle.write(struct.pack("<II", frame, det_index))
            handle.write(vector.tobytes())


def load_embedding_sidecar(
    path: str | Path, detections: dict[int, np.ndarray], dim: int = 512
) -> dict[int, np.ndarray]:
    """Attach sidecar embeddings to a detection map, normalizing each vector.

    The sidecar must contain exactly one record per (frame, det_index) in the
    detection map; any missing, extra, or duplicate key is a consistency
    error, and a declared dimension other than ``dim`` is a dimension error.
    """
    blob = Path(path).read_bytes()
    if blob[:4] != SIDECAR_MAGIC:
        raise ParseError(f"bad sidecar magic: {blob[:4]!r}")
    if len(blob) < 8:
        raise ParseError("sidecar truncated before the dimension field")
    declared = struct.unpack("<I", blob[4:8])[0]
    if declared != dim:
        raise DimensionError(f"sidecar declares dim={declared}, expected {dim}")
    record_size = 8 + 4 * dim
    body = blob[8:]
    if len(body) % record_size != 0:
        raise ParseError(f"sidecar body size {len(body)} is not a multiple of {record_size}")

    records: dict[tuple[int, int], np.ndarray] = {}
    for offset in range(0, len(body), record_size):
        frame, det_index = struct.unpack_from("<II", body, offset)
        key = (frame, det_index)
        if key in records:
            raise ConsistencyError(f"duplicate sidecar record for {key}")
        vector = np.frombuffer(body, dtype="<f4", count=dim, offset=offset + 8)
        records[key] = normalize(vector)

    needed = {
        (frame, det_index)
        for frame, rows in detections.items()
        for det_index in range(rows.shape[0])
    }
    missing = needed - records.keys()
    if missing:
        raise ConsistencyError(f"sidecar missing record for {min(missing)}")
    extra = records.keys() - needed
    if extra:
        raise ConsistencyError(f"sidecar has record {min(extra)} with no matching detection")

    attached: dict[int, np.ndarray] = {}
    for frame, rows in detections.items():
        out = np.zeros((rows.shape[0], 6 + dim), dtype=np.float64)
        out[:, :6] = rows
        for det_index in range(rows.shape[0]):
            out[det_index, 6:] = records[(frame, det_index)]
        attached[frame] = out
    return attached


def file_frames(
    detections: dict[int, np.ndarray], n_frames: int | None = None, row_width: int | None = None
):
    """Detection source over a loaded file map; missing frames yield empty output."""
    if n_frames is None:
        n_frames = max(detections) + 1 if detections else 0
    if row_width is None:
        row_width = next(iter(detections.values())).shape[1] if detections else 6
    empty = np.zeros((0, row_width), dtype=np.float64)
    for frame_index in range(n_frames):
        yield frame_index, detections.get(frame_index, empty)
