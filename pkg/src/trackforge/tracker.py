"""Per-frame tracking step and the track lifecycle state machine.

Each `step()` call runs the full post-detection sequence: confidence filter,
NMS, Kalman predict for every live track, appearance cost matrix, motion
gate, assignment, threshold rejection, then the lifecycle bookkeeping
(update matched, mark unmatched lost, remove stale, spawn new). A tracker
instance is strictly sequential: frame indices must increase between calls.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .assoc import apply_gate, build_cost_matrix, hungarian_solve, match_with_threshold
from .core import BoundingBox, Detection, box_to_measurement, measurement_to_box, normalize
from .errors import ConfigError, DimensionError, OrderingError
from .motion import CHI2_GATE_95_4DOF, KalmanFilter, KalmanState, MotionNoise
from .postproc import filter_confidence, nms


class TrackState(Enum):
    ACTIVE = "active"
    LOST = "lost"
    REMOVED = "removed"


@dataclass
class Track:
    """One tracked identity with motion state and smoothed appearance."""

    track_id: int
    state: TrackState
    kalman: KalmanState
    smooth_embedding: np.ndarray
    last_update_frame: int
    lost_since: int | None = None
    hits: int = 1


@dataclass(frozen=True)
class TrackerConfig:
    """Thresholds and lifecycle knobs; defaults follow common single-class practice."""

    conf_threshold: float = 0.5
    nms_iou: float = 0.4
    max_cost: float = 0.7
    gate_threshold: float = CHI2_GATE_95_4DOF
    gate_metric: str = "mahalanobis"  # or "euclidean" (squared pixels on centers)
    smoothing_alpha: float = 0.9
    max_lost: int = 30
    min_hits: int = 1  # 1 reports tracks from their first frame
    embedding_dim: int = 512
    motion_noise: MotionNoise = MotionNoise()


@dataclass(frozen=True)
class TrackerOutput:
    """Active tracks updated in one frame, sorted by track id."""

    frame_index: int
    records: tuple[tuple[int, BoundingBox, float], ...]


def smooth_embedding(old: np.ndarray, new: np.ndarray, alpha: float) -> np.ndarray:
    """Exponential appearance update: normalize(alpha * old + (1 - alpha) * new)."""
    if old.shape != new.shape:
        raise DimensionError(f"embedding shapes differ: {old.shape} vs {new.shape}")
    return normalize(alpha * old.astype(np.float64) + (1.0 - alpha) * new.astype(np.float64))


class Tracker:
    """Owns all tracks of one sequence; step() must be called in frame order."""

    def __init__(self, config: TrackerConfig | None = None) -> None:
        self.config = config or TrackerConfig()
        self.tracks: list[Track] = []  # ACTIVE and LOST; REMOVED tracks are dropped
        self.removed_ids: set[int] = set()
        self._filter = KalmanFilter(self.config.motion_noise)
        self._next_id = 1
        self._last_frame: int | None = None

    def step(self, frame_index: int, detections: list[Detection]) -> TrackerOutput:
        cfg = self.config
        if self._last_frame is not None and frame_index <= self._last_frame:
            raise OrderingError(
                f"frame {frame_index} does not advance past {self._last_frame}"
            )
        self._last_frame = frame_index

        dets = nms(filter_confidence(detections, cfg.conf_threshold), cfg.nms_iou)
        for det in dets:
            if det.embedding is None:
                raise DimensionError("tracking requires detections with embeddings")

        for track in self.tracks:
            track.kalman = self._filter.predict(track.kalman)

        measurements = (
            np.stack([box_to_measurement(d.box) for d in dets])
            if dets
            else np.zeros((0, 4), dtype=np.float64)
        )
        cost = build_cost_matrix(
            [t.smooth_embedding for t in self.tracks], [d.embedding for d in dets]
        )
        if self.tracks and dets:
            cost = apply_gate(cost, self._gate_matrix(measurements), cfg.gate_threshold)
        assignment = match_with_threshold(hungarian_solve(cost), cost, cfg.max_cost)

        emitted: list[tuple[int, BoundingBox, float]] = []
        for track_idx, det_idx, _ in assignment.matches:
            track, det = self.tracks[track_idx], dets[det_idx]
            track.kalman = self._filter.update(track.kalman, measurements[det_idx])
            track.smooth_embedding = smooth_embedding(
                track.smooth_embedding, det.embedding, cfg.smoothing_alpha
            )
            track.state = TrackState.ACTIVE
            track.lost_since = None
            track.last_update_frame = frame_index
            track.hits += 1
            if track.hits >= cfg.min_hits:
                emitted.append((track.track_id, self._track_box(track), det.objectness))

        for track_idx in assignment.unmatched_tracks:
            track = self.tracks[track_idx]
            if track.state is TrackState.ACTIVE:
                track.state = TrackState.LOST
                track.lost_since = frame_index

        survivors: list[Track] = []
        for track in self.tracks:
            if (
                track.state is TrackState.LOST
                and frame_index - track.lost_since >= cfg.max_lost
            ):
                track.state = TrackState.REMOVED
                self.removed_ids.add(track.track_id)
            else:
                survivors.append(track)
        self.tracks = survivors

        for det_idx in assignment.unmatched_detections:
            det = dets[det_idx]
            track = Track(
                track_id=self._next_id,
                state=TrackState.ACTIVE,
                kalman=self._filter.initiate(measurements[det_idx]),
                smooth_embedding=det.embedding.copy(),
                last_update_frame=frame_index,
            )
            self._next_id += 1
            self.tracks.append(track)
            if track.hits >= cfg.min_hits:
                emitted.append((track.track_id, self._track_box(track), det.objectness))

        return TrackerOutput(frame_index=frame_index, records=tuple(sorted(emitted)))

    def _gate_matrix(self, measurements: np.ndarray) -> np.ndarray:
        if self.config.gate_metric == "mahalanobis":
            return np.stack(
                [self._filter.gating_distance(t.kalman, measurements) for t in self.tracks]
            )
        if self.config.gate_metric == "euclidean":
            centers = np.stack([t.kalman.mean[:2] for t in self.tracks])
            delta = centers[:, None, :] - measurements[None, :, :2]
            return np.sum(delta * delta, axis=2)
        raise ConfigError(f"unknown gate metric {self.config.gate_metric!r}")

    @staticmethod
    def _track_box(track: Track) -> BoundingBox:
        return measurement_to_box(track.kalman.mean[:4])
