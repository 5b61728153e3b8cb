"""Constant-velocity Kalman filter over the (cx, cy, aspect, h) box space.

State is an 8-vector (position block then velocity block) with dt = 1 frame.
Process and measurement noise scale with box height, apart from the aspect
ratio which uses small fixed standard deviations; all weights live in
:class:`MotionNoise` and are configurable.

All operations are value-in/value-out: states are never mutated, so a state
can be shared or replayed freely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InvalidMeasurementError, NumericError

# 0.95 quantile of the chi-square distribution with 4 degrees of freedom;
# the default gate on squared Mahalanobis distance in measurement space.
CHI2_GATE_95_4DOF = 9.4877

_DIM = 4  # measurement dimension; state is 2 * _DIM


@dataclass(frozen=True)
class MotionNoise:
    """Noise weights: position/size stds scale with box height, aspect is fixed.

    The measurement-space aspect std is deliberately looser than the process
    one: observed aspect ratios wobble with box-size noise, and an overtight
    innovation covariance would reject valid matches at the gate.
    """

    std_weight_position: float = 1.0 / 20
    std_weight_velocity: float = 1.0 / 160
    std_aspect: float = 1e-2
    std_aspect_velocity: float = 1e-5
    std_aspect_measurement: float = 1e-1


@dataclass(frozen=True)
class KalmanState:
    """Gaussian state: mean (cx, cy, a, h, vcx, vcy, va, vh) and 8x8 covariance."""

    mean: np.ndarray
    covariance: np.ndarray


class KalmanFilter:
    """Predict/update cycle for one track's motion state."""

    def __init__(self, noise: MotionNoise | None = None) -> None:
        self.noise = noise or MotionNoise()
        self._motion = np.eye(2 * _DIM)
        self._motion[:_DIM, _DIM:] = np.eye(_DIM)
        self._observe = np.eye(_DIM, 2 * _DIM)

    def initiate(self, measurement: np.ndarray) -> KalmanState:
        """Create a state from an unassociated measurement, zero velocity."""
        z = np.asarray(measurement, dtype=np.float64)
        h = float(z[3])
        if h <= 0:
            raise InvalidMeasurementError(f"measurement height must be positive, got {h}")
        mean = np.concatenate([z, np.zeros(_DIM)])
        wp, wv = self.noise.std_weight_position, self.noise.std_weight_velocity
        std = np.array(
            [
                2 * wp * h,
                2 * wp * h,
                self.noise.std_aspect,
                2 * wp * h,
                10 * wv * h,
                10 * wv * h,
                self.noise.std_aspect_velocity,
                10 * wv * h,
            ]
        )
        return KalmanState(mean=mean, covariance=np.diag(std**2))

    def predict(self, state: KalmanState) -> KalmanState:
        """Advance one frame: position += velocity, covariance grows by Q."""
        h = float(state.mean[3])
        wp, wv = self.noise.std_weight_position, self.noise.std_weight_velocity
        std = np.array(
            [
                wp * h,
                wp * h,
                self.noise.std_aspect,
                wp * h,
                wv * h,
                wv * h,
                self.noise.std_aspect_velocity,
                wv * h,
            ]
        )
        mean = self._motion @ state.mean
        covariance = self._motion @ state.covariance @ self._motion.T + np.diag(std**2)
        return KalmanState(mean=mean, covariance=_symmetrize(covariance))

    def project(self, state: KalmanState) -> tuple[np.ndarray, np.ndarray]:
        """Project the state into measurement space: (mean4, innovation covariance)."""
        h = float(state.mean[3])
        wp = self.noise.std_weight_position
        std = np.array([wp * h, wp * h, self.noise.std_aspect_measurement, wp * h])
        mean = self._observe @ state.mean
        cov = self._observe @ state.covariance @ self._observe.T + np.diag(std**2)
        return mean, cov

    def update(self, state: KalmanState, measurement: np.ndarray) -> KalmanState:
        """Condition the state on a measurement; shrinks measured-subspace variance."""
        z = np.asarray(measurement, dtype=np.float64)
        projected_mean, projected_cov = self.project(state)
        try:
            chol = scipy.linalg.cho_factor(projected_cov, lower=True, check_finite=False)
            gain = scipy.linalg.cho_solve(
                chol, (state.covariance @ self._observe.T).T, check_finite=False
            ).T
        except scipy.linalg.LinAlgError as exc:
            raise NumericError(f"innovation covariance is singular: {exc}") from exc
        innovation = z - projected_mean
        mean = state.mean + gain @ innovation
        covariance = state.covariance - gain @ projected_cov @ gain.T
        return KalmanState(mean=mean, covariance=_symmetrize(covariance))

    def gating_distance(self, state: KalmanState, measurements: np.ndarray) -> np.ndarray:
        """Squared Mahalanobis distance from the projected state to each measurement.

        ``measurements`` is an (N, 4) array; returns an (N,) array of
        non-negative distances.
        """
        z = np.atleast_2d(np.asarray(measurements, dtype=np.float64))
        projected_mean, projected_cov = self.project(state)
        d = z - projected_mean
        try:
            chol = np.linalg.cholesky(projected_cov)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"projected covariance is singular: {exc}") from exc
        solved = scipy.linalg.solve_triangular(chol, d.T, lower=True, check_finite=False)
        return np.sum(solved * solved, axis=0)


def _symmetrize(matrix: np.ndarray) -> np.ndarray:
    return (matrix + matrix.T) / 2.0
