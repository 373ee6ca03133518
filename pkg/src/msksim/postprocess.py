"""Sequence acceptance filtering and Savitzky-Golay smoothing of activations."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .staticopt import ActivationTrajectory

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AcceptanceThresholds:
    max_marker_error: float = 0.15  # m
    max_constraint_violation: float = 1e-11  # N·m

    def __post_init__(self):
        if not (self.max_marker_error > 0 and self.max_constraint_violation > 0):
            raise ValueError("acceptance thresholds must be > 0")


@dataclass(frozen=True)
class SmoothingConfig:
    window: int = 11
    poly_order: int = 2

    def __post_init__(self):
        if self.window % 2 != 1 or self.window < self.poly_order + 2 or self.poly_order < 0:
            raise ValueError(f"invalid Savitzky-Golay window {self.window} / order {self.poly_order}")


@dataclass(frozen=True)
class Decision:
    accepted: bool
    reason: str | None = None  # "marker-error", "constraint-violation", "ik-failure", "so-failure"
    statistic: str | None = None
    value: float | None = None
    threshold: float | None = None

    def as_dict(self):
        return {k: v for k, v in self.__dict__.items()}


def accept_sequence(max_marker_error, max_constraint_violation,
                    thresholds: AcceptanceThresholds = AcceptanceThresholds(),
                    ik_failed_frames=(), so_failed_frames=()) -> Decision:
    """Accept a sequence iff marker error and constraint violation are within thresholds.

    ``max_marker_error`` may be ``None`` when coordinates were given directly
    and no IK was run.
    """
    if len(ik_failed_frames):
        return Decision(False, "ik-failure", "ik_failed_frames", float(len(ik_failed_frames)), 0.0)
    if max_marker_error is not None:
        if not (max_marker_error <= thresholds.max_marker_error):
            return Decision(False, "marker-error", "max_marker_error",
                            float(max_marker_error), thresholds.max_marker_error)
    if not (max_constraint_violation <= thresholds.max_constraint_violation):
        return Decision(False, "constraint-violation", "max_constraint_violation",
                        float(max_constraint_violation), thresholds.max_constraint_violation)
    if len(so_failed_frames):
        return Decision(False, "so-failure", "so_failed_frames", float(len(so_failed_frames)), 0.0)
    return Decision(True)


def savgol_coefficients(window: int, order: int, pos: int | None = None) -> np.ndarray:
    """Weights that evaluate the least-squares polynomial fit at sample ``pos``.

    ``pos`` indexes the window (0..window-1) and defaults to the centre.
    """
    half = window // 2
    pos = half if pos is None else pos
    x = np.arange(window, dtype=float) - half
    V = np.vander(x, order + 1, increasing=True)
    e = (pos - half) ** np.arange(order + 1, dtype=float)
    return np.linalg.pinv(V).T @ e


def savgol_column(x, window=11, order=2) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    T = len(x)
    half = window // 2
    out = np.empty(T)
    c = savgol_coefficients(window, order)
    # windows fully inside the signal
    windows = np.lib.stride_tricks.sliding_window_view(x, window)
    out[half:T - half] = windows @ c
    # first/last window: evaluate its fit at the off-centre positions
    for pos in range(half):
        out[pos] = savgol_coefficients(window, order, pos) @ x[:window]
        out[T - half + pos] = savgol_coefficients(window, order, half + 1 + pos) @ x[T - window:]
    return out


def savgol_smooth(activations: ActivationTrajectory,
                  config: SmoothingConfig = SmoothingConfig(),
                  clip: bool = True) -> ActivationTrajectory:
    """Smooth every activation column, then clip to [0, 1]; times are untouched.

    Sequences shorter than the window are returned unchanged (still clipped)
    with the flag ``"too-short-to-smooth"``.
    """
    A = np.asarray(activations.activations, dtype=float)
    flags = list(activations.flags)
    if A.shape[0] < config.window:
        log.warning("sequence of %d frames is shorter than the smoothing window %d",
                    A.shape[0], config.window)
        out = A.copy()
        flags.append("too-short-to-smooth")
    else:
        out = np.column_stack([savgol_column(A[:, j], config.window, config.poly_order)
                               for j in range(A.shape[1])]) if A.shape[1] else A.copy()
    if clip:
        out = np.clip(out, 0.0, 1.0)
    return replace(activations, activations=out, flags=flags)


def total_variation(x) -> float:
    return float(np.sum(np.abs(np.diff(np.asarray(x, dtype=float)))))
