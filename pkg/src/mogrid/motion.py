"""Motion sequences: frames x joints x per-joint features, with a true length.

Feature layout for the synthetic skeleton: 3-D joint position followed by
3-D finite-difference velocity (6 floats per joint). Frames at or beyond
``true_length`` are zero padding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

POSITION_DIMS = 3
FEATURE_DIM = 6  # xyz position + xyz velocity


@dataclass
class MotionSequence:
    data: np.ndarray  # (N, J, F) float32
    true_length: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValueError(f"motion data must be (N, J, F), got {self.data.shape}")
        if not 0 < self.true_length <= self.data.shape[0]:
            raise ValueError(
                f"true_length {self.true_length} outside (0, {self.data.shape[0]}]"
            )

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_joints(self) -> int:
        return self.data.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.data.shape[2]

    def positions(self) -> np.ndarray:
        return self.data[..., :POSITION_DIMS]

    def valid(self) -> np.ndarray:
        return self.data[: self.true_length]

    def copy(self) -> "MotionSequence":
        return MotionSequence(self.data.copy(), self.true_length)


def zero_pad(valid: np.ndarray, n_frames: int) -> MotionSequence:
    """Pad a (L, J, F) array with zero frames up to ``n_frames``."""
    L = valid.shape[0]
    if L > n_frames:
        raise ValueError(f"clip length {L} exceeds container length {n_frames}")
    data = np.zeros((n_frames,) + valid.shape[1:], dtype=np.float32)
    data[:L] = valid
    return MotionSequence(data, true_length=L)
