"""Synthetic motion corpus with paired procedural captions, plus metrics.

Clips are composed from parameterized primitives on a 22-joint skeleton:
sinusoidal limb swings (per atomic segment), linear root translation, and
per-segment holds, each optionally gated to a temporal phase. The caption is
assembled from a fixed grammar naming exactly the active primitives, so text
and motion are deterministically coupled through the generator parameters.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import hierarchy as hx
from . import numerics as nm
from .motion import FEATURE_DIM, POSITION_DIMS, MotionSequence

# rest pose (meters), matching the joint order in hierarchy.JOINT_NAMES
REST_POSE = np.array(
    [
        [0.00, 0.95, 0.00],  # pelvis
        [-0.10, 0.90, 0.00],  # left_hip
        [0.10, 0.90, 0.00],  # right_hip
        [0.00, 1.05, 0.00],  # spine1
        [-0.11, 0.50, 0.00],  # left_knee
        [0.11, 0.50, 0.00],  # right_knee
        [0.00, 1.18, 0.00],  # spine2
        [-0.12, 0.10, 0.00],  # left_ankle
        [0.12, 0.10, 0.00],  # right_ankle
        [0.00, 1.31, 0.00],  # spine3
        [-0.12, 0.03, 0.12],  # left_foot
        [0.12, 0.03, 0.12],  # right_foot
        [0.00, 1.45, 0.00],  # neck
        [-0.08, 1.40, 0.00],  # left_collar
        [0.08, 1.40, 0.00],  # right_collar
        [0.00, 1.58, 0.00],  # head
        [-0.20, 1.40, 0.00],  # left_shoulder
        [0.20, 1.40, 0.00],  # right_shoulder
        [-0.24, 1.12, 0.00],  # left_elbow
        [0.24, 1.12, 0.00],  # right_elbow
        [-0.26, 0.86, 0.00],  # left_wrist
        [0.26, 0.86, 0.00],  # right_wrist
    ],
    dtype=np.float64,
)

# swing axis and distal weighting per swingable segment
_SWING_AXES = {
    "left-arm": np.array([0.0, 0.3, 1.0]),
    "right-arm": np.array([0.0, 0.3, 1.0]),
    "left-leg": np.array([0.0, 0.0, 1.0]),
    "right-leg": np.array([0.0, 0.0, 1.0]),
    "spine": np.array([1.0, 0.0, 0.2]),
    "head": np.array([1.0, 0.2, 0.0]),
}

_SPEED_WORDS = {1: "slowly", 2: "steadily", 4: "quickly"}
_PHASE_WORDS = {"full": "throughout", "first": "in the first half", "second": "in the second half"}
_DIR_WORDS = {(0, 1): "forward", (0, -1): "backward", (1, 1): "to the right", (1, -1): "to the left"}
_PACE_WORDS = {0.4: "slowly", 1.0: "briskly"}


@dataclass
class SwingPrimitive:
    segment: str
    amplitude: float  # meters at the most distal joint
    cycles: int  # full periods over the clip
    phase: float  # radians
    window: str  # full | first | second


@dataclass
class RootTravel:
    axis: int  # 0 = x, 2 = z handled via direction tuple
    direction: tuple[int, int]  # (axis index in {0,2} mapped, sign)
    distance: float  # meters over the clip


@dataclass
class ClipParams:
    seed: int
    n_frames: int
    true_length: int
    swings: list[SwingPrimitive] = field(default_factory=list)
    travel: RootTravel | None = None


@dataclass
class SyntheticClip:
    motion: MotionSequence
    caption: str
    params: ClipParams


def _window_gate(window: str, t: np.ndarray, length: int) -> np.ndarray:
    if window == "full":
        return np.ones_like(t)
    if window == "first":
        return (t < length / 2).astype(np.float64)
    return (t >= length / 2).astype(np.float64)


def _sample_params(rng: np.random.Generator, n_frames: int, seed: int) -> ClipParams:
    # a quarter of the clips stop early to exercise the padding path
    if rng.uniform() < 0.25:
        true_length = int(rng.integers(44, n_frames))
    else:
        true_length = n_frames
    params = ClipParams(seed=seed, n_frames=n_frames, true_length=true_length)

    segments = list(_SWING_AXES)
    active = rng.choice(len(segments), size=int(rng.integers(1, 4)), replace=False)
    for si in sorted(active):
        params.swings.append(
            SwingPrimitive(
                segment=segments[si],
                amplitude=float(rng.uniform(0.15, 0.5)),
                cycles=int(rng.choice([1, 2, 4])),
                phase=float(rng.uniform(0, 2 * np.pi)),
                window=str(rng.choice(["full", "first", "second"])),
            )
        )
    if rng.uniform() < 0.7:
        axis, sign = [(2, 1), (2, -1), (0, 1), (0, -1)][int(rng.integers(0, 4))]
        params.travel = RootTravel(
            axis=axis,
            direction=(0 if axis == 2 else 1, sign),
            distance=float(rng.choice([0.4, 1.0])) * sign,
        )
    return params


def _render(params: ClipParams) -> MotionSequence:
    n, L = params.n_frames, params.true_length
    t = np.arange(L, dtype=np.float64)
    pos = np.tile(REST_POSE[None], (L, 1, 1))

    if params.travel is not None:
        disp = np.zeros((L, 3))
        disp[:, params.travel.axis] = params.travel.distance * (t / max(L - 1, 1))
        pos += disp[:, None, :]

    for sw in params.swings:
        joints = hx.ATOMIC_JOINT_GROUPS[sw.segment]
        axis = _SWING_AXES[sw.segment]
        gate = _window_gate(sw.window, t, L)
        wave = np.sin(2 * np.pi * sw.cycles * t / L + sw.phase) * gate
        for depth, j in enumerate(joints):
            weight = (depth + 1) / len(joints)
            pos[:, j] += (sw.amplitude * weight) * wave[:, None] * axis[None, :]

    vel = np.zeros_like(pos)
    vel[1:] = pos[1:] - pos[:-1]
    feats = np.concatenate([pos, vel], axis=-1).astype(np.float32)
    data = np.zeros((n, len(hx.JOINT_NAMES), FEATURE_DIM), dtype=np.float32)
    data[:L] = feats
    return MotionSequence(data, true_length=L)


def _caption(params: ClipParams) -> str:
    parts = []
    if params.travel is not None:
        word = _DIR_WORDS[params.travel.direction]
        pace = _PACE_WORDS[abs(params.travel.distance)]
        parts.append(f"the body travels {word} {pace}")
    for sw in params.swings:
        parts.append(
            f"the {sw.segment} swings {_SPEED_WORDS[sw.cycles]} "
            f"with a {'wide' if sw.amplitude > 0.32 else 'small'} sweep "
            f"{_PHASE_WORDS[sw.window]}"
        )
    if params.true_length < params.n_frames:
        parts.append("then holds still")
    return ", ".join(parts) + "."


def make_clip(seed: int, index: int = 0, n_frames: int = 64) -> SyntheticClip:
    """Clip ``index`` of the corpus seeded with ``seed`` (order-independent)."""
    rng = nm.substream(seed, f"clip/{index}")
    params = _sample_params(rng, n_frames, seed)
    return SyntheticClip(_render(params), _caption(params), params)


def make_corpus(count: int, seed: int, n_frames: int = 64) -> list[SyntheticClip]:
    if count < 1:
        raise ValueError("count must be >= 1")
    return [make_clip(seed, i, n_frames) for i in range(count)]


def skeleton_fingerprint() -> str:
    doc = {
        "joints": list(hx.JOINT_NAMES),
        "atomic": {k: list(v) for k, v in hx.ATOMIC_JOINT_GROUPS.items()},
        "rest": [[round(float(x), 6) for x in row] for row in REST_POSE],
        "features": FEATURE_DIM,
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def save_corpus(out_dir, clips: list[SyntheticClip], seed: int) -> None:
    """One motion file + one caption file per clip, plus a manifest."""
    from pathlib import Path

    from . import io as mio

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, clip in enumerate(clips):
        mio.save_motion(out / f"clip_{i:04d}.mot", clip.motion)
        (out / f"clip_{i:04d}.txt").write_text(clip.caption + "\n")
    manifest = {
        "version": 1,
        "seed": seed,
        "count": len(clips),
        "frames": clips[0].motion.n_frames if clips else 0,
        "skeleton_hash": skeleton_fingerprint(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_corpus(corpus_dir) -> tuple[list[MotionSequence], list[str], dict]:
    from pathlib import Path

    from . import io as mio

    root = Path(corpus_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    if manifest.get("skeleton_hash") != skeleton_fingerprint():
        raise ValueError("corpus was generated with a different skeleton")
    motions, captions = [], []
    for i in range(manifest["count"]):
        motions.append(mio.load_motion(root / f"clip_{i:04d}.mot"))
        captions.append((root / f"clip_{i:04d}.txt").read_text().strip())
    return motions, captions, manifest


def mpjpe(m: MotionSequence, m_hat: MotionSequence) -> float:
    """Mean per-joint position error over valid frames (corpus units)."""
    if m.data.shape != m_hat.data.shape:
        raise ValueError(f"shape mismatch {m.data.shape} vs {m_hat.data.shape}")
    L = m.true_length
    a = m.data[:L, :, :POSITION_DIMS].astype(np.float64)
    b = m_hat.data[:L, :, :POSITION_DIMS].astype(np.float64)
    return float(np.linalg.norm(a - b, axis=-1).mean())


def motion_amplitude(clips: list[MotionSequence]) -> float:
    """Mean per-joint deviation from each joint's temporal mean position;
    the yardstick for relative reconstruction error."""
    vals = []
    for m in clips:
        p = m.data[: m.true_length, :, :POSITION_DIMS].astype(np.float64)
        dev = np.linalg.norm(p - p.mean(axis=0, keepdims=True), axis=-1)
        vals.append(dev.mean())
    return float(np.mean(vals))


@dataclass
class MetricReport:
    mpjpe: float | None
    bit_accuracy: float | None
    per_scale_accuracy: list[float] | None
    clips: int = 0

    def __post_init__(self):
        if self.mpjpe is not None and self.mpjpe < 0:
            raise ValueError("mpjpe must be >= 0")
        if self.bit_accuracy is not None and not 0 <= self.bit_accuracy <= 1:
            raise ValueError("bit accuracy must be in [0, 1]")

    def to_json(self) -> str:
        return json.dumps(
            {
                "mpjpe": self.mpjpe,
                "bit_accuracy": self.bit_accuracy,
                "per_scale_accuracy": self.per_scale_accuracy,
                "clips": self.clips,
            },
            indent=2,
            sort_keys=True,
        )


def reconstruction_mpjpe(tok_snap, clips: list[SyntheticClip]) -> float:
    vals = [mpjpe(c.motion, tok_snap.reconstruct(c.motion)) for c in clips]
    return float(np.mean(vals))


def bit_accuracy(pred_snap, tok_snap, clips: list[SyntheticClip]) -> MetricReport:
    """Teacher-forced: fraction of bits whose predicted sign matches the
    clean token map, overall and per scale, valid positions only."""
    from . import predictor as pr
    from . import tokenizer as tk

    spec = tok_snap.spec
    layout = pr.SequenceLayout(spec)
    correct = np.zeros(spec.num_scales, dtype=np.int64)
    total = np.zeros(spec.num_scales, dtype=np.int64)
    for clip in clips:
        maps, _ = tok_snap.tokenize(clip.motion)
        arrs = [tm.bits for tm in maps]
        logits = pred_snap.teacher_logits(arrs, clip.caption)
        valid_lat = tk.latent_length(clip.motion.true_length)
        for v in range(spec.num_scales):
            sl = layout.block_slices[v]
            lg = logits[sl].reshape(spec.h(v), spec.m(v), -1)
            pred_bits = np.where(lg >= 0, 1.0, -1.0)
            true_bits = np.where(arrs[v] > 0, 1.0, -1.0)
            nb = hx.valid_bins(spec, v, valid_lat)
            match = pred_bits[:nb] == true_bits[:nb]
            correct[v] += int(match.sum())
            total[v] += match.size
    per_scale = [float(c) / t if t else 0.0 for c, t in zip(correct, total)]
    overall = float(correct.sum()) / float(total.sum())
    return MetricReport(
        mpjpe=None, bit_accuracy=overall, per_scale_accuracy=per_scale, clips=len(clips)
    )
