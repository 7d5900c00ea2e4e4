"""Skeletal-temporal multi-scale structure: atomic segments, partition trees,
temporal schedules, validation, and the five named presets.

A hierarchy is an ordered list of scales; each scale pairs a temporal
resolution ``h`` (number of latent time bins) with a skeletal partition of
the seven atomic segments. Temporal bins follow the floor rule
``bin(t) = floor(t * h / n)``, which keeps every bin non-empty for any
h <= n and makes broadcast-then-pool an exact identity, so the schedules do
not need h to divide n.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

ATOMIC_SEGMENTS = ("root", "spine", "head", "left-arm", "right-arm", "left-leg", "right-leg")

PRESET_NAMES = (
    "uplow-alternate",
    "uplow-temporal-first",
    "inout-alternate",
    "inout-temporal-first",
    "perjoint-temporal",
)

# 22-joint synthetic skeleton; index layout is fixed for serialization.
JOINT_NAMES = (
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
)

# atomic segment -> full-skeleton joint indices absorbed during pooling
ATOMIC_JOINT_GROUPS: dict[str, tuple[int, ...]] = {
    "root": (0,),
    "spine": (3, 6, 9),
    "head": (12, 15),
    "left-arm": (13, 16, 18, 20),
    "right-arm": (14, 17, 19, 21),
    "left-leg": (1, 4, 7, 10),
    "right-leg": (2, 5, 8, 11),
}

# intermediate pooling level between the 22 joints and the 7 atomic segments;
# each mid group sits inside exactly one atomic segment (nested pooling)
MID_JOINT_GROUPS: tuple[tuple[int, ...], ...] = (
    (0,),  # root
    (3, 6),  # lower spine
    (9,),  # upper spine
    (12, 15),  # neck + head
    (13, 16),  # left shoulder girdle
    (18, 20),  # left forearm
    (14, 17),  # right shoulder girdle
    (19, 21),  # right forearm
    (1, 4),  # left upper leg
    (7, 10),  # left lower leg
    (2, 5),  # right upper leg
    (8, 11),  # right lower leg
)

# atomic segment index of each mid group
MID_TO_ATOMIC: tuple[int, ...] = (0, 1, 1, 2, 3, 3, 4, 4, 5, 5, 6, 6)


@dataclass(frozen=True)
class AtomicSegmentSet:
    """The 7 coarsest body units and the joints each absorbs while pooling."""

    segments: tuple[str, ...] = ATOMIC_SEGMENTS
    joint_groups: dict[str, tuple[int, ...]] = field(
        default_factory=lambda: dict(ATOMIC_JOINT_GROUPS)
    )

    def validate(self, n_joints: int) -> None:
        if len(self.segments) != 7:
            raise ValueError(f"expected 7 atomic segments, got {len(self.segments)}")
        seen: list[int] = []
        for s in self.segments:
            seen.extend(self.joint_groups[s])
        if sorted(seen) != list(range(n_joints)):
            raise ValueError("joint_groups must cover every joint exactly once")


Partition = tuple[frozenset[str], ...]


def _partition(groups) -> Partition:
    """Normalize to segments ordered by smallest atomic index; unknown names
    (caught later by validate) sort last."""
    fs = [frozenset(g) for g in groups]
    order = {name: i for i, name in enumerate(ATOMIC_SEGMENTS)}

    def key(s):
        return min(((order.get(x, 99), x) for x in s), default=(-1, ""))

    return tuple(sorted(fs, key=key))


WHOLE_BODY: Partition = _partition([ATOMIC_SEGMENTS])
ATOMIC_PARTITION: Partition = _partition([[s] for s in ATOMIC_SEGMENTS])

# upper/lower tree: whole -> {lower, upper} -> {lower, torso, arms} -> atomic.
# The root travels with the lower body (locomotion dominates its motion).
_UPLOW_LEVELS: tuple[Partition, ...] = (
    WHOLE_BODY,
    _partition([["root", "left-leg", "right-leg"], ["spine", "head", "left-arm", "right-arm"]]),
    _partition(
        [["root", "left-leg", "right-leg"], ["spine", "head"], ["left-arm"], ["right-arm"]]
    ),
    ATOMIC_PARTITION,
)

# inner-to-outer tree: peel the limbs off the core, then split them apart,
# and decompose the core last.
_INOUT_LEVELS: tuple[Partition, ...] = (
    WHOLE_BODY,
    _partition([["root", "spine", "head"], ["left-arm", "right-arm", "left-leg", "right-leg"]]),
    _partition([["root", "spine", "head"], ["left-arm", "right-arm"], ["left-leg", "right-leg"]]),
    _partition([["root", "spine", "head"], ["left-arm"], ["right-arm"], ["left-leg"], ["right-leg"]]),
    ATOMIC_PARTITION,
)


@dataclass(frozen=True)
class HierarchySpec:
    """Ordered (temporal resolution, skeletal partition) pairs ending at (n, finest)."""

    name: str
    n: int
    scales: tuple[tuple[int, Partition], ...]

    @property
    def num_scales(self) -> int:
        return len(self.scales)

    @property
    def top(self) -> int:
        """V, the index of the finest scale; sampling takes V+1 steps."""
        return len(self.scales) - 1

    def h(self, v: int) -> int:
        return self.scales[v][0]

    def partition(self, v: int) -> Partition:
        return self.scales[v][1]

    def m(self, v: int) -> int:
        return len(self.scales[v][1])

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "name": self.name,
            "n": self.n,
            "scales": [
                {"h": h, "groups": [sorted(g, key=ATOMIC_SEGMENTS.index) for g in part]}
                for h, part in self.scales
            ],
        }

    @staticmethod
    def from_dict(d: dict) -> "HierarchySpec":
        allowed = {"version", "name", "n", "scales"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown hierarchy keys: {sorted(unknown)}")
        if d.get("version") != 1:
            raise ValueError(f"unsupported hierarchy version {d.get('version')!r}")
        scales = []
        for sc in d["scales"]:
            unknown = set(sc) - {"h", "groups"}
            if unknown:
                raise ValueError(f"unknown scale keys: {sorted(unknown)}")
            scales.append((int(sc["h"]), _partition(sc["groups"])))
        return HierarchySpec(name=d["name"], n=int(d["n"]), scales=tuple(scales))


@dataclass
class Violation:
    label: str
    scale: int
    detail: str


@dataclass
class ValidationReport:
    ok: bool
    violations: list[Violation]

    def labels(self) -> list[str]:
        return [v.label for v in self.violations]


def validate(spec: HierarchySpec) -> ValidationReport:
    """Check completeness, disjointness, recursive refinement, and the
    temporal schedule. Returns a report; never raises."""
    bad: list[Violation] = []
    atomic = set(ATOMIC_SEGMENTS)
    for v, (h, part) in enumerate(spec.scales):
        if h < 1 or h > spec.n:
            bad.append(Violation("temporal-range", v, f"h={h} outside [1, n={spec.n}]"))
        members: list[str] = []
        for seg in part:
            if not seg:
                bad.append(Violation("empty-segment", v, "partition contains an empty segment"))
            if not seg <= atomic:
                bad.append(Violation("unknown-atomic", v, f"unknown names {sorted(seg - atomic)}"))
            members.extend(seg)
        if len(members) != len(set(members)):
            bad.append(Violation("disjointness", v, "segments overlap"))
        if set(members) != atomic:
            missing = sorted(atomic - set(members))
            if missing:
                bad.append(Violation("completeness", v, f"missing {missing}"))
    for v in range(1, spec.num_scales):
        h_prev, part_prev = spec.scales[v - 1]
        h_cur, part_cur = spec.scales[v]
        if h_cur < h_prev:
            bad.append(Violation("temporal-monotonicity", v, f"h drops {h_prev} -> {h_cur}"))
        elif h_cur == h_prev and part_cur == part_prev:
            bad.append(
                Violation("temporal-monotonicity", v, "h must strictly grow when partition repeats")
            )
        for seg in part_cur:
            parents = [p for p in part_prev if seg <= p]
            if len(parents) != 1:
                bad.append(
                    Violation(
                        "refinement",
                        v,
                        f"segment {sorted(seg)} contained in {len(parents)} coarser segments",
                    )
                )
    if spec.scales and spec.scales[-1][0] != spec.n:
        bad.append(Violation("temporal-final", spec.num_scales - 1, f"final h != n={spec.n}"))
    return ValidationReport(ok=not bad, violations=bad)


# Reference temporal ladder: fractions of n reproducing (1,2,4,6,8,12,16)
# at the default n=16; rounded and forced strictly increasing elsewhere.
_LADDER_FRACTIONS = (1 / 16, 2 / 16, 4 / 16, 6 / 16, 8 / 16, 12 / 16, 1.0)


def temporal_ladder(n: int, levels: int = 7) -> tuple[int, ...]:
    if levels > n:
        raise ValueError(f"cannot fit {levels} strictly increasing resolutions in n={n}")
    if levels == 7:
        fracs = _LADDER_FRACTIONS
    else:
        fracs = tuple(np.geomspace(1.0 / n, 1.0, levels))
    out: list[int] = []
    for f in fracs:
        h = max(1, int(round(f * n)))
        if out and h <= out[-1]:
            h = out[-1] + 1
        out.append(min(h, n))
    out[-1] = n
    for i in range(len(out) - 2, -1, -1):
        if out[i] >= out[i + 1]:
            out[i] = out[i + 1] - 1
    if out[0] < 1:
        raise ValueError(f"cannot fit {levels} strictly increasing resolutions in n={n}")
    return tuple(out)


def _alternating(ladder, levels, temporal_per_partition):
    """Interleave temporal growth with partition refinement, coarse to fine."""
    scales = [(ladder[0], levels[0])]
    ti, pi = 0, 0
    while ti < len(ladder) - 1 or pi < len(levels) - 1:
        took_t = 0
        while took_t < temporal_per_partition and ti < len(ladder) - 1:
            ti += 1
            took_t += 1
            scales.append((ladder[ti], levels[pi]))
        if pi < len(levels) - 1:
            pi += 1
            scales.append((ladder[ti], levels[pi]))
    return tuple((h, part) for h, part in scales)


def preset(name: str, n: int = 16) -> HierarchySpec:
    """Build one of the five bundled hierarchy strategies at resolution n."""
    ladder = temporal_ladder(n, 7)
    if name == "perjoint-temporal":
        scales = tuple((h, ATOMIC_PARTITION) for h in ladder)
    elif name == "uplow-temporal-first":
        scales = tuple((h, WHOLE_BODY) for h in ladder) + tuple(
            (n, p) for p in _UPLOW_LEVELS[1:]
        )
    elif name == "inout-temporal-first":
        scales = tuple((h, WHOLE_BODY) for h in ladder) + tuple(
            (n, p) for p in _INOUT_LEVELS[1:]
        )
    elif name == "uplow-alternate":
        scales = _alternating(ladder, _UPLOW_LEVELS, temporal_per_partition=2)
    elif name == "inout-alternate":
        scales = _alternating(ladder, _INOUT_LEVELS, temporal_per_partition=1)
    else:
        raise ValueError(f"unknown hierarchy preset {name!r}; choose from {PRESET_NAMES}")
    return HierarchySpec(name=name, n=n, scales=scales)


def load_preset_file(name: str) -> HierarchySpec:
    """Load the bundled config file for a preset (n=16 reference form)."""
    text = resources.files("mogrid.presets").joinpath(f"{name}.json").read_text()
    return HierarchySpec.from_dict(json.loads(text))


def segment_index_map(spec: HierarchySpec, v: int) -> np.ndarray:
    """For each atomic segment, the index of its containing segment at scale v."""
    if not 0 <= v < spec.num_scales:
        raise IndexError(f"scale {v} out of range [0, {spec.num_scales})")
    part = spec.partition(v)
    out = np.empty(len(ATOMIC_SEGMENTS), dtype=np.int64)
    for ai, name in enumerate(ATOMIC_SEGMENTS):
        hits = [i for i, seg in enumerate(part) if name in seg]
        if len(hits) != 1:
            raise ValueError(f"invalid partition at scale {v}: {name} in {len(hits)} segments")
        out[ai] = hits[0]
    return out


def time_bin_map(n: int, h: int) -> np.ndarray:
    """For each latent frame t, its temporal bin at resolution h (floor rule)."""
    t = np.arange(n, dtype=np.int64)
    return (t * h) // n


def bin_groups(n: int, h: int) -> list[np.ndarray]:
    """Latent-frame index groups per temporal bin; every bin is non-empty."""
    bins = time_bin_map(n, h)
    return [np.flatnonzero(bins == b) for b in range(h)]


def segment_groups(spec: HierarchySpec, v: int) -> list[np.ndarray]:
    """Atomic-column index groups per partition segment at scale v."""
    idx = segment_index_map(spec, v)
    return [np.flatnonzero(idx == i) for i in range(spec.m(v))]


def valid_bins(spec: HierarchySpec, v: int, valid_latent: int) -> int:
    """Number of scale-v bins overlapping the first ``valid_latent`` frames."""
    h = spec.h(v)
    return int(np.ceil(valid_latent * h / spec.n)) if valid_latent > 0 else 0
