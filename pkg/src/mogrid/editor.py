"""Zero-shot text-driven motion editing.

A source motion is tokenized into its multi-scale maps; a binary preservation
mask per scale marks tokens to keep (1) or resample (0). During scale-by-scale
generation conditioned on the target prompt, sampled tokens are blended with
the source tokens under the mask, so edits stay local while the coarse motion
context survives. Masks come from three composable criteria: scale threshold
(keep everything below a cutoff scale), skeletal-temporal region (resample
chosen segments inside a frame interval), and semantic confidence (resample
source tokens the target-conditioned model finds unlikely).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import hierarchy as hx
from . import numerics as nm
from . import predictor as pr
from . import sampler as sp
from . import tokenizer as tk
from .motion import MotionSequence

CRITERIA = ("gs", "st", "sa")


@dataclass
class EditMaskSpec:
    enable: tuple[str, ...] = ("gs",)
    gamma: int = 3
    edit_joints: tuple[str, ...] = ()
    t0: int = 0
    t1: int = 0
    tau: float = 0.1

    def __post_init__(self):
        unknown = set(self.enable) - set(CRITERIA)
        if unknown:
            raise ValueError(f"unknown mask criteria {sorted(unknown)}; choose from {CRITERIA}")
        if not self.enable:
            raise ValueError("at least one mask criterion must be enabled")
        bad = set(self.edit_joints) - set(hx.ATOMIC_SEGMENTS)
        if bad:
            raise ValueError(f"unknown atomic segments {sorted(bad)}")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie strictly between 0 and 1")
        if self.t0 > self.t1 or self.t0 < 0:
            raise ValueError("need 0 <= t0 <= t1")
        if "st" in self.enable and not self.edit_joints:
            raise ValueError("skeletal-temporal criterion enabled with an empty joint set")


PreservationMask = list  # one (h_v, m_v) uint8 grid per scale


def empty_mask(spec: hx.HierarchySpec, fill: int = 0) -> PreservationMask:
    return [np.full((spec.h(v), spec.m(v)), fill, dtype=np.uint8) for v in range(spec.num_scales)]


def mask_global(spec: hx.HierarchySpec, gamma: int) -> PreservationMask:
    """Keep every token at scales below the threshold, none above."""
    if not 0 <= gamma <= spec.num_scales:
        raise ValueError(f"gamma must be in [0, {spec.num_scales}]")
    return [
        np.full((spec.h(v), spec.m(v)), 1 if v < gamma else 0, dtype=np.uint8)
        for v in range(spec.num_scales)
    ]


def mask_skeletal_temporal(
    spec: hx.HierarchySpec,
    edit_joints,
    t0: int,
    t1: int,
    n_frames: int,
) -> PreservationMask:
    """Resample (0) exactly the cells whose segment lies inside the edit set
    and whose time bin overlaps the frame interval [t0, t1]."""
    joints = frozenset(edit_joints)
    if not joints:
        raise ValueError("empty edit joint set")
    if not 0 <= t0 <= t1 < n_frames:
        raise ValueError(f"need 0 <= t0 <= t1 < {n_frames}")
    # frames -> latent frames (any overlap counts) -> per-scale bins
    l0 = t0 // tk.TEMPORAL_FACTOR
    l1 = t1 // tk.TEMPORAL_FACTOR
    out = []
    for v in range(spec.num_scales):
        h, m = spec.h(v), spec.m(v)
        bins = hx.time_bin_map(spec.n, h)
        b0, b1 = int(bins[l0]), int(bins[l1])
        grid = np.ones((h, m), dtype=np.uint8)
        seg_hit = np.array([seg <= joints for seg in spec.partition(v)])
        grid[b0 : b1 + 1, seg_hit] = 0
        out.append(grid)
    return out


def mask_semantic(
    source_maps: list[tk.TokenMap],
    target_prompt: str,
    tau: float,
    session: sp.GenerationSession,
    cfg: sp.CFGSchedule | None = None,
) -> PreservationMask:
    """Teacher-force the source maps under the target prompt; keep a token
    iff the geometric mean of its bit probabilities (under the guided logits)
    reaches tau."""
    cfg = cfg or sp.CFGSchedule()
    spec = session.spec
    arrs = [tm.bits for tm in source_maps]
    lg_con = session.pred.teacher_logits(arrs, target_prompt)
    lg_un = session.pred.teacher_logits(arrs, None)
    layout = session.pred.model.layout
    out = []
    log_tau = np.log(tau)
    for v in range(spec.num_scales):
        sl = layout.block_slices[v]
        s_k = cfg.scale(v, spec.top)
        lg = sp.guided_logits(lg_con[sl], lg_un[sl], s_k).reshape(
            spec.h(v), spec.m(v), -1
        )
        ll = pr.bit_log_likelihood(lg, arrs[v])
        # geometric-mean confidence, compared in log space (no underflow)
        out.append((ll.mean(axis=-1) >= log_tau).astype(np.uint8))
    return out


def combine(masks: list[PreservationMask]) -> PreservationMask:
    """Element-wise OR of the enabled criteria (sum clamped to {0,1})."""
    if not masks:
        raise ValueError("no masks to combine")
    out = [g.copy() for g in masks[0]]
    for other in masks[1:]:
        if len(other) != len(out):
            raise ValueError("masks span different scale counts")
        for v, g in enumerate(other):
            if g.shape != out[v].shape:
                raise ValueError(f"mask shape mismatch at scale {v}")
            out[v] = np.minimum(out[v] + g, 1).astype(np.uint8)
    return out


def build_mask(
    mask_spec: EditMaskSpec,
    spec: hx.HierarchySpec,
    source_maps: list[tk.TokenMap],
    target_prompt: str,
    session: sp.GenerationSession,
    n_frames: int,
    cfg: sp.CFGSchedule | None = None,
) -> PreservationMask:
    parts = []
    if "gs" in mask_spec.enable:
        parts.append(mask_global(spec, mask_spec.gamma))
    if "st" in mask_spec.enable:
        parts.append(
            mask_skeletal_temporal(spec, mask_spec.edit_joints, mask_spec.t0, mask_spec.t1, n_frames)
        )
    if "sa" in mask_spec.enable:
        parts.append(mask_semantic(source_maps, target_prompt, mask_spec.tau, session, cfg))
    return combine(parts)


@dataclass
class EditResult:
    motion: MotionSequence
    maps: list[tk.TokenMap]
    mask: PreservationMask
    stats: sp.GenerationStats = field(default_factory=sp.GenerationStats)


def edit(
    session: sp.GenerationSession,
    source: MotionSequence,
    target_prompt: str,
    mask_spec: EditMaskSpec,
    seed: int = 0,
    temperature: float = 1.0,
    deterministic: bool = False,
    cfg: sp.CFGSchedule | None = None,
    mask_override: PreservationMask | None = None,
) -> EditResult:
    """Blend source tokens with freshly sampled target tokens, scale by scale.

    At every scale the prefix comes from the already-blended coarser maps, so
    resampled regions condition on the kept source context.
    """
    cfg = cfg or sp.CFGSchedule()
    spec = session.spec
    model = session.pred.model
    source_maps, _ = session.tok.tokenize(source)
    if mask_override is not None:
        mask = mask_override
    else:
        mask = build_mask(
            mask_spec, spec, source_maps, target_prompt, session, source.n_frames, cfg
        )
    for v, g in enumerate(mask):
        if g.shape != (spec.h(v), spec.m(v)):
            raise ValueError(f"mask shape {g.shape} wrong at scale {v}")

    valid_lat = tk.latent_length(source.true_length)
    pooled_con = model.pool_text(target_prompt)
    block0_con = model.block0_prefix(model.pooled_batch([pooled_con]))
    block0_un = model.block0_prefix(model.pooled_batch([None]))
    text = None if pooled_con is None else model.embedder.embed(target_prompt)[None]
    if pooled_con is None:
        block0_con = block0_un

    stats = sp.GenerationStats()
    blended: list[np.ndarray] = []
    for k in range(spec.num_scales):
        s_k = cfg.scale(k, spec.top)
        logits = session._scale_logits(k, blended, block0_con, block0_un, text, s_k)
        stats.prefix_builds += 1
        rng = nm.substream(seed, f"sample/{k}")
        sampled = session.sample_scale(k, logits, valid_lat, temperature, deterministic, rng)
        stats.scale_samples += 1
        keep = mask[k][:, :, None].astype(np.float32)
        blended.append(keep * source_maps[k].bits + (1.0 - keep) * sampled)

    token_maps = [tk.TokenMap(v, m) for v, m in enumerate(blended)]
    f_hat = tk.accumulate(token_maps, spec)
    motion = session.tok.decode(f_hat, source.true_length)
    return EditResult(motion, token_maps, mask, stats)
