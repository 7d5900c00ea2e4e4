"""Coarse-to-fine generation: sample one token map per scale, conditioning
each scale on the accumulated coarser maps, with scale-adaptive classifier-
free guidance, then decode the accumulated latent.

Guidance runs two forward passes per scale (conditional on the prompt,
unconditional on the learned sentinel) and blends the bit logits as
(1 + s_k) * conditional - s_k * unconditional, where s_k grows with the
scale index in the default schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import hierarchy as hx
from . import numerics as nm
from . import predictor as pr
from . import tokenizer as tk
from .motion import MotionSequence

CFG_MODES = ("increasing", "fixed", "decreasing", "off")


@dataclass
class CFGSchedule:
    s_base: float = 5.0
    mode: str = "increasing"

    def __post_init__(self):
        if self.mode not in CFG_MODES:
            raise ValueError(f"cfg mode must be one of {CFG_MODES}, got {self.mode!r}")

    def scale(self, k: int, top: int) -> float:
        """Guidance strength s_k for scale k of 0..top."""
        if self.mode == "off":
            return 0.0
        if self.mode == "fixed":
            return self.s_base
        frac = k / top if top > 0 else 1.0
        if self.mode == "decreasing":
            frac = 1.0 - frac
        return self.s_base * frac

    def values(self, top: int) -> list[float]:
        return [self.scale(k, top) for k in range(top + 1)]


@dataclass
class SampleRequest:
    prompt: str
    n_frames: int
    seed: int = 0
    temperature: float = 1.0
    deterministic: bool = False
    cfg: CFGSchedule = None

    def __post_init__(self):
        if self.n_frames <= 0:
            raise ValueError("requested frame count must be positive")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.cfg is None:
            self.cfg = CFGSchedule()


@dataclass
class GenerationStats:
    scale_samples: int = 0
    prefix_builds: int = 0


def guided_logits(logit_con: np.ndarray, logit_un: np.ndarray, s_k: float) -> np.ndarray:
    """(1 + s_k) * conditional - s_k * unconditional, elementwise."""
    logit_con = np.asarray(logit_con)
    logit_un = np.asarray(logit_un)
    if logit_con.shape != logit_un.shape:
        raise ValueError(f"logit shapes differ: {logit_con.shape} vs {logit_un.shape}")
    return (1.0 + s_k) * logit_con - s_k * logit_un


class GenerationSession:
    """Frozen snapshots plus per-request sampling state."""

    def __init__(self, tok: tk.TokenizerSnapshot, pred: pr.PredictorSnapshot):
        if pred.spec.to_dict() != tok.spec.to_dict():
            raise ValueError("tokenizer and predictor were built on different hierarchies")
        if pred.d_code != tok.config.d:
            raise ValueError("tokenizer and predictor disagree on code width")
        self.tok = tok
        self.pred = pred
        self.spec = tok.spec
        self.level = 1.0 / math.sqrt(tok.config.d)

    @property
    def max_frames(self) -> int:
        return self.spec.n * tk.TEMPORAL_FACTOR

    # -- one scale ---------------------------------------------------------

    def _scale_logits(self, k, maps, block0_con, block0_un, text, s_k):
        """Guided (h_k*m_k, d) logits for scale k given coarser maps."""
        model = self.pred.model
        spec = self.spec
        prefixes = pr.build_prefixes_all([m[None] for m in maps], spec, upto=k + 1)
        sl = model.layout.block_slices[k]
        con = model.forward_logits(
            block0_con,
            prefixes,
            text,
            None,
            np.ones((1, 1, 1), dtype=model._dtype),
            upto=k + 1,
        ).data[0, sl.start : sl.stop]
        if s_k == 0.0:
            return con
        un = model.forward_logits(block0_un, prefixes, None, None, None, upto=k + 1).data[
            0, sl.start : sl.stop
        ]
        return guided_logits(con, un, s_k)

    def sample_scale(self, k, logits, valid_lat, temperature, deterministic, rng):
        """Per-bit decision from guided logits, then length masking."""
        spec = self.spec
        h, m = spec.h(k), spec.m(k)
        lg = logits.reshape(h, m, -1)
        if deterministic:
            bits = np.where(lg < 0, -self.level, self.level)
        else:
            p = 1.0 / (1.0 + np.exp(-lg.astype(np.float64) / temperature))
            draw = rng.uniform(size=lg.shape)
            bits = np.where(draw < p, self.level, -self.level)
        nb = hx.valid_bins(spec, k, valid_lat)
        bits[nb:] = -self.level
        return bits.astype(np.float32)

    # -- full request --------------------------------------------------------

    def generate(self, request: SampleRequest):
        """Coarse-to-fine sampling; returns (motion, token maps, stats)."""
        if request.n_frames > self.max_frames:
            raise ValueError(f"requested {request.n_frames} frames, maximum {self.max_frames}")
        model = self.pred.model
        spec = self.spec
        top = spec.top
        valid_lat = tk.latent_length(request.n_frames)
        stats = GenerationStats()

        pooled_con = model.pool_text(request.prompt)
        block0_con = model.block0_prefix(model.pooled_batch([pooled_con]))
        block0_un = model.block0_prefix(model.pooled_batch([None]))
        text = None if pooled_con is None else model.embedder.embed(request.prompt)[None]
        if pooled_con is None:
            block0_con = block0_un

        maps: list[np.ndarray] = []
        for k in range(spec.num_scales):
            s_k = request.cfg.scale(k, top)
            logits = self._scale_logits(k, maps, block0_con, block0_un, text, s_k)
            stats.prefix_builds += 1
            rng = nm.substream(request.seed, f"sample/{k}")
            bits = self.sample_scale(
                k, logits, valid_lat, request.temperature, request.deterministic, rng
            )
            stats.scale_samples += 1
            maps.append(bits)

        token_maps = [tk.TokenMap(v, m) for v, m in enumerate(maps)]
        f_hat = tk.accumulate(token_maps, spec)
        motion = self.tok.decode(f_hat, request.n_frames)
        return motion, token_maps, stats


def generate(tok, pred, request: SampleRequest):
    return GenerationSession(tok, pred).generate(request)


def prefix_decodes(tok: tk.TokenizerSnapshot, maps: list[tk.TokenMap], true_length: int):
    """Motions decoded from each accumulated prefix of the token maps
    (the coarse-to-fine reconstruction series)."""
    spec = tok.spec
    out = []
    acc = None
    for v, tm in enumerate(maps):
        u = tk.up(tm.bits, spec, v)
        acc = u if acc is None else acc + u
        out.append(tok.decode(acc.astype(np.float32), true_length))
    return out
