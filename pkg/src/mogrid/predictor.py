"""Next-scale token-map predictor: a transformer that reads the structural
prefix of all coarser scales plus word-level text features and emits per-bit
logits for the next scale's token map.

Blocks (one per scale) are processed in a single sequence under a block-wise
causal mask: positions in block k attend to blocks 0..k (bidirectional inside
a block) and to the text via cross-attention. 2-D rotary phases encode (time
bin, body segment) coordinates. Training corrupts the input chain with random
bit flips (re-quantizing everything downstream) while targets stay clean, and
drops the text condition at 10% so classifier-free guidance has an
unconditional branch.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, asdict

import numpy as np

from . import hierarchy as hx
from . import io as mio
from . import numerics as nm
from . import tokenizer as tk
from .numerics import Tensor

TEXT_TABLE_SEED = 60661  # fixed: the hash embedder is part of the artifact


@dataclass
class PredictorConfig:
    blocks: int = 4
    width: int = 128
    heads: int = 4
    d_text: int = 64
    mlp_ratio: float = 4.0
    perturb_prob: float = 0.3
    cond_drop: float = 0.1
    max_flip_fraction: float = 0.1
    rope_base: float = 100.0
    text_table: int = 4096
    max_words: int = 32

    def __post_init__(self):
        if self.width % (2 * self.heads) != 0:
            raise ValueError("width must be divisible by 2*heads for rotary pairing")
        if (self.width // self.heads) % 4 != 0:
            raise ValueError("head dim must be divisible by 4 (two rotary axes, paired)")
        if not 0.0 <= self.perturb_prob <= 1.0:
            raise ValueError("perturb probability must be in [0, 1]")
        if not 0.0 <= self.cond_drop <= 1.0:
            raise ValueError("condition-dropout probability must be in [0, 1]")


class HashTextEmbedder:
    """Deterministic stand-in for a pretrained text encoder: each whitespace
    token hashes to a row of a fixed random table, preserving the word-level
    sequence interface."""

    def __init__(self, d_text: int, table_size: int, max_words: int):
        rng = np.random.default_rng(TEXT_TABLE_SEED)
        self.table = rng.normal(0.0, 1.0 / math.sqrt(d_text), (table_size, d_text)).astype(
            np.float32
        )
        self.max_words = max_words

    @staticmethod
    def tokenize(text: str) -> list[str]:
        words = re.sub(r"[^\w\s-]", " ", text.lower()).split()
        return words

    def embed(self, text: str) -> np.ndarray:
        """(L, d_text) word vectors; empty prompt gives an empty sequence."""
        import zlib

        words = self.tokenize(text)[: self.max_words]
        if not words:
            return np.zeros((0, self.table.shape[1]), dtype=np.float32)
        rows = [zlib.crc32(w.encode("utf-8")) % len(self.table) for w in words]
        return self.table[rows].copy()


# ---------------------------------------------------------------------------
# sequence geometry: coordinates, block ids, masks
# ---------------------------------------------------------------------------


class SequenceLayout:
    """Flattened multi-scale grid: per position a (time, segment, scale)
    coordinate. Time is rescaled to the finest grid (bin * n/h); a segment's
    coordinate is the mean of its atomic indices."""

    def __init__(self, spec: hx.HierarchySpec):
        self.spec = spec
        t_coords, s_coords, block_ids = [], [], []
        self.block_slices: list[slice] = []
        off = 0
        for v in range(spec.num_scales):
            h, m = spec.h(v), spec.m(v)
            seg_pos = np.array(
                [np.mean([hx.ATOMIC_SEGMENTS.index(a) for a in sorted(seg)]) for seg in spec.partition(v)]
            )
            tt = (np.arange(h) * (spec.n / h))[:, None] * np.ones((1, m))
            ss = np.ones((h, 1)) * seg_pos[None, :]
            t_coords.append(tt.reshape(-1))
            s_coords.append(ss.reshape(-1))
            block_ids.append(np.full(h * m, v))
            self.block_slices.append(slice(off, off + h * m))
            off += h * m
        self.t_coord = np.concatenate(t_coords)
        self.s_coord = np.concatenate(s_coords)
        self.block_id = np.concatenate(block_ids).astype(np.int64)
        self.total = off

    def causal_mask(self, length: int, dtype) -> np.ndarray:
        bid = self.block_id[:length]
        allow = bid[None, :] <= bid[:, None]
        mask = np.where(allow, 0.0, -1e9).astype(dtype)
        return mask[None, None]

    def rope_tables(self, head_dim: int, base: float, dtype):
        """Full-width cos/sin tables (1, 1, L, head_dim): the first half of
        each head rotates by the time coordinate, the second by the segment
        coordinate; consecutive dims pair up within each half."""
        half = head_dim // 2
        cos_parts, sin_parts = [], []
        for coord in (self.t_coord, self.s_coord):
            pairs = half // 2
            inv_freq = base ** (-np.arange(pairs) / pairs)
            ang = coord[:, None] * inv_freq[None, :]
            cos_parts.append(np.repeat(np.cos(ang), 2, axis=1))
            sin_parts.append(np.repeat(np.sin(ang), 2, axis=1))
        cos = np.concatenate(cos_parts, axis=1).astype(dtype)
        sin = np.concatenate(sin_parts, axis=1).astype(dtype)
        return cos[None, None], sin[None, None]

    def valid_position_mask(self, valid_latent: np.ndarray, upto: int | None = None) -> np.ndarray:
        """(B, L) 1.0 where the position's time bin overlaps valid frames."""
        spec = self.spec
        upto = spec.num_scales if upto is None else upto
        cols = []
        for v in range(upto):
            h, m = spec.h(v), spec.m(v)
            nb = np.ceil(np.asarray(valid_latent) * h / spec.n).astype(np.int64)
            keep = (np.arange(h)[None, :] < nb[:, None]).astype(np.float64)
            cols.append(np.repeat(keep, m, axis=1))
        return np.concatenate(cols, axis=1)


def _apply_rope(x: Tensor, tabs) -> Tensor:
    """x is (B, H, L, Dh); first half of Dh rotates by time, second by segment."""
    cos, sin = tabs
    return nm.rope_rotate(x, cos, sin)


def _heads(x: Tensor, n_heads: int) -> Tensor:
    B, L, W = x.shape
    return nm.transpose(nm.reshape(x, (B, L, n_heads, W // n_heads)), (0, 2, 1, 3))


def _unheads(x: Tensor) -> Tensor:
    B, H, L, Dh = x.shape
    return nm.reshape(nm.transpose(x, (0, 2, 1, 3)), (B, L, H * Dh))


def _attention(q: Tensor, k: Tensor, v: Tensor, mask_add) -> Tensor:
    # scale folded into q: it is tiny next to the (Lq, Lk) score grid
    scores = nm.matmul(nm.mul(q, 1.0 / math.sqrt(q.shape[-1])), nm.transpose(k, (0, 1, 3, 2)))
    if mask_add is None:
        w = nm.softmax(scores, axis=-1)
    else:
        w = nm.masked_softmax(scores, mask_add, axis=-1)
    return nm.matmul(w, v)


class LayerNorm:
    def __init__(self, store, name, dim):
        self.g = store.param(f"{name}.g", (dim,), init="ones")
        self.b = store.param(f"{name}.b", (dim,), init="zeros")

    def __call__(self, x):
        return nm.layer_norm(x, self.g, self.b)


class TransformerBlock:
    def __init__(self, store, name, cfg: PredictorConfig):
        W = cfg.width
        L = tk.Linear
        self.heads = cfg.heads
        self.ln1 = LayerNorm(store, f"{name}.ln1", W)
        self.wqkv = L(store, f"{name}.attn.qkv", W, 3 * W)
        self.wo = L(store, f"{name}.attn.o", W, W)
        self.ln2 = LayerNorm(store, f"{name}.ln2", W)
        self.cq = L(store, f"{name}.cross.q", W, W)
        self.ck = L(store, f"{name}.cross.k", cfg.d_text, W)
        self.cv = L(store, f"{name}.cross.v", cfg.d_text, W)
        # zero-init so an untrained cross path contributes nothing: a model
        # trained fully unconditionally stays text-independent at inference
        self.co = L(store, f"{name}.cross.o", W, W, std=0.0)
        self.ln3 = LayerNorm(store, f"{name}.ln3", W)
        hidden = int(W * cfg.mlp_ratio)
        self.fc1 = L(store, f"{name}.mlp.fc1", W, hidden)
        self.fc2 = L(store, f"{name}.mlp.fc2", hidden, W)

    def __call__(self, x, rope_tabs, causal_mask, text, text_mask, cond_gate):
        h = self.ln1(x)
        W = x.shape[-1]
        qkv = self.wqkv(h)
        q = _apply_rope(_heads(qkv[:, :, :W], self.heads), rope_tabs)
        k = _apply_rope(_heads(qkv[:, :, W : 2 * W], self.heads), rope_tabs)
        v = _heads(qkv[:, :, 2 * W :], self.heads)
        x = nm.add(x, self.wo(_unheads(_attention(q, k, v, causal_mask))))
        if text is not None:
            h = self.ln2(x)
            q = _heads(self.cq(h), self.heads)
            k = _heads(self.ck(text), self.heads)
            v = _heads(self.cv(text), self.heads)
            out = self.co(_unheads(_attention(q, k, v, text_mask)))
            if cond_gate is not None:
                out = nm.mul(out, cond_gate)
            x = nm.add(x, out)
        h = self.ln3(x)
        return nm.add(x, self.fc2(nm.gelu(self.fc1(h))))


class NextScalePredictor:
    """Transformer over the flattened multi-scale sequence."""

    def __init__(self, store: nm.ParamStore, cfg: PredictorConfig, spec: hx.HierarchySpec, d_code: int):
        self.cfg = cfg
        self.spec = spec
        self.d_code = d_code
        self.layout = SequenceLayout(spec)
        self.embedder = HashTextEmbedder(cfg.d_text, cfg.text_table, cfg.max_words)
        self.word_embed = tk.Linear(store, "word_embed", d_code, cfg.width)
        self.scale_embed = store.param("scale_embed", (spec.num_scales, cfg.width))
        self.text_proj = tk.Linear(store, "text_proj", cfg.d_text, d_code)
        self.null_text = store.param("null_text", (cfg.d_text,))
        self.blocks = [
            TransformerBlock(store, f"block{i}", cfg) for i in range(cfg.blocks)
        ]
        self.ln_f = LayerNorm(store, "ln_f", cfg.width)
        self.head = tk.Linear(store, "head", cfg.width, d_code)
        self._dtype = store.dtype
        self._rope = self.layout.rope_tables(cfg.width // cfg.heads, cfg.rope_base, self._dtype)

    # -- text -----------------------------------------------------------

    def pool_text(self, prompt: str | None) -> np.ndarray | None:
        """Mean-pooled word vectors, or None for the unconditional sentinel."""
        if prompt is None:
            return None
        vecs = self.embedder.embed(prompt)
        if len(vecs) == 0:
            return None
        return vecs.mean(axis=0)

    def block0_prefix(self, pooled: Tensor) -> Tensor:
        """(B, d_text) -> (B, h0*m0, d): learned projection, broadcast."""
        h0m0 = self.spec.h(0) * self.spec.m(0)
        proj = self.text_proj(pooled)  # (B, d_code)
        B, d = proj.shape
        return nm.take_axis(nm.reshape(proj, (B, 1, d)), np.zeros(h0m0, dtype=np.int64), axis=1)

    def pooled_batch(self, pooled_list: list[np.ndarray | None]) -> Tensor:
        """Stack per-sample pooled text, substituting the learned sentinel."""
        B = len(pooled_list)
        vals = np.zeros((B, self.cfg.d_text), dtype=self._dtype)
        gate = np.zeros((B, 1), dtype=self._dtype)
        for i, p in enumerate(pooled_list):
            if p is not None:
                vals[i] = p
                gate[i] = 1.0
        null_row = nm.reshape(self.null_text, (1, self.cfg.d_text))
        return nm.add(nm.mul(nm.constant(vals), gate), nm.mul(null_row, 1.0 - gate))

    # -- core forward ---------------------------------------------------

    def forward_logits(
        self,
        block0: Tensor,
        prefix_grids: list[np.ndarray],
        text: np.ndarray | None,
        text_mask: np.ndarray | None,
        cond_gate: np.ndarray | None,
        upto: int | None = None,
    ) -> Tensor:
        """Logits (B, L_upto, d) over blocks 0..upto-1.

        ``block0`` is the (B, h0*m0, d) text-derived prefix; ``prefix_grids``
        hold the structural prefixes for scales 1..upto-1 as (B, h, m, d)
        arrays. ``text`` is (B, Lt, d_text) word vectors or None for a fully
        unconditional pass; ``cond_gate`` (B, 1, 1) zeroes cross-attention for
        unconditional samples inside a mixed batch.
        """
        spec = self.spec
        upto = spec.num_scales if upto is None else upto
        parts = [block0]
        for k in range(1, upto):
            g = prefix_grids[k - 1]
            B = g.shape[0]
            parts.append(nm.constant(g.reshape(B, spec.h(k) * spec.m(k), self.d_code)))
        seq = parts[0] if len(parts) == 1 else nm.concat(parts, axis=1)
        L = seq.shape[1]
        x = self.word_embed(seq)
        x = nm.add(x, nm.take_axis(self.scale_embed, self.layout.block_id[:L], axis=0))
        causal = self.layout.causal_mask(L, self._dtype)
        rope = (self._rope[0][:, :, :L], self._rope[1][:, :, :L])
        tmask = None if text_mask is None else text_mask
        gate = None if cond_gate is None else nm.constant(cond_gate)
        text_t = None if text is None else nm.constant(text)
        for blk in self.blocks:
            x = blk(x, rope, causal, text_t, tmask, gate)
        return self.head(self.ln_f(x))


# ---------------------------------------------------------------------------
# prefixes, loss, perturbation
# ---------------------------------------------------------------------------


def build_prefix(maps: list[np.ndarray], spec: hx.HierarchySpec, k: int) -> np.ndarray:
    """Structural prefix for scale k >= 1 from coarser maps (batched arrays):
    broadcast every coarser map to the full grid, sum, pool to (h_k, m_k)."""
    if k < 1 or k > spec.num_scales:
        raise ValueError(f"scale {k} out of range")
    if len(maps) < k:
        raise ValueError(f"need {k} coarser maps, got {len(maps)}")
    acc = None
    for v in range(k):
        u = tk.up_t(tk._float_tensor(maps[v]), spec, v)
        acc = u if acc is None else nm.add(acc, u)
    return tk.down_t(acc, spec, k).data


def build_prefixes_all(maps: list[np.ndarray], spec: hx.HierarchySpec, upto: int | None = None):
    """Prefixes for scales 1..upto-1, sharing the running accumulation."""
    upto = spec.num_scales if upto is None else upto
    out = []
    acc = None
    for k in range(1, upto):
        u = tk.up_t(tk._float_tensor(maps[k - 1]), spec, k - 1)
        acc = u if acc is None else nm.add(acc, u)
        out.append(tk.down_t(acc, spec, k).data)
    return out


def loss_next_t(
    logits: Tensor, targets: list[np.ndarray], layout: SequenceLayout, valid_mask: np.ndarray
) -> Tensor:
    """Sum over scales of the per-scale mean binary cross-entropy.

    ``targets`` are the clean (B, h, m, d) token grids; the +level bit maps to
    class 1. Positions whose time bin is past the valid length are excluded.
    """
    spec = layout.spec
    total = None
    for v, tgt in enumerate(targets):
        sl = layout.block_slices[v]
        lg = logits[:, sl]
        B = tgt.shape[0]
        t01 = (tgt.reshape(B, -1, tgt.shape[-1]) > 0).astype(logits.dtype.type)
        w = valid_mask[:, sl][:, :, None].astype(logits.dtype.type)
        count = float(w.sum()) * tgt.shape[-1]
        if count == 0:
            continue
        bce = nm.sub(nm.softplus(lg), nm.mul(lg, t01))
        term = nm.mul(nm.tsum(nm.mul(bce, w)), 1.0 / count)
        total = term if total is None else nm.add(total, term)
    if total is None:
        raise ValueError("no valid positions in batch")
    return total


def bit_log_likelihood(logits: np.ndarray, bits: np.ndarray) -> np.ndarray:
    """Per-bit log prob of observed signs under sigmoid(logits): stable
    -softplus(-x) for +bits, -softplus(x) for -bits."""
    x = np.where(bits > 0, logits, -logits)
    return -np.logaddexp(0.0, -x)


def perturb_bits(
    f: np.ndarray,
    clean_maps: list[np.ndarray],
    spec: hx.HierarchySpec,
    valid_latent: np.ndarray,
    r: float,
    max_fraction: float,
    rng: np.random.Generator,
) -> list[np.ndarray]:
    """Per sample, with probability r: flip a random fraction of one random
    scale's valid bits and re-quantize every finer scale from the perturbed
    state. Returns the corrupted input chain; targets stay the clean maps."""
    B = f.shape[0]
    maps = [m.copy() for m in clean_maps]
    d = f.shape[-1]
    level = 1.0 / math.sqrt(d)
    for b in range(B):
        if rng.uniform() >= r:
            continue
        v = int(rng.integers(0, spec.num_scales))
        frac = (1.0 - rng.uniform()) * max_fraction  # in (0, max_fraction]
        h, m = spec.h(v), spec.m(v)
        nb = hx.valid_bins(spec, v, int(valid_latent[b]))
        n_cells = nb * m * d
        if n_cells == 0:
            continue
        count = max(1, int(round(frac * n_cells)))
        flat_idx = rng.choice(n_cells, size=min(count, n_cells), replace=False)
        grid = maps[v][b, :nb].reshape(-1)
        grid[flat_idx] = -grid[flat_idx]
        maps[v][b, :nb] = grid.reshape(nb, m, d)
        if v + 1 < spec.num_scales:
            _requantize_tail(f[b], maps, spec, int(valid_latent[b]), b, v, level)
    return maps


def _requantize_tail(f_b, maps, spec, valid_lat, b, v, level):
    """Recompute scales v+1.. for one sample from its perturbed chain."""
    acc = None
    for w in range(v + 1):
        u = tk.up(maps[w][b], spec, w)
        acc = u if acc is None else acc + u
    for w in range(v + 1, spec.num_scales):
        z = tk.down(f_b - acc, spec, w)
        q = tk.quantize_bits(z)
        nb = hx.valid_bins(spec, w, valid_lat)
        q[nb:] = -level
        maps[w][b] = q.astype(maps[w].dtype)
        acc = acc + tk.up(q, spec, w)


# ---------------------------------------------------------------------------
# snapshot and training
# ---------------------------------------------------------------------------


class PredictorSnapshot:
    def __init__(self, cfg: PredictorConfig, spec: hx.HierarchySpec, d_code: int, store: nm.ParamStore):
        self.config = cfg
        self.spec = spec
        self.d_code = d_code
        self.store = store
        self.model = NextScalePredictor(store, cfg, spec, d_code)

    @classmethod
    def build(cls, cfg: PredictorConfig, spec: hx.HierarchySpec, d_code: int, seed: int = 0):
        return cls(cfg, spec, d_code, nm.ParamStore(seed))

    def save(self, path):
        meta = {
            "kind": "predictor",
            "config": asdict(self.config),
            "hierarchy": self.spec.to_dict(),
            "d_code": self.d_code,
        }
        mio.save_checkpoint(path, self.store.state_dict(), meta)

    @classmethod
    def load(cls, path):
        params, meta = mio.load_checkpoint(path)
        if meta.get("kind") != "predictor":
            raise mio.FormatError(f"not a predictor checkpoint: kind={meta.get('kind')!r}")
        cfg = PredictorConfig(**meta["config"])
        spec = hx.HierarchySpec.from_dict(meta["hierarchy"])
        snap = cls.build(cfg, spec, int(meta["d_code"]))
        snap.store.load_state_dict(params)
        return snap

    # -- teacher-forced scoring (shared by eval and the semantic edit mask) --

    def teacher_logits(
        self,
        maps: list[np.ndarray],
        prompt: str | None,
        upto: int | None = None,
    ) -> np.ndarray:
        """Forward the clean chain, returning (L, d) logits per position."""
        model = self.model
        spec = self.spec
        batched = [m[None] for m in maps]
        pooled = model.pool_text(prompt)
        block0 = model.block0_prefix(model.pooled_batch([pooled]))
        prefixes = build_prefixes_all(batched, spec, upto)
        if pooled is None:
            text = None
            tmask = None
            gate = None
        else:
            text = model.embedder.embed(prompt)[None]
            tmask = None
            gate = np.ones((1, 1, 1), dtype=model._dtype)
        logits = model.forward_logits(block0, prefixes, text, tmask, gate, upto)
        return logits.data[0]


def tokenize_corpus(clips, tok: "tk.TokenizerSnapshot"):
    """Encode and quantize every clip once (the tokenizer stays frozen)."""
    f_list, valid = [], []
    for c in clips:
        f_list.append(tok.encode(c).values)
        valid.append(tk.latent_length(c.true_length))
    f_all = np.stack(f_list)
    valid = np.array(valid)
    tokens, _, _, _ = tk.residual_chain(tk._float_tensor(f_all), tok.spec, valid)
    return f_all, [t.data for t in tokens], valid


def train_predictor(
    clips,
    captions: list[str],
    tok: "tk.TokenizerSnapshot",
    cfg: PredictorConfig,
    seed: int = 0,
    steps: int = 3000,
    batch_size: int = 8,
    lr: float = 1e-3,
) -> tk.TrainResult:
    if len(clips) != len(captions):
        raise ValueError("clips and captions differ in length")
    spec = tok.spec
    snap = PredictorSnapshot.build(cfg, spec, tok.config.d, seed)
    model = snap.model

    f_all, clean_maps, valid_latent = tokenize_corpus(clips, tok)
    word_vecs = [model.embedder.embed(c) for c in captions]
    pooled = [model.pool_text(c) for c in captions]
    layout = model.layout

    adam = nm.Adam(snap.store, lr=lr)
    rng_batch = nm.substream(seed, "batch")
    rng_perturb = nm.substream(seed, "perturb")
    rng_drop = nm.substream(seed, "drop")
    batch_size = min(batch_size, len(clips))
    trace = []
    with nm.no_finite_checks(), warnings.catch_warnings():
        # fully-dropped batches leave the cross-attention path untouched;
        # the resulting zero-gradient warnings are expected there
        warnings.simplefilter("once")
        for step in range(1, steps + 1):
            idx = rng_batch.integers(0, len(clips), size=batch_size)
            clean = [m[idx] for m in clean_maps]
            maps_in = perturb_bits(
                f_all[idx],
                clean,
                spec,
                valid_latent[idx],
                cfg.perturb_prob,
                cfg.max_flip_fraction,
                rng_perturb,
            )
            dropped = rng_drop.uniform(size=batch_size) < cfg.cond_drop
            pooled_batch = [None if dropped[i] else pooled[c] for i, c in enumerate(idx)]
            text, tmask, gate = _batch_text(word_vecs, idx, dropped, cfg, model._dtype)
            block0 = model.block0_prefix(model.pooled_batch(pooled_batch))
            prefixes = build_prefixes_all(maps_in, spec)
            logits = model.forward_logits(block0, prefixes, text, tmask, gate)
            vmask = layout.valid_position_mask(valid_latent[idx])
            loss = loss_next_t(logits, clean, layout, vmask)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise nm.TrainingDiverged(step)
            nm.backward(loss, snap.store)
            adam.step()
            trace.append((step, loss_val))
    return tk.TrainResult(snap, trace, ["step", "loss"])


def _batch_text(word_vecs, idx, dropped, cfg: PredictorConfig, dtype):
    """Pad word vectors into (B, Lt, d_text) + additive key mask + cross gate.

    Samples whose condition is dropped keep zeroed rows and a zero gate, so
    cross-attention contributes exactly nothing for them.
    """
    lengths = [0 if dropped[i] else len(word_vecs[c]) for i, c in enumerate(idx)]
    lt = max(max(lengths), 1)
    B = len(idx)
    text = np.zeros((B, lt, cfg.d_text), dtype=dtype)
    key_mask = np.full((B, 1, 1, lt), -1e9, dtype=dtype)
    gate = np.zeros((B, 1, 1), dtype=dtype)
    for i, c in enumerate(idx):
        n = lengths[i]
        if n > 0:
            text[i, :n] = word_vecs[c][:n]
            key_mask[i, 0, 0, :n] = 0.0
            gate[i] = 1.0
    if not gate.any():
        return None, None, None
    return text, key_mask, gate
