"""Skeletal-temporal tokenizer: encoder/decoder, bitwise multi-scale residual
quantization, losses, and training.

The encoder maps a motion (N, 22, 6) to a latent grid (n=N/4, 7, d) via two
stride-2 temporal pools and two learnable skeleton-aware pooling stages. The
latent is quantized scale by scale: pool the running residual to the scale's
(h, m) resolution, snap each d-vector to +/-1/sqrt(d), broadcast back, and
subtract. Residuals are kept in accumulator form (r_v = f - sum of coarser
broadcasts) so ``f - accumulate(maps)`` reproduces the final residual
bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import hierarchy as hx
from . import io as mio
from . import numerics as nm
from .motion import FEATURE_DIM, MotionSequence
from .numerics import Tensor

TEMPORAL_FACTOR = 4  # two stride-2 pooling stages


def latent_length(n_frames: int) -> int:
    """Motion frames -> latent frames (conservative: partial windows count)."""
    return -(-n_frames // TEMPORAL_FACTOR)


@dataclass
class TokenizerConfig:
    d: int = 24  # code bit-width; desk-scale runs use 16
    entropy_weight: float = 0.1
    entropy_temperature: float = 1.0
    widths: tuple[int, int, int] = (32, 48, 64)  # channels at 22/12/7 joints
    quantizer: str = "bitwise"  # "categorical" is a rejected stub

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("code width d must be >= 1")
        if self.entropy_weight < 0:
            raise ValueError("entropy weight must be >= 0")
        if self.quantizer not in ("bitwise", "categorical"):
            raise ValueError(f"unknown quantizer {self.quantizer!r}")

    def require_bitwise(self):
        if self.quantizer != "bitwise":
            raise NotImplementedError(
                "categorical codebook quantization is a config stub and cannot be activated"
            )


@dataclass
class LatentGrid:
    values: np.ndarray  # (n, j, d)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def j(self):
        return self.values.shape[1]

    @property
    def d(self):
        return self.values.shape[2]


@dataclass
class TokenMap:
    v: int
    bits: np.ndarray  # (h, m, d), entries +/- 1/sqrt(d)

    @property
    def level(self) -> float:
        return 1.0 / math.sqrt(self.bits.shape[2])


# ---------------------------------------------------------------------------
# quantizer and scaling operators
# ---------------------------------------------------------------------------


def quantize_bits(z: np.ndarray) -> np.ndarray:
    """Snap each entry to sign(z)/sqrt(d) with sign(0) := +1."""
    z = np.asarray(z)
    level = 1.0 / math.sqrt(z.shape[-1])
    return np.where(z < 0, -level, level).astype(z.dtype if z.dtype.kind == "f" else np.float64)


def down_t(x: Tensor, spec: hx.HierarchySpec, v: int) -> Tensor:
    """Pool (..., n, j, d) to (..., h_v, m_v, d): bin means over time, segment
    means over atomic columns. Exact on constant bins (anchored means)."""
    x = nm.as_tensor(x)
    tax, sax = x.ndim - 3, x.ndim - 2
    x = nm.group_mean(x, hx.bin_groups(spec.n, spec.h(v)), axis=tax)
    return nm.group_mean(x, hx.segment_groups(spec, v), axis=sax)


def up_t(x: Tensor, spec: hx.HierarchySpec, v: int) -> Tensor:
    """Broadcast (..., h_v, m_v, d) back to (..., n, j, d): nearest-repeat in
    time, copy each segment value to its atomic columns."""
    x = nm.as_tensor(x)
    tax, sax = x.ndim - 3, x.ndim - 2
    x = nm.take_axis(x, hx.time_bin_map(spec.n, spec.h(v)), axis=tax)
    return nm.take_axis(x, hx.segment_index_map(spec, v), axis=sax)


def _float_tensor(x: np.ndarray) -> Tensor:
    arr = np.asarray(x)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    return Tensor(arr)


def down(x: np.ndarray, spec: hx.HierarchySpec, v: int) -> np.ndarray:
    return down_t(_float_tensor(x), spec, v).data


def up(x: np.ndarray, spec: hx.HierarchySpec, v: int) -> np.ndarray:
    return up_t(_float_tensor(x), spec, v).data


def _keep_masks(spec: hx.HierarchySpec, valid_latent: np.ndarray, dtype) -> list[np.ndarray]:
    """Per scale: (B, h, 1, 1) float mask of bins overlapping valid frames."""
    out = []
    for v in range(spec.num_scales):
        h = spec.h(v)
        nb = np.ceil(valid_latent * h / spec.n).astype(np.int64)
        keep = (np.arange(h)[None, :] < nb[:, None]).astype(dtype)
        out.append(keep[:, :, None, None])
    return out


def residual_chain(
    f: Tensor,
    spec: hx.HierarchySpec,
    valid_latent: np.ndarray | None = None,
    want_prequant: bool = False,
):
    """Quantize a batched latent (B, n, j, d) into one token grid per scale.

    Returns (token tensors, final residual, accumulated latent, pre-quant
    tensors). Bins fully beyond the valid length are forced to the negative
    level before the residual subtraction, matching the padding contract.
    """
    f = nm.as_tensor(f)
    B, n, j, d = f.shape
    level = 1.0 / math.sqrt(d)
    if valid_latent is None:
        valid_latent = np.full(B, n, dtype=np.int64)
    keeps = _keep_masks(spec, np.asarray(valid_latent), f.dtype.type)

    acc = None
    tokens: list[Tensor] = []
    prequant: list[Tensor] = []
    for v in range(spec.num_scales):
        r = f if acc is None else nm.sub(f, acc)
        z = down_t(r, spec, v)
        if want_prequant:
            prequant.append(z)
        q = nm.sign_ste(z, level)
        keep = keeps[v]
        if not bool(np.all(keep == 1)):
            q = nm.add(nm.mul(q, keep), (-level) * (1.0 - keep))
        u = up_t(q, spec, v)
        acc = u if acc is None else nm.add(acc, u)
        tokens.append(q)
    r_final = nm.sub(f, acc)
    return tokens, r_final, acc, prequant


def accumulate_t(tokens: list[Tensor], spec: hx.HierarchySpec) -> Tensor:
    """Sum the broadcast token grids left to right (same order as the chain)."""
    if len(tokens) != spec.num_scales:
        raise ValueError(f"expected {spec.num_scales} maps, got {len(tokens)}")
    acc = None
    for v, q in enumerate(tokens):
        u = up_t(nm.as_tensor(q), spec, v)
        acc = u if acc is None else nm.add(acc, u)
    return acc


def residual_quantize(
    f: np.ndarray | LatentGrid, spec: hx.HierarchySpec, valid_latent: int | None = None
) -> tuple[list[TokenMap], np.ndarray]:
    """Single-grid convenience wrapper: (n, j, d) -> token maps + r^{V+1}."""
    arr = f.values if isinstance(f, LatentGrid) else np.asarray(f)
    if arr.ndim != 3:
        raise ValueError(f"expected (n, j, d) latent, got {arr.shape}")
    vl = None if valid_latent is None else np.array([valid_latent])
    tokens, r_final, _, _ = residual_chain(_float_tensor(arr[None]), spec, vl)
    maps = [TokenMap(v, t.data[0].copy()) for v, t in enumerate(tokens)]
    return maps, r_final.data[0].copy()


def accumulate(maps: list[TokenMap], spec: hx.HierarchySpec) -> np.ndarray:
    for v, tm in enumerate(maps):
        expect = (spec.h(v), spec.m(v), tm.bits.shape[-1])
        if tm.bits.shape != expect:
            raise ValueError(f"map {v} has shape {tm.bits.shape}, expected {expect}")
    tokens = [_float_tensor(tm.bits[None]) for tm in maps]
    return accumulate_t(tokens, spec).data[0].copy()


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def masked_mse(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean squared error over entries where mask == 1 (broadcast mask)."""
    diff = nm.sub(pred, target)
    sq = nm.mul(nm.mul(diff, diff), mask)
    count = float(np.sum(mask * np.ones(pred.shape, dtype=np.float64)))
    return nm.mul(nm.tsum(sq), 1.0 / count)


def loss_rec(m: MotionSequence, m_hat: MotionSequence | np.ndarray) -> float:
    """MSE over frames below true_length."""
    pred = m_hat.data if isinstance(m_hat, MotionSequence) else np.asarray(m_hat)
    if pred.shape != m.data.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {m.data.shape}")
    mask = np.zeros((m.n_frames, 1, 1), dtype=np.float64)
    mask[: m.true_length] = 1.0
    return float(masked_mse(nm.constant(pred), m.data, mask).data)


def entropy_gap(prequant: list[Tensor], weights: list[np.ndarray], temperature: float) -> Tensor:
    """E[H(p)] - H(E[p]) summed over bits, p = sigmoid(z/T), weighted mean
    over all supplied positions. Nonpositive by Jensen's inequality.

    Each weight must broadcast to its tensor's shape minus the bit axis."""
    inv_t = 1.0 / temperature
    sum_h = None
    sum_p = None
    count = 0.0
    for z, w in zip(prequant, weights):
        d = z.shape[-1]
        zf = nm.reshape(z, (-1, d))
        wf = np.broadcast_to(w, z.shape[:-1]).reshape(-1, 1).astype(np.float64)
        p = nm.sigmoid(nm.mul(zf, inv_t))
        h = nm.tsum(nm.mul(nm.binary_entropy(p), wf))
        pw = nm.tsum(nm.mul(p, wf), axis=0)
        sum_h = h if sum_h is None else nm.add(sum_h, h)
        sum_p = pw if sum_p is None else nm.add(sum_p, pw)
        count += float(wf.sum())
    if count == 0:
        raise ValueError("entropy loss over an empty batch")
    mean_h = nm.mul(sum_h, 1.0 / count)
    h_of_mean = nm.tsum(nm.binary_entropy(nm.mul(sum_p, 1.0 / count)))
    return nm.sub(mean_h, h_of_mean)


def loss_ent(z: np.ndarray, temperature: float = 1.0) -> float:
    """Entropy penalty for a (M, d) batch of pre-quantization vectors."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ValueError(f"expected a non-empty (M, d) batch, got {z.shape}")
    return float(entropy_gap([nm.constant(z)], [np.ones(z.shape[0])], temperature).data)


def bit_usage_entropy(z: np.ndarray, temperature: float = 1.0) -> float:
    """H(E[p]) summed over bits: how evenly the code levels are used."""
    p = 1.0 / (1.0 + np.exp(-np.asarray(z, dtype=np.float64) / temperature))
    pbar = np.clip(p.mean(axis=0), 1e-12, 1 - 1e-12)
    return float(-(pbar * np.log(pbar) + (1 - pbar) * np.log(1 - pbar)).sum())


# ---------------------------------------------------------------------------
# encoder / decoder networks
# ---------------------------------------------------------------------------


class Linear:
    def __init__(self, store, name, din, dout, std=None):
        std = (1.0 / math.sqrt(din)) if std is None else std
        self.w = store.param(f"{name}.w", (din, dout), std=std)
        self.b = store.param(f"{name}.b", (dout,), init="zeros")

    def __call__(self, x: Tensor) -> Tensor:
        return nm.add(nm.matmul(x, self.w), self.b)


class Conv1dTime:
    def __init__(self, store, name, cin, cout, kernel=3, std=None):
        std = (1.0 / math.sqrt(kernel * cin)) if std is None else std
        self.w = store.param(f"{name}.w", (kernel, cin, cout), std=std)
        self.b = store.param(f"{name}.b", (cout,), init="zeros")

    def __call__(self, x: Tensor) -> Tensor:
        return nm.conv1d_same(x, self.w, self.b)


class ResBlock:
    """Per-joint temporal convolutions (kernel 3) with a residual skip.

    Joints fold into the batch axis, so weights are shared across joints."""

    def __init__(self, store, name, c, kernel=3):
        self.conv1 = Conv1dTime(store, f"{name}.conv1", c, c, kernel)
        self.conv2 = Conv1dTime(store, f"{name}.conv2", c, c, kernel)

    def __call__(self, x: Tensor) -> Tensor:
        B, T, J, C = x.shape
        flat = nm.reshape(nm.transpose(x, (0, 2, 1, 3)), (B * J, T, C))
        h = self.conv2(nm.gelu(self.conv1(flat)))
        h = nm.transpose(nm.reshape(h, (B, J, T, C)), (0, 2, 1, 3))
        return nm.add(x, h)


class SkelPool:
    """Learnable pooling: softmax-normalized weights over each joint group."""

    def __init__(self, store, name, groups: list[np.ndarray], n_in: int):
        self.groups = groups
        self.logits = store.param(f"{name}.logits", (len(groups), n_in), init="zeros")
        mask = np.full((len(groups), n_in), -1e9, dtype=self.logits.dtype)
        for gi, members in enumerate(groups):
            mask[gi, members] = 0.0
        self.mask = mask

    def __call__(self, x: Tensor) -> Tensor:
        w = nm.softmax(nm.add(self.logits, self.mask), axis=-1)  # (G, Jin)
        return nm.matmul(w, x)  # (B, T, Jin, C) -> (B, T, G, C)


class SkelUnpool:
    """Broadcast each group feature to its members, then a per-member affine."""

    def __init__(self, store, name, mapping: np.ndarray, c: int):
        self.mapping = np.asarray(mapping)
        self.scale = store.param(f"{name}.scale", (len(mapping), c), init="ones")
        self.bias = store.param(f"{name}.bias", (len(mapping), c), init="zeros")

    def __call__(self, x: Tensor) -> Tensor:
        y = nm.take_axis(x, self.mapping, axis=2)
        return nm.add(nm.mul(y, self.scale), self.bias)


def _pool_time2(x: Tensor) -> Tensor:
    B, T, J, C = x.shape
    pairs = [np.array([2 * i, 2 * i + 1]) for i in range(T // 2)]
    return nm.group_mean(x, pairs, axis=1)


def _up_time2(x: Tensor) -> Tensor:
    return nm.repeat_axis(x, 2, axis=1)


class SkeletonTables:
    """Joint-group tables driving the two pooling stages (22 -> 12 -> 7)."""

    def __init__(self):
        self.n_joints = len(hx.JOINT_NAMES)
        self.mid_groups = [np.array(g) for g in hx.MID_JOINT_GROUPS]
        self.mid_to_atomic = np.array(hx.MID_TO_ATOMIC)
        self.atomic_groups = [
            np.flatnonzero(self.mid_to_atomic == a) for a in range(len(hx.ATOMIC_SEGMENTS))
        ]
        joint_to_mid = np.empty(self.n_joints, dtype=np.int64)
        for gi, members in enumerate(self.mid_groups):
            joint_to_mid[members] = gi
        self.joint_to_mid = joint_to_mid


class MotionEncoder:
    def __init__(self, store, cfg: TokenizerConfig, tables: SkeletonTables, prefix="enc"):
        c0, c1, c2 = cfg.widths
        self.tables = tables
        self.proj_in = Linear(store, f"{prefix}.proj_in", FEATURE_DIM, c0)
        self.block0 = ResBlock(store, f"{prefix}.block0", c0)
        self.pool1 = SkelPool(store, f"{prefix}.pool1", tables.mid_groups, tables.n_joints)
        self.widen1 = Linear(store, f"{prefix}.widen1", c0, c1)
        self.block1 = ResBlock(store, f"{prefix}.block1", c1)
        self.pool2 = SkelPool(store, f"{prefix}.pool2", tables.atomic_groups, len(tables.mid_groups))
        self.widen2 = Linear(store, f"{prefix}.widen2", c1, c2)
        self.block2 = ResBlock(store, f"{prefix}.block2", c2)
        self.proj_out = Linear(store, f"{prefix}.proj_out", c2, cfg.d)

    def __call__(self, x: Tensor) -> Tensor:
        x = self.block0(self.proj_in(x))
        x = _pool_time2(x)
        x = self.block1(self.widen1(self.pool1(x)))
        x = _pool_time2(x)
        x = self.block2(self.widen2(self.pool2(x)))
        return self.proj_out(x)


class MotionDecoder:
    def __init__(self, store, cfg: TokenizerConfig, tables: SkeletonTables, prefix="dec"):
        c0, c1, c2 = cfg.widths
        self.proj_in = Linear(store, f"{prefix}.proj_in", cfg.d, c2)
        self.block2 = ResBlock(store, f"{prefix}.block2", c2)
        self.unpool2 = SkelUnpool(store, f"{prefix}.unpool2", tables.mid_to_atomic, c2)
        self.narrow2 = Linear(store, f"{prefix}.narrow2", c2, c1)
        self.block1 = ResBlock(store, f"{prefix}.block1", c1)
        self.unpool1 = SkelUnpool(store, f"{prefix}.unpool1", tables.joint_to_mid, c1)
        self.narrow1 = Linear(store, f"{prefix}.narrow1", c1, c0)
        self.block0 = ResBlock(store, f"{prefix}.block0", c0)
        self.proj_out = Linear(store, f"{prefix}.proj_out", c0, FEATURE_DIM)

    def __call__(self, f_hat: Tensor) -> Tensor:
        x = self.block2(self.proj_in(f_hat))
        x = _up_time2(self.unpool2(x))
        x = self.block1(self.narrow2(x))
        x = _up_time2(self.unpool1(x))
        x = self.block0(self.narrow1(x))
        return self.proj_out(x)


# ---------------------------------------------------------------------------
# snapshot: frozen parameters with pure encode/decode/tokenize
# ---------------------------------------------------------------------------


class TokenizerSnapshot:
    def __init__(self, cfg: TokenizerConfig, spec: hx.HierarchySpec, store: nm.ParamStore):
        cfg.require_bitwise()
        self.config = cfg
        self.spec = spec
        self.store = store
        self.tables = SkeletonTables()
        self.encoder = MotionEncoder(store, cfg, self.tables)
        self.decoder = MotionDecoder(store, cfg, self.tables)
        # per-(joint, feature) input statistics; identity until fitted
        self.norm_mean = np.zeros((self.tables.n_joints, FEATURE_DIM), dtype=np.float32)
        self.norm_std = np.ones((self.tables.n_joints, FEATURE_DIM), dtype=np.float32)

    @classmethod
    def build(cls, cfg: TokenizerConfig, spec: hx.HierarchySpec, seed: int = 0):
        rep = hx.validate(spec)
        if not rep.ok:
            raise ValueError(f"invalid hierarchy: {rep.labels()}")
        return cls(cfg, spec, nm.ParamStore(seed))

    def fit_normalizer(self, clips: list[MotionSequence], floor: float = 1e-3):
        """Set input statistics from the valid frames of a corpus."""
        stacked = np.concatenate([c.valid() for c in clips], axis=0).astype(np.float64)
        self.norm_mean = stacked.mean(axis=0).astype(np.float32)
        self.norm_std = np.maximum(stacked.std(axis=0), floor).astype(np.float32)

    def _normalize(self, data: np.ndarray) -> np.ndarray:
        return (data - self.norm_mean) / self.norm_std

    def _check_motion(self, motion: MotionSequence):
        if motion.n_frames % TEMPORAL_FACTOR != 0:
            raise ValueError(f"frame count {motion.n_frames} not divisible by {TEMPORAL_FACTOR}")
        if motion.n_joints != self.tables.n_joints:
            raise ValueError(
                f"skeleton mismatch: {motion.n_joints} joints, expected {self.tables.n_joints}"
            )
        if motion.n_frames // TEMPORAL_FACTOR != self.spec.n:
            raise ValueError(
                f"motion maps to n={motion.n_frames // TEMPORAL_FACTOR}, hierarchy has n={self.spec.n}"
            )

    def encode(self, motion: MotionSequence) -> LatentGrid:
        self._check_motion(motion)
        x = self._normalize(motion.data)[None].astype(nm.default_dtype())
        out = self.encoder(nm.constant(x))
        return LatentGrid(out.data[0].copy())

    def decode(self, f_hat: np.ndarray | LatentGrid, true_length: int) -> MotionSequence:
        arr = f_hat.values if isinstance(f_hat, LatentGrid) else np.asarray(f_hat)
        n, j, d = arr.shape
        if (n, j, d) != (self.spec.n, len(hx.ATOMIC_SEGMENTS), self.config.d):
            raise ValueError(f"latent shape {arr.shape} does not match the snapshot")
        out = self.decoder(nm.constant(arr[None].astype(nm.default_dtype()))).data[0]
        out = out * self.norm_std + self.norm_mean
        n_frames = n * TEMPORAL_FACTOR
        true_length = min(true_length, n_frames)
        out[true_length:] = 0.0
        return MotionSequence(out.astype(np.float32), true_length)

    def tokenize(self, motion: MotionSequence) -> tuple[list[TokenMap], np.ndarray]:
        grid = self.encode(motion)
        return residual_quantize(grid, self.spec, latent_length(motion.true_length))

    def reconstruct(self, motion: MotionSequence) -> MotionSequence:
        maps, _ = self.tokenize(motion)
        return self.decode(accumulate(maps, self.spec), motion.true_length)

    def save(self, path):
        meta = {
            "kind": "tokenizer",
            "config": {**asdict(self.config), "widths": list(self.config.widths)},
            "hierarchy": self.spec.to_dict(),
        }
        params = self.store.state_dict()
        params["_norm.mean"] = self.norm_mean
        params["_norm.std"] = self.norm_std
        mio.save_checkpoint(path, params, meta)

    @classmethod
    def load(cls, path):
        params, meta = mio.load_checkpoint(path)
        if meta.get("kind") != "tokenizer":
            raise mio.FormatError(f"not a tokenizer checkpoint: kind={meta.get('kind')!r}")
        cfg_d = dict(meta["config"])
        cfg_d["widths"] = tuple(cfg_d["widths"])
        cfg = TokenizerConfig(**cfg_d)
        spec = hx.HierarchySpec.from_dict(meta["hierarchy"])
        snap = cls.build(cfg, spec)
        snap.norm_mean = params.pop("_norm.mean").astype(np.float32)
        snap.norm_std = params.pop("_norm.std").astype(np.float32)
        snap.store.load_state_dict(params)
        return snap


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    snapshot: object
    trace: list[tuple]
    columns: list[str] = field(default_factory=list)


def train_tokenizer(
    clips: list[MotionSequence],
    spec: hx.HierarchySpec,
    cfg: TokenizerConfig,
    seed: int = 0,
    steps: int = 2000,
    batch_size: int = 8,
    lr: float = 1e-3,
) -> TrainResult:
    """Minimize rec + entropy losses with straight-through quantizer grads."""
    cfg.require_bitwise()
    snap = TokenizerSnapshot.build(cfg, spec, seed)
    if not clips:
        raise ValueError("empty corpus")
    for c in clips:
        snap._check_motion(c)
    snap.fit_normalizer(clips)
    raw = np.stack([c.data for c in clips]).astype(nm.default_dtype())
    data = snap._normalize(raw).astype(nm.default_dtype())
    lengths = np.array([c.true_length for c in clips])
    lat_lengths = np.array([latent_length(x) for x in lengths])
    n_frames = data.shape[1]

    adam = nm.Adam(snap.store, lr=lr)
    rng = nm.substream(seed, "batch")
    trace = []
    batch_size = min(batch_size, len(clips))
    with nm.no_finite_checks():
        for step in range(1, steps + 1):
            idx = rng.integers(0, len(clips), size=batch_size)
            x = data[idx]
            frame_mask = (np.arange(n_frames)[None, :] < lengths[idx][:, None]).astype(x.dtype)
            frame_mask = frame_mask[:, :, None, None]

            f = snap.encoder(nm.constant(x))
            want_ent = cfg.entropy_weight > 0
            tokens, _, acc, prequant = residual_chain(
                f, spec, lat_lengths[idx], want_prequant=want_ent
            )
            # decode in normalized space, score in raw space (Eq. 4 form)
            m_hat = nm.add(nm.mul(snap.decoder(acc), snap.norm_std), snap.norm_mean)
            rec = masked_mse(m_hat, raw[idx], frame_mask)
            if want_ent:
                keeps = _keep_masks(spec, lat_lengths[idx], np.float64)
                ent = entropy_gap(prequant, [k[:, :, :, 0] for k in keeps], cfg.entropy_temperature)
                total = nm.add(rec, nm.mul(ent, cfg.entropy_weight))
                ent_val = float(ent.data)
            else:
                total = rec
                ent_val = 0.0
            loss_val = float(total.data)
            if not np.isfinite(loss_val):
                raise nm.TrainingDiverged(step)
            nm.backward(total, snap.store)
            adam.step()
            trace.append((step, loss_val, float(rec.data), ent_val))
    return TrainResult(snap, trace, ["step", "total", "rec", "ent"])
