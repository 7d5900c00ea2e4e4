"""Run configuration: a versioned JSON document with strict keys.

Unknown keys are errors, not warnings; a config that loads is a config whose
every field took effect. Round-trip (load -> serialize -> load) is identity.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import hierarchy as hx
from .predictor import PredictorConfig
from .sampler import CFGSchedule
from .tokenizer import TokenizerConfig

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    vq_steps: int = 2000
    vq_batch: int = 8
    vq_lr: float = 1e-3
    predictor_steps: int = 3000
    predictor_batch: int = 4
    predictor_lr: float = 1e-3


@dataclass
class CorpusConfig:
    count: int = 32
    frames: int = 64


@dataclass
class RunConfig:
    seed: int = 0
    hierarchy_preset: str = "perjoint-temporal"
    hierarchy_n: int = 16
    hierarchy_inline: dict | None = None
    tokenizer: TokenizerConfig = field(default_factory=lambda: desk_tokenizer_config())
    predictor: PredictorConfig = field(default_factory=lambda: desk_predictor_config())
    cfg: CFGSchedule = field(default_factory=CFGSchedule)
    train: TrainConfig = field(default_factory=TrainConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)

    def hierarchy(self) -> hx.HierarchySpec:
        if self.hierarchy_inline is not None:
            spec = hx.HierarchySpec.from_dict(self.hierarchy_inline)
        else:
            spec = hx.preset(self.hierarchy_preset, self.hierarchy_n)
        report = hx.validate(spec)
        if not report.ok:
            raise ConfigError(f"invalid hierarchy: {report.labels()}")
        return spec


def desk_tokenizer_config() -> TokenizerConfig:
    """Desk-scale defaults: 16-bit codes on the n=16 grid."""
    return TokenizerConfig(d=16, entropy_weight=0.003)


def desk_predictor_config() -> PredictorConfig:
    """Sized so the bundled overfit runs finish in CPU minutes."""
    return PredictorConfig(blocks=4, width=64, heads=2, d_text=64)


def _from_dict(cls, d: dict, what: str):
    allowed = {f for f in cls.__dataclass_fields__}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad {what} section: {e}") from e


def to_dict(rc: RunConfig) -> dict:
    return {
        "version": CONFIG_VERSION,
        "seed": rc.seed,
        "hierarchy": (
            {"inline": rc.hierarchy_inline}
            if rc.hierarchy_inline is not None
            else {"preset": rc.hierarchy_preset, "n": rc.hierarchy_n}
        ),
        "tokenizer": {**asdict(rc.tokenizer), "widths": list(rc.tokenizer.widths)},
        "predictor": asdict(rc.predictor),
        "cfg": asdict(rc.cfg),
        "train": asdict(rc.train),
        "corpus": asdict(rc.corpus),
    }


def from_dict(doc: dict) -> RunConfig:
    allowed = {"version", "seed", "hierarchy", "tokenizer", "predictor", "cfg", "train", "corpus"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if doc.get("version") != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {doc.get('version')!r}")
    rc = RunConfig()
    rc.seed = int(doc.get("seed", 0))
    h = doc.get("hierarchy", {})
    unknown = set(h) - {"preset", "n", "inline"}
    if unknown:
        raise ConfigError(f"unknown hierarchy keys: {sorted(unknown)}")
    if "inline" in h:
        if "preset" in h or "n" in h:
            raise ConfigError("hierarchy: give either an inline spec or a preset, not both")
        rc.hierarchy_inline = h["inline"]
    else:
        rc.hierarchy_preset = h.get("preset", rc.hierarchy_preset)
        rc.hierarchy_n = int(h.get("n", rc.hierarchy_n))
    if "tokenizer" in doc:
        td = dict(doc["tokenizer"])
        if "widths" in td:
            td["widths"] = tuple(td["widths"])
        base = asdict(desk_tokenizer_config())
        base["widths"] = desk_tokenizer_config().widths
        base.update(td)
        rc.tokenizer = _from_dict(TokenizerConfig, base, "tokenizer")
    if "predictor" in doc:
        base = asdict(desk_predictor_config())
        base.update(doc["predictor"])
        rc.predictor = _from_dict(PredictorConfig, base, "predictor")
    if "cfg" in doc:
        base = asdict(CFGSchedule())
        base.update(doc["cfg"])
        rc.cfg = _from_dict(CFGSchedule, base, "cfg")
    if "train" in doc:
        base = asdict(TrainConfig())
        base.update(doc["train"])
        rc.train = _from_dict(TrainConfig, base, "train")
    if "corpus" in doc:
        base = asdict(CorpusConfig())
        base.update(doc["corpus"])
        rc.corpus = _from_dict(CorpusConfig, base, "corpus")
    return rc


def load(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    return from_dict(doc)


def save(path, rc: RunConfig) -> None:
    Path(path).write_text(json.dumps(to_dict(rc), indent=2, sort_keys=True) + "\n")
