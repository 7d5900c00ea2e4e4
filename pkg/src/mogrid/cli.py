"""Command-line surface: corpus creation, training, generation, editing,
evaluation, hierarchy validation, and exports.

Exit codes: 0 success, 2 usage error, 1 runtime failure. Every command is
deterministic given its arguments, seeds, and input files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import config as cf
from . import corpus as cp
from . import editor as ed
from . import hierarchy as hx
from . import io as mio
from . import predictor as pr
from . import sampler as sp
from . import tokenizer as tk

CONFIG_ENV = "MOGRID_CONFIG"


def _load_config(args) -> cf.RunConfig:
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if path:
        return cf.load(path)
    return cf.RunConfig()


def _add_config_arg(p):
    p.add_argument("--config", help=f"run config JSON (default: ${CONFIG_ENV})")


def _session(args) -> sp.GenerationSession:
    tok = tk.TokenizerSnapshot.load(args.tokenizer)
    pred = pr.PredictorSnapshot.load(args.predictor)
    return sp.GenerationSession(tok, pred)


def _cfg_schedule(args) -> sp.CFGSchedule:
    return sp.CFGSchedule(s_base=args.cfg_base, mode=args.cfg_mode)


def _add_sampling_args(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--cfg-base", type=float, default=5.0)
    p.add_argument("--cfg-mode", choices=sp.CFG_MODES, default="increasing")
    p.add_argument("--deterministic", action="store_true", help="take bit signs, no sampling")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_make_corpus(args, parser):
    if args.count < 1:
        parser.error("--count must be >= 1")
    if args.frames % tk.TEMPORAL_FACTOR != 0:
        parser.error(f"--frames must be divisible by {tk.TEMPORAL_FACTOR}")
    clips = cp.make_corpus(args.count, args.seed, args.frames)
    cp.save_corpus(args.out, clips, args.seed)
    if args.json:
        for i, clip in enumerate(clips):
            Path(args.out, f"clip_{i:04d}.json").write_text(mio.motion_to_json(clip.motion))
    print(f"wrote {len(clips)} clips to {args.out}")
    return 0


def cmd_train_vq(args, parser):
    rc = _load_config(args)
    steps = rc.train.vq_steps if args.steps is None else args.steps
    spec = rc.hierarchy()
    motions, _, _ = cp.load_corpus(args.corpus)
    result = tk.train_tokenizer(
        motions,
        spec,
        rc.tokenizer,
        seed=rc.seed,
        steps=steps,
        batch_size=rc.train.vq_batch,
        lr=rc.train.vq_lr,
    )
    result.snapshot.save(args.out)
    if args.trace:
        mio.save_trace(args.trace, result.trace, result.columns)
    final = result.trace[-1] if result.trace else (0, 0.0, 0.0, 0.0)
    print(f"tokenizer: {steps} steps, final total {final[1]:.6f} rec {final[2]:.6f}")
    return 0


def cmd_train_predictor(args, parser):
    rc = _load_config(args)
    steps = rc.train.predictor_steps if args.steps is None else args.steps
    if not Path(args.tokenizer).exists():
        raise FileNotFoundError(f"tokenizer checkpoint not found: {args.tokenizer}")
    tok = tk.TokenizerSnapshot.load(args.tokenizer)
    motions, captions, _ = cp.load_corpus(args.corpus)
    result = pr.train_predictor(
        motions,
        captions,
        tok,
        rc.predictor,
        seed=rc.seed,
        steps=steps,
        batch_size=rc.train.predictor_batch,
        lr=rc.train.predictor_lr,
    )
    result.snapshot.save(args.out)
    if args.trace:
        mio.save_trace(args.trace, result.trace, result.columns)
    final = result.trace[-1][1] if result.trace else 0.0
    print(f"predictor: {steps} steps, final loss {final:.6f}")
    return 0


def cmd_generate(args, parser):
    session = _session(args)
    request = sp.SampleRequest(
        prompt=args.prompt,
        n_frames=args.frames,
        seed=args.seed,
        temperature=args.temperature,
        deterministic=args.deterministic,
        cfg=_cfg_schedule(args),
    )
    motion, maps, stats = session.generate(request)
    mio.save_motion(args.out, motion)
    if args.export_tokens:
        mio.save_token_maps(args.export_tokens, maps)
    if args.export_prefix_decodes:
        out_dir = Path(args.export_prefix_decodes)
        out_dir.mkdir(parents=True, exist_ok=True)
        for k, m in enumerate(sp.prefix_decodes(session.tok, maps, motion.true_length)):
            mio.save_motion(out_dir / f"prefix_{k:02d}.mot", m)
    print(f"generated {motion.true_length} frames in {stats.scale_samples} scale steps -> {args.out}")
    return 0


def cmd_edit(args, parser):
    session = _session(args)
    source = mio.load_motion(args.source)
    enable = tuple(x.strip() for x in args.enable.split(",") if x.strip())
    joints = tuple(x.strip() for x in args.joints.split(",") if x.strip())
    t1 = args.t1 if args.t1 is not None else source.true_length - 1
    try:
        mask_spec = ed.EditMaskSpec(
            enable=enable,
            gamma=args.gamma,
            edit_joints=joints,
            t0=args.t0,
            t1=t1,
            tau=args.tau,
        )
    except ValueError as e:
        parser.error(str(e))
    result = ed.edit(
        session,
        source,
        args.target_prompt,
        mask_spec,
        seed=args.seed,
        temperature=args.temperature,
        deterministic=args.deterministic,
        cfg=_cfg_schedule(args),
    )
    mio.save_motion(args.out, result.motion)
    if args.export_mask:
        mio.save_masks(args.export_mask, result.mask)
    if args.export_tokens:
        mio.save_token_maps(args.export_tokens, result.maps)
    kept = sum(int(g.sum()) for g in result.mask)
    total = sum(g.size for g in result.mask)
    print(f"edited with {kept}/{total} source tokens kept -> {args.out}")
    return 0


def cmd_eval(args, parser):
    tok = tk.TokenizerSnapshot.load(args.tokenizer)
    motions, captions, _ = cp.load_corpus(args.corpus)
    clips = [cp.SyntheticClip(m, c, None) for m, c in zip(motions, captions)]
    mp = cp.reconstruction_mpjpe(tok, clips)
    report = cp.MetricReport(mpjpe=mp, bit_accuracy=None, per_scale_accuracy=None, clips=len(clips))
    if args.predictor:
        pred = pr.PredictorSnapshot.load(args.predictor)
        acc = cp.bit_accuracy(pred, tok, clips)
        report = cp.MetricReport(
            mpjpe=mp,
            bit_accuracy=acc.bit_accuracy,
            per_scale_accuracy=acc.per_scale_accuracy,
            clips=len(clips),
        )
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_validate_hierarchy(args, parser):
    if args.spec:
        spec = hx.HierarchySpec.from_dict(json.loads(Path(args.spec).read_text()))
    else:
        spec = hx.preset(args.preset, args.n)
    report = hx.validate(spec)
    if report.ok:
        print(f"{spec.name}: valid ({spec.num_scales} scales, n={spec.n})")
        return 0
    for v in report.violations:
        print(f"violation [{v.label}] at scale {v.scale}: {v.detail}", file=sys.stderr)
    return 1


def cmd_export_prefix_decodes(args, parser):
    tok = tk.TokenizerSnapshot.load(args.tokenizer)
    motion = mio.load_motion(args.motion)
    maps, _ = tok.tokenize(motion)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for k, m in enumerate(sp.prefix_decodes(tok, maps, motion.true_length)):
        mio.save_motion(out_dir / f"prefix_{k:02d}.mot", m)
    print(f"wrote {len(maps)} prefix decodes to {out_dir}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mogrid",
        description="scale-wise skeletal-temporal motion tokenizer, generator, and editor",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-corpus", help="write a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--json", action="store_true", help="also write JSON mirrors")
    p.set_defaults(func=cmd_make_corpus)

    p = sub.add_parser("train-vq", help="train the tokenizer")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trace")
    p.add_argument("--steps", type=int)
    _add_config_arg(p)
    p.set_defaults(func=cmd_train_vq)

    p = sub.add_parser("train-predictor", help="train the next-scale predictor")
    p.add_argument("--corpus", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trace")
    p.add_argument("--steps", type=int)
    _add_config_arg(p)
    p.set_defaults(func=cmd_train_predictor)

    p = sub.add_parser("generate", help="text-to-motion generation")
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--predictor", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--frames", type=int, required=True)
    _add_sampling_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--export-tokens")
    p.add_argument("--export-prefix-decodes")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("edit", help="zero-shot mask-based editing")
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--predictor", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target-prompt", required=True)
    p.add_argument("--gamma", type=int, default=3)
    p.add_argument("--joints", default="", help="comma-separated atomic segment names")
    p.add_argument("--t0", type=int, default=0)
    p.add_argument("--t1", type=int, default=None)
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--enable", default="gs", help="comma subset of gs,st,sa")
    _add_sampling_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--export-mask")
    p.add_argument("--export-tokens")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("eval", help="reconstruction + prediction metrics")
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--predictor")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("validate-hierarchy", help="check a hierarchy spec")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--preset", choices=hx.PRESET_NAMES)
    g.add_argument("--spec", help="inline hierarchy JSON file")
    p.add_argument("--n", type=int, default=16)
    p.set_defaults(func=cmd_validate_hierarchy)

    p = sub.add_parser("export-prefix-decodes", help="per-scale accumulated decodes")
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--motion", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_export_prefix_decodes)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except BrokenPipeError:
        return 1
    except Exception as e:  # runtime failures -> exit 1 with a message
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
