"""Command-line entry point: ``mtms <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import MtmsError
from .checkpoint import Checkpoint, load_checkpoint, load_stats, save_checkpoint, save_stats
from .config import load_config
from .corpus import CorpusSpec, MixingPlan, build_manifest, read_manifest, read_wav, synth_corpus, write_wav
from .inference import MODES, enhance_utterance
from .model import MTMSNet, count_flops_per_frame, init_params, count_params
from .pipeline import bundles_from_mixtures, evaluate, realize_all, report_text, stats_from_mixtures
from .training import train_loop, write_loss_csv

log = logging.getLogger("mtms")

REFERENCE_PARAMS_M = 4.8
REFERENCE_FLOPS_M = 9.6


def _root(args) -> Path:
    return Path(args.root) if args.root else Path(args.manifest).resolve().parent


def _records(args, split: str | None):
    recs = read_manifest(args.manifest)
    return [r for r in recs if split is None or r.split == split]


def cmd_make_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = CorpusSpec(args.speech, args.noise, args.dur, args.noise_dur, args.seed)
    files = synth_corpus(out, spec)
    with open(out / "files.jsonl", "w") as fh:
        for e in files:
            fh.write(json.dumps(e, sort_keys=True) + "\n")
    recs = build_manifest(out, MixingPlan(mixes_per_utterance=args.mixes), args.seed, out / "manifest.jsonl")
    print(f"wrote {len(files)} files and {len(recs)} mixtures to {out}")
    return 0


def cmd_fit_stats(args) -> int:
    mixtures = realize_all(_records(args, "train"), _root(args))
    stats = stats_from_mixtures(mixtures)
    save_stats(args.out, stats)
    print(f"fitted SNR statistics over {stats.n_frames} frames -> {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    stats = load_stats(args.stats)
    root = _root(args)
    train = bundles_from_mixtures(realize_all(_records(args, "train"), root), stats)
    val_recs = _records(args, "val")
    val = bundles_from_mixtures(realize_all(val_recs, root), stats) if val_recs and args.steps is None else None
    net = MTMSNet(cfg, init_params(cfg, args.seed))
    epochs = args.epochs if args.steps is None else None
    result = train_loop(net, train, epochs=epochs, steps=args.steps, seed=args.seed, val_corpus=val,
                        log_every=args.log_every)
    save_checkpoint(args.out, Checkpoint(cfg, result.params, stats))
    loss_csv = args.loss_csv or str(Path(args.out).with_suffix(".loss.csv"))
    write_loss_csv(result.history, loss_csv)
    last = result.history[-1]
    print(f"{len(result.history)} steps, final total loss {last.total:.4f} -> {args.out} (losses: {loss_csv})")
    return 0


def cmd_enhance(args) -> int:
    ck = load_checkpoint(args.ckpt)
    net = MTMSNet(ck.config, ck.params)
    out = enhance_utterance(read_wav(args.inp), net, ck.stats, args.mode)
    write_wav(args.out, out)
    print(f"{args.mode}: {args.inp} -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    ck = load_checkpoint(args.ckpt)
    net = MTMSNet(ck.config, ck.params)
    modes = tuple(m.strip() for m in args.modes.split(",") if m.strip())
    bad = [m for m in modes if m not in MODES]
    if bad:
        raise MtmsError(f"unknown mode(s) {bad}; choose from {MODES}")
    mixtures = realize_all(_records(args, args.split), _root(args))
    rows = evaluate(mixtures, net, ck.stats, modes)
    Path(args.report).write_text(report_text(rows))
    print(f"evaluated {len(mixtures)} mixtures x {len(modes)} modes -> {args.report}")
    return 0


def cmd_inspect(args) -> int:
    cfg = load_config(args.config)
    n = count_params(init_params(cfg))
    f = count_flops_per_frame(cfg)
    print(f"parameters      : {n:>12,d}  ({n / 1e6:.2f} M; reference {REFERENCE_PARAMS_M} M, deviation {n / 1e6 - REFERENCE_PARAMS_M:+.2f} M)")
    print(f"FLOPs per frame : {f:>12,d}  ({f / 1e6:.2f} M; reference {REFERENCE_FLOPS_M} M, deviation {f / 1e6 - REFERENCE_FLOPS_M:+.2f} M)")
    print("note: the reference model's group counts and skip wiring are not fully determined; "
          f"this count uses irm_groups={cfg.irm_groups}, ri_groups={cfg.ri_groups}, s2_groups={cfg.s2_groups}.")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtms", description="Two-stage multi-target speech enhancement")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-data", help="generate a synthetic corpus and mixing manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--speech", type=int, default=20)
    s.add_argument("--noise", type=int, default=3)
    s.add_argument("--dur", type=float, default=3.0, help="speech duration in seconds")
    s.add_argument("--noise-dur", type=float, default=30.0)
    s.add_argument("--mixes", type=int, default=1, help="mixtures per utterance")
    s.set_defaults(func=cmd_make_data)

    s = sub.add_parser("fit-stats", help="fit a-priori SNR compression statistics on the train split")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--root", help="corpus root (default: manifest directory)")
    s.set_defaults(func=cmd_fit_stats)

    s = sub.add_parser("train", help="train both stages")
    s.add_argument("--manifest", required=True)
    s.add_argument("--stats", required=True)
    s.add_argument("--config", required=True, help="preset name or key=value file")
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int)
    s.add_argument("--epochs", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--root")
    s.add_argument("--loss-csv")
    s.add_argument("--log-every", type=int, default=0)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("enhance", help="enhance one WAV file")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=MODES, default="fused")
    s.set_defaults(func=cmd_enhance)

    s = sub.add_parser("evaluate", help="score enhancement modes on a manifest split")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--modes", default=",".join(MODES))
    s.add_argument("--split", default="test", choices=("train", "val", "test"))
    s.add_argument("--root")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("inspect", help="print parameter count and per-frame FLOPs")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (MtmsError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
