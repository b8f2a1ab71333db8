"""Command-line pipeline: gen-data, train, generate, eval, bench.

Exit codes: 0 success, 1 usage error, 2 runtime error. All randomness
derives from --seed / the config seed. NACAP_THREADS caps worker threads
for generation and evaluation (default: available cores).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import data, encoder, inference, metrics, training
from .config import RunConfig, load_profile
from .params import load_checkpoint
from .util import parallel_map


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _load_config(args):
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if args.config:
        return RunConfig.from_file(args.config, overrides)
    return load_profile("desk", overrides)


def _load_grammar(config, path=None):
    src = path or config.grammar
    if src:
        return data.Grammar.from_json(src)
    return data.Grammar(k_max=config.k_max, d_in=config.d_in)


def _cmd_gen_data(args):
    config = _load_config(args)
    grammar = _load_grammar(config, args.grammar)
    n = args.scenes if args.scenes is not None else config.scenes
    seed = args.seed if args.seed is not None else config.seed
    # per-scene seeding is (seed, index), so parallel order cannot matter
    records = [
        data.SceneRecord(
            scene_id=f"s{i:06d}",
            features=regions.features,
            labels=[o.label for o in scene.objects],
            captions=captions,
        )
        for i, (scene, regions, captions) in enumerate(
            parallel_map(
                lambda i: data.generate_scene([seed, i], grammar,
                                              scene_id=f"s{i:06d}"),
                range(n),
            )
        )
    ]
    data.write_corpus(args.out, records)
    print(f"wrote {len(records)} scenes to {args.out}")
    return 0


def _cmd_train(args):
    config = _load_config(args)
    records = data.read_corpus(args.corpus)
    path = training.train(config, records, args.out, mode=args.mode,
                          epoch_checkpoints=not args.no_epoch_checkpoints)
    print(f"final checkpoint: {path}")
    return 0


def _mode_to_ckpt(mode):
    # fnic-ndt and fnic-dt share the jointly trained "fnic" checkpoint
    return {"fnic-ndt": "fnic", "fnic-dt": "fnic", "at": "at", "naic": "naic"}[mode]


def _load_model(path, mode=None):
    path = Path(path)
    if path.is_dir():
        if mode is None:
            raise ValueError("loading from a directory needs a mode")
        path = path / f"{_mode_to_ckpt(mode)}.ckpt"
    params, meta = load_checkpoint(path)
    vocab = data.Vocabulary(meta.get("vocab", []))
    return params, meta, vocab


def _decode_corpus(records, params, vocab, mode):
    def run(rec):
        image = encoder.encode(rec.features, params)
        cap = inference.generate(image, params, mode)
        return rec.scene_id, " ".join(vocab.decode(cap.tokens)), cap.wall_time_ns

    return parallel_map(run, records)


def _cmd_generate(args):
    params, _, vocab = _load_model(args.model, args.mode)
    records = data.read_corpus(args.corpus)
    rows = _decode_corpus(records, params, vocab, args.mode)
    with open(args.out, "w", encoding="utf-8") as fh:
        for scene_id, caption, latency in rows:
            fh.write(json.dumps({
                "scene_id": scene_id,
                "caption": caption,
                "latency_ns": latency,
                "mode": args.mode,
            }))
            fh.write("\n")
    print(f"wrote {len(rows)} captions to {args.out}")
    return 0


def _cmd_eval(args):
    params, _, vocab = _load_model(args.model, args.mode)
    records = data.read_corpus(args.corpus)
    rows = _decode_corpus(records, params, vocab, args.mode)
    hypotheses = [caption.split() for _, caption, _ in rows]
    references = [[c.lower().split() for c in rec.captions] for rec in records]
    bleu = metrics.corpus_bleu(hypotheses, references, smooth=args.smooth_bleu)
    if args.train_corpus:
        train_captions = [
            c for rec in data.read_corpus(args.train_corpus) for c in rec.captions
        ]
    else:
        train_captions = [c for rec in records for c in rec.captions]
    novel, unique, usage = metrics.diversity_stats(
        [caption for _, caption, _ in rows], train_captions, vocab
    )
    report = metrics.EvalReport(
        bleu1=bleu[0], bleu2=bleu[1], bleu3=bleu[2], bleu4=bleu[3],
        novel_pct=novel, unique_pct=unique, vocab_usage_pct=usage,
    )
    print(report.pretty())
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
        print(f"report written to {args.out}")
    return 0


def _cmd_bench(args):
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for mode in modes:
        if mode not in inference.MODES:
            raise ValueError(f"unknown mode {mode!r}, expected {inference.MODES}")
    mode_params = {}
    vocab = None
    for mode in modes:
        params, _, vocab = _load_model(args.models, mode)
        mode_params[mode] = params
    records = data.read_corpus(args.corpus)[: args.samples]
    images = [encoder.encode(rec.features, mode_params[modes[0]])
              for rec in records]
    rows, means = metrics.latency_bench(
        mode_params, images, repeats=args.repeats, warmup=args.warmup
    )
    if args.forced_lengths:
        lengths = [int(x) for x in args.forced_lengths.split(",")]
        sweep = metrics.forced_length_sweep(
            mode_params, images[0], lengths, repeats=args.repeats,
            warmup=args.warmup, coarse_len=args.coarse_len,
        )
        for mode, per_len in sweep.items():
            for n, mean_ns in per_len.items():
                rows.append(metrics.LatencyRow(
                    mode, f"forced-{n}", mean_ns, 0.0, None))
    metrics.latency_rows_to_csv(rows, args.out)
    for mode, mean in means.items():
        at = means.get(inference.MODE_AT)
        tail = f"  speedup {at / mean:.2f}x" if at else ""
        print(f"{mode}: {mean / 1e6:.3f} ms/sentence{tail}")
    print(f"bench CSV written to {args.out}")
    return 0


def build_parser():
    parser = _Parser(prog="nacap",
                     description="non-autoregressive synthetic-scene captioning")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic scene corpus")
    p.add_argument("--seed", type=int, help="master seed (default: config seed)")
    p.add_argument("--scenes", type=int, help="number of scenes")
    p.add_argument("--out", required=True, help="output corpus JSONL path")
    p.add_argument("--config", help="run-config JSON (default: desk profile)")
    p.add_argument("--grammar", help="grammar JSON overriding the built-in one")
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a corpus")
    p.add_argument("--config", help="run-config JSON (default: desk profile)")
    p.add_argument("--corpus", required=True, help="training corpus JSONL")
    p.add_argument("--out", required=True, help="checkpoint output directory")
    p.add_argument("--mode", default="fnic", choices=training.TRAIN_MODES,
                   help="training mode (default fnic)")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--no-epoch-checkpoints", action="store_true",
                   help="write only the final checkpoint")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("generate", help="caption every scene in a corpus")
    p.add_argument("--model", required=True,
                   help="checkpoint file or directory of <mode>.ckpt files")
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", required=True, choices=inference.MODES)
    p.add_argument("--out", required=True, help="output JSONL path")
    p.set_defaults(fn=_cmd_generate)

    p = sub.add_parser("eval", help="BLEU + diversity report for a model")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True, help="held-out corpus JSONL")
    p.add_argument("--mode", default="fnic-ndt", choices=inference.MODES)
    p.add_argument("--train-corpus",
                   help="training corpus for novel-caption comparison")
    p.add_argument("--smooth-bleu", action="store_true",
                   help="add-one smooth BLEU orders >= 2 (tiny corpora)")
    p.add_argument("--out", help="also write the report as JSON")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("bench", help="single-sentence decode latency benchmark")
    p.add_argument("--models", required=True,
                   help="directory holding <mode>.ckpt checkpoints")
    p.add_argument("--corpus", required=True, help="corpus supplying images")
    p.add_argument("--modes", default="at,fnic-ndt,naic",
                   help="comma-separated decode modes")
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--samples", type=int, default=16,
                   help="number of corpus images to decode")
    p.add_argument("--forced-lengths",
                   help="comma-separated emitted lengths for a forced sweep")
    p.add_argument("--coarse-len", type=int, default=8,
                   help="fixed coarse length during the forced sweep")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(fn=_cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    try:
        return args.fn(args)
    except Exception as exc:  # runtime failures exit 2 with a message
        print(f"nacap: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
