"""Command-line entry point.

Subcommands cover the full workflow: synthesize a corpus, precompute an
embedding cache, train, generate, retrieve, evaluate, interpolate,
classify, render overlays, and run ablation comparisons.

Exit codes: 0 success, 1 usage error, 2 data/validation error,
3 numerical failure (non-finite loss).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, apply_overrides, load_config
from .dataio import read_corpus, read_embedding_cache, split_corpus, write_corpus, \
    write_embedding_cache
from .embedding import CachedEmbeddingProvider, StubEmbeddingProvider, image_content_key, \
    text_key
from .errors import InvalidInputError, NonFiniteLossError, Text2TrajError
from .evalkit import evaluate_generation, retrieval_recall
from .inference import classify_zero_shot, condition_from_text, generate, interpolate
from .model import load_checkpoint
from .overlay import OverlayStyle, render_sequence, save_png
from .synth import MOTION_CLASSES, class_of, synth_corpus
from .trajectory import GridSpec
from .training import load_train_state, overlay_style_from_config, run_training, train


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_bbox(text: str) -> tuple[float, float, float, float]:
    parts = text.split(",")
    if len(parts) != 4:
        raise InvalidInputError(f"--bbox expects x0,y0,x1,y1, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise InvalidInputError(f"--bbox: {exc}") from exc


def _parse_frame(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as exc:
        raise InvalidInputError(f"--frame expects WxH, got {text!r}") from exc


def _parse_mode(text: str | None) -> str | None:
    if text is None:
        return None
    aliases = {"ar": "autoregressive", "autoregressive": "autoregressive",
               "direct": "direct"}
    if text not in aliases:
        raise InvalidInputError(f"--mode must be 'ar' or 'direct', got {text!r}")
    return aliases[text]


def _parse_classes(text: str) -> list[str]:
    if text == "all":
        return list(MOTION_CLASSES)
    return [c.strip() for c in text.split(",") if c.strip()]


def _parse_style(text: str | None) -> OverlayStyle:
    """Parse 'color=0,255,255,opacity=0.5,radius=2,width=1'."""
    if not text:
        return OverlayStyle()
    fields: dict[str, list[str]] = {}
    current = None
    for token in text.split(","):
        if "=" in token:
            current, value = token.split("=", 1)
            current = current.strip()
            fields[current] = [value.strip()]
        elif current is not None:
            fields[current].append(token.strip())
        else:
            raise InvalidInputError(f"--style: dangling token {token!r}")
    kwargs = {}
    if "color" in fields:
        if len(fields["color"]) != 3:
            raise InvalidInputError("--style color needs three components")
        kwargs["color"] = tuple(int(v) for v in fields["color"])
    if "opacity" in fields:
        kwargs["opacity"] = float(fields["opacity"][0])
    if "radius" in fields:
        kwargs["point_radius_px"] = int(fields["radius"][0])
    if "width" in fields:
        kwargs["line_width_px"] = int(fields["width"][0])
    unknown = fields.keys() - {"color", "opacity", "radius", "width"}
    if unknown:
        raise InvalidInputError(f"--style: unknown keys {sorted(unknown)}")
    return OverlayStyle(**kwargs)


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = dict(kv.split("=", 1) for kv in getattr(args, "set", []) or [])
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def _make_provider(config: RunConfig, cache_path: str | None):
    if cache_path:
        return CachedEmbeddingProvider(cache_path, dim=config.latent_dim)
    if config.provider == "cache":
        raise InvalidInputError("config requests the cache provider; pass --cache PATH")
    return StubEmbeddingProvider(dim=config.latent_dim, seed=config.provider_seed)


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_synth_data(args) -> int:
    rows, cols = (int(v) for v in args.grid.lower().split("x"))
    w, h = _parse_frame(args.frame)
    corpus = synth_corpus(
        num_per_class=args.per_class,
        classes=_parse_classes(args.classes),
        seed=args.seed,
        grid_rows=rows,
        grid_cols=cols,
        num_frames=args.frames,
        width_px=w,
        height_px=h,
        jitter_px=args.jitter,
    )
    write_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} sequences to {args.out}")
    return 0


def _cmd_embed_cache(args) -> int:
    config = _load_run_config(args)
    corpus = read_corpus(args.corpus)
    if args.provider == "stub":
        provider = StubEmbeddingProvider(dim=args.dim, seed=args.provider_seed)
    else:
        if not args.source_cache:
            raise InvalidInputError("--provider file requires --source-cache")
        provider = CachedEmbeddingProvider(args.source_cache, dim=args.dim)
    cache: dict[str, np.ndarray] = {}
    texts = set()
    for seq in corpus:
        texts.update(seq.captions)
    texts.update(MOTION_CLASSES)
    for text in sorted(texts):
        cache[text_key(text)] = provider.embed_text(text)
    if not args.no_overlays:
        style = overlay_style_from_config(config)
        for seq in corpus:
            for frame in render_sequence(seq, None, style):
                cache[image_content_key(frame)] = provider.embed_image(frame)
    write_embedding_cache(cache, args.out, dim=args.dim)
    print(f"wrote {len(cache)} embeddings (dim {args.dim}) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = _load_run_config(args)
    corpus = read_corpus(args.corpus)
    provider = _make_provider(config, args.cache)
    resume = load_train_state(args.resume) if args.resume else None
    out_dir = Path(args.out)
    log_path = args.log or (out_dir / "train_log.jsonl")
    state = run_training(corpus, config, provider, out_dir=out_dir,
                         log_path=log_path, resume=resume)
    final = state.loss_history[-1].total if state.loss_history else float("nan")
    print(f"trained {state.step} steps; final total loss {final:.6f}; "
          f"checkpoint at {out_dir / 'final.l2mc'}")
    return 0


def _cmd_generate(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    provider = _make_provider(ckpt.config, args.cache)
    condition = condition_from_text(provider, args.text)
    grid = GridSpec(ckpt.config.grid_rows, ckpt.config.grid_cols, _parse_bbox(args.bbox))
    seq = generate(ckpt, condition, grid, _parse_frame(args.frame),
                   mode=_parse_mode(args.mode), description=args.text,
                   seq_id=args.id)
    write_corpus([seq], args.out)
    print(f"wrote generated trajectory to {args.out}")
    if args.render:
        render_dir = Path(args.render)
        render_dir.mkdir(parents=True, exist_ok=True)
        style = overlay_style_from_config(ckpt.config)
        for t, frame in enumerate(render_sequence(seq, None, style)):
            save_png(frame, render_dir / f"frame_{t:04d}.png")
        print(f"rendered {seq.num_frames} frames to {render_dir}")
    return 0


def _cmd_retrieve(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    provider = _make_provider(ckpt.config, args.cache)
    corpus = read_corpus(args.corpus)
    ks = [int(k) for k in args.k.split(",")]
    table = retrieval_recall(ckpt, provider, corpus, ks,
                             use_overlays=args.use_overlays)
    for k in ks:
        print(f"R@{k} {table[k]:.1f}")
    return 0


def _cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    provider = _make_provider(ckpt.config, args.cache)
    corpus = read_corpus(args.corpus)
    ks = [int(k) for k in args.retrieval_k.split(",")] if args.retrieval_k else None
    report = evaluate_generation(ckpt, provider, corpus, mode=_parse_mode(args.mode),
                                 units=args.units, retrieval_ks=ks)
    report.save_json(args.out)
    if args.csv:
        report.save_csv(args.csv)
    for name, agg in sorted(report.aggregates.items()):
        print(f"{name}: mean {agg['mean']:.4f} std {agg['std']:.4f}")
    if report.retrieval:
        for k, v in sorted(report.retrieval.items()):
            print(f"R@{k} {v:.1f}")
    print(f"report written to {args.out}")
    return 0


def _cmd_interpolate(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    provider = _make_provider(ckpt.config, args.cache)
    z_a = condition_from_text(provider, args.text_a)
    z_b = condition_from_text(provider, args.text_b)
    grid = GridSpec(ckpt.config.grid_rows, ckpt.config.grid_cols, _parse_bbox(args.bbox))
    frame = _parse_frame(args.frame)
    alphas = [float(a) for a in args.alphas.split(",")]
    seqs = []
    for alpha in alphas:
        z = interpolate(z_a, z_b, alpha, spherical=args.spherical)
        seqs.append(generate(
            ckpt, z, grid, frame, mode=_parse_mode(args.mode),
            description=f"{args.text_a} -> {args.text_b} @ {alpha}",
            seq_id=f"interp-{alpha:g}",
        ))
    write_corpus(seqs, args.out)
    print(f"wrote {len(seqs)} interpolated trajectories to {args.out}")
    return 0


def _cmd_classify(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    provider = _make_provider(ckpt.config, args.cache)
    corpus = read_corpus(args.corpus)
    classes = _parse_classes(args.classes)
    top1 = top5 = scored = 0
    for seq in corpus:
        truth = class_of(seq.id)
        if truth is None or truth not in classes:
            continue
        ranking = [name for name, _ in classify_zero_shot(ckpt, provider, seq, classes)]
        scored += 1
        top1 += ranking[0] == truth
        top5 += truth in ranking[:5]
    if scored == 0:
        raise InvalidInputError(
            "no sequence id matches a known class prefix; cannot score accuracy"
        )
    print(f"Top-1 accuracy: {100.0 * top1 / scored:.1f}% ({top1}/{scored})")
    print(f"Top-5 accuracy: {100.0 * top5 / scored:.1f}% ({top5}/{scored})")
    return 0


def _cmd_render(args) -> int:
    corpus = read_corpus(args.traj)
    style = _parse_style(args.style)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    indices = range(len(corpus)) if args.index is None else [args.index]
    count = 0
    for i in indices:
        if not 0 <= i < len(corpus):
            raise InvalidInputError(f"--index {i} outside corpus of {len(corpus)}")
        seq = corpus[i]
        for t, frame in enumerate(render_sequence(seq, None, style)):
            save_png(frame, out_dir / f"{seq.id}_frame_{t:04d}.png")
            count += 1
    print(f"rendered {count} frames to {out_dir}")
    return 0


_ABLATION_AXES = {
    "text-recon": [("with-text-recon", {}), ("without-text-recon", {"use_text_recon": "false"})],
    "recon-norm": [("L1", {"recon_norm": "L1"}), ("L2", {"recon_norm": "L2"})],
    "decode-mode": [("autoregressive", {"decode_mode": "autoregressive"}),
                    ("direct", {"decode_mode": "direct"})],
}


def _cmd_ablate(args) -> int:
    base = _load_run_config(args)
    train_corpus = read_corpus(args.corpus)
    eval_corpus = read_corpus(args.eval_corpus) if args.eval_corpus else None
    if eval_corpus is None:
        train_corpus, eval_corpus = split_corpus(train_corpus, 0.8, base.seed)
    rows = []
    for label, overrides in _ABLATION_AXES[args.axis]:
        cfg = apply_overrides(base, overrides)
        provider = _make_provider(cfg, args.cache)
        ckpt = train(train_corpus, cfg, provider)
        report = evaluate_generation(ckpt, provider, eval_corpus)
        row = {"variant": label}
        row.update({
            name: report.aggregates[name]["mean"]
            for name in ("ade", "fde", "smoothness", "text_sim")
        })
        rows.append(row)
    header = f"{'variant':<20} {'ADE':>10} {'FDE':>10} {'Smooth':>8} {'TextSim':>8}"
    print(header)
    for row in rows:
        print(f"{row['variant']:<20} {row['ade']:>10.3f} {row['fde']:>10.3f} "
              f"{row['smoothness']:>8.3f} {row['text_sim']:>8.3f}")
    better = "yes" if rows[0]["ade"] <= rows[1]["ade"] else "no"
    print(f"# first variant at or below second on ADE: {better}")
    if args.out:
        Path(args.out).write_text(json.dumps({"axis": args.axis, "rows": rows}, indent=2)
                                  + "\n", encoding="utf-8")
        print(f"table written to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser wiring


def build_parser() -> _Parser:
    parser = _Parser(prog="text2traj",
                     description="Train and use a text-conditioned trajectory generator.")
    parser.add_argument("--version", action="version", version=f"text2traj {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-data", help="generate a synthetic labeled corpus")
    p.add_argument("--classes", default="all")
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", default="6x6")
    p.add_argument("--frames", type=int, default=30)
    p.add_argument("--frame", default="640x480")
    p.add_argument("--jitter", type=float, default=0.5)
    p.set_defaults(handler=_cmd_synth_data)

    p = sub.add_parser("embed-cache", help="precompute caption/overlay embeddings")
    p.add_argument("--corpus", required=True)
    p.add_argument("--provider", choices=("stub", "file"), default="stub")
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--provider-seed", type=int, default=0)
    p.add_argument("--source-cache")
    p.add_argument("--no-overlays", action="store_true")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(handler=_cmd_embed_cache)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config")
    p.add_argument("--corpus", required=True)
    p.add_argument("--cache")
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--resume")
    p.add_argument("--log")
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("generate", help="generate a trajectory from text")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--bbox", required=True)
    p.add_argument("--frame", required=True)
    p.add_argument("--mode")
    p.add_argument("--out", required=True)
    p.add_argument("--render")
    p.add_argument("--cache")
    p.add_argument("--id", default="generated")
    p.set_defaults(handler=_cmd_generate)

    p = sub.add_parser("retrieve", help="text-to-trajectory retrieval R@K")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--k", default="1,3,5,10")
    p.add_argument("--cache")
    p.add_argument("--use-overlays", action="store_true")
    p.set_defaults(handler=_cmd_retrieve)

    p = sub.add_parser("evaluate", help="generation quality report")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    p.add_argument("--mode")
    p.add_argument("--units", choices=("px", "normalized"), default="px")
    p.add_argument("--retrieval-k", metavar="K1,K2,...")
    p.add_argument("--cache")
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser("interpolate", help="generate along a latent interpolation")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--text-a", required=True)
    p.add_argument("--text-b", required=True)
    p.add_argument("--alphas", default="0,0.25,0.5,0.75,1")
    p.add_argument("--bbox", required=True)
    p.add_argument("--frame", required=True)
    p.add_argument("--mode")
    p.add_argument("--spherical", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--cache")
    p.set_defaults(handler=_cmd_interpolate)

    p = sub.add_parser("classify", help="zero-shot classification accuracy")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--classes", default="all")
    p.add_argument("--cache")
    p.set_defaults(handler=_cmd_classify)

    p = sub.add_parser("render", help="render trajectory overlays to PNG")
    p.add_argument("--traj", required=True)
    p.add_argument("--style")
    p.add_argument("--out", required=True)
    p.add_argument("--index", type=int)
    p.set_defaults(handler=_cmd_render)

    p = sub.add_parser("ablate", help="train and compare two config variants")
    p.add_argument("--corpus", required=True)
    p.add_argument("--eval-corpus")
    p.add_argument("--axis", choices=sorted(_ABLATION_AXES), required=True)
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--cache")
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except NonFiniteLossError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (Text2TrajError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
