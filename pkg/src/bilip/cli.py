"""Command-line entry points binding the modules into the two-phase pipeline.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure (non-finite loss). Every command writes its declared outputs plus a
``*.run.json`` manifest echoing the configuration, seed, and versions.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .analogy import AnalogyError, GalleryIndex, analogy_query, AnalogyQuery, build_gallery, sweep_weight
from .bpe import TokenizerError, Vocabulary, train_bpe
from .checkpoint import CheckpointError
from .config import ConfigError, load_run_config, require_inputs
from .contrastive import NumericalError, TrainError
from .corpus import (CorpusError, FilterConfig, filter_records, read_manifest,
                     write_filter_report, write_manifest)
from .encoders import EncoderError
from .evaluation import (EvalError, LabelSet, crosslingual_heatmap,
                         embed_images, embed_texts, export_heatmap_csv,
                         export_metrics, render_heatmap, retrieval_eval,
                         zeroshot_classify)
from .imaging import load_image
from .mae import MAEError
from .pipeline import (PipelineError, generate_toy_dataset, load_pairs,
                       load_toy_labels, prepare_eval_image, run_mae_phase,
                       run_train_phase, write_run_manifest, write_toy_dir)
from .toydata import ToyDataError

DATA_ERRORS = (CorpusError, TokenizerError, CheckpointError, EvalError,
               AnalogyError, ToyDataError, MAEError, TrainError, EncoderError,
               PipelineError, FileNotFoundError, OSError)


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _load_model(args):
    from .pipeline import load_contrastive
    model, cfg = load_contrastive(args.checkpoint)
    vocab = Vocabulary.load(args.vocab)
    if vocab.vocab_size != model.text.cfg.vocab_size:
        raise ConfigError(
            f"vocabulary size {vocab.vocab_size} does not match the checkpoint "
            f"({model.text.cfg.vocab_size})"
        )
    return model, cfg, vocab


def _load_eval_data(args, model_cfg):
    """Toy-data directory -> unique images (model resolution), refs, records."""
    data_dir = Path(args.data_dir)
    pairs = load_pairs(data_dir / "manifest.tsv", data_dir)
    size = model_cfg.image_size
    images = np.stack([prepare_eval_image(img, size) for img in pairs.images])
    return pairs, images


# -- commands -----------------------------------------------------------------------


def cmd_gen_toy_data(args) -> int:
    out_dir = Path(args.out)
    dataset = generate_toy_dataset(args.concepts, args.samples, args.seed,
                                   out_dir=out_dir, render_size=args.render_size)
    write_toy_dir(dataset, out_dir)
    write_run_manifest(out_dir / "gen-toy-data.run.json", "gen-toy-data",
                       {"concepts": args.concepts, "samples": args.samples,
                        "render_size": args.render_size}, args.seed)
    print(f"wrote {dataset.num_images} images / {len(dataset.records)} pair records "
          f"to {out_dir}")
    return 0


def cmd_tokenizer_train(args) -> int:
    records = read_manifest(args.manifest)
    if not records:
        raise CorpusError(f"manifest {args.manifest} has no records")
    vocab = train_bpe((r.caption for r in records), args.target_vocab)
    vocab.save(args.out)
    write_run_manifest(Path(args.out).with_suffix(".run.json"), "tokenizer-train",
                       {"manifest": args.manifest, "target_vocab": args.target_vocab,
                        "actual_vocab": vocab.vocab_size}, seed=0)
    print(f"trained vocabulary of size {vocab.vocab_size} -> {args.out}")
    return 0


def _scores_file_scorer(path):
    table = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            ref, w, h, sim, nsfw = line.split("\t")
            table[ref] = ((int(w), int(h)), float(sim), float(nsfw))

    def scorer(record):
        if record.image_ref not in table:
            raise CorpusError(f"no scores for {record.image_ref}")
        return table[record.image_ref]

    return scorer


def _model_scorer(args, cfg_filter):
    model, cfg, vocab = _load_model(args)
    images_dir = Path(args.images_dir or Path(args.manifest).parent)
    nsfw_feats = embed_texts(model, vocab, cfg_filter.nsfw_prompts)

    def scorer(record):
        image = load_image(images_dir / record.image_ref)
        h, w = image.shape[:2]
        view = prepare_eval_image(image, cfg.image_size)
        img_feat = embed_images(model, view[None])[0]
        cap_feat = embed_texts(model, vocab, [record.caption])[0]
        sim = float(img_feat @ cap_feat)
        nsfw = float((nsfw_feats @ img_feat).max())
        return (w, h), sim, nsfw

    return scorer


def cmd_filter_corpus(args) -> int:
    cfg = FilterConfig(
        min_side=args.min_side, sim_threshold=args.sim_threshold,
        nsfw_threshold=args.nsfw_threshold,
        **({"nsfw_prompts": Path(args.nsfw_prompts).read_text("utf-8").split("\n")}
           if args.nsfw_prompts else {}),
    )
    records = read_manifest(args.manifest)
    if args.scores:
        scorer = _scores_file_scorer(args.scores)
    elif args.checkpoint and args.vocab:
        scorer = _model_scorer(args, cfg)
    else:
        raise ConfigError("filter-corpus needs --scores or --checkpoint/--vocab")
    kept, report = filter_records(records, scorer, cfg)
    write_manifest(kept, args.out_manifest)
    write_filter_report(report, args.report)
    write_run_manifest(Path(args.out_manifest).with_suffix(".run.json"), "filter-corpus",
                       {"manifest": args.manifest, "min_side": cfg.min_side,
                        "sim_threshold": cfg.sim_threshold,
                        "nsfw_threshold": cfg.nsfw_threshold}, seed=0)
    print(f"kept {len(kept)}/{len(records)} records -> {args.out_manifest}")
    return 0


def cmd_pretrain_mae(args) -> int:
    cfg = load_run_config(args.config, _overrides(args.set), phase="mae")
    require_inputs(cfg, "manifest")
    if not cfg.checkpoint_out:
        raise ConfigError("checkpoint_out must be set")
    summary = run_mae_phase(cfg)
    write_run_manifest(Path(cfg.checkpoint_out).with_suffix(".run.json"),
                       "pretrain-mae", cfg.echo(), cfg.seed)
    loss = summary["final_loss"]
    print(f"pre-trained {summary['steps']} steps"
          + (f", final loss {loss:.6f}" if loss is not None else ""))
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, _overrides(args.set), phase="contrastive")
    require_inputs(cfg, "manifest", "vocab")
    if cfg.init_checkpoint:
        require_inputs(cfg, "init_checkpoint")
    if not cfg.checkpoint_out:
        raise ConfigError("checkpoint_out must be set")
    summary = run_train_phase(cfg)
    write_run_manifest(Path(cfg.checkpoint_out).with_suffix(".run.json"),
                       "train", cfg.echo(), cfg.seed)
    loss = summary["final_loss"]
    print(f"trained {summary['steps']} steps"
          + (f", final loss {loss:.6f}" if loss is not None else "")
          + f", tau {summary['tau']:.4f}")
    return 0


def cmd_eval_zeroshot(args) -> int:
    model, cfg, vocab = _load_model(args)
    pairs, images = _load_eval_data(args, cfg)
    labels_a, labels_b, concepts = load_toy_labels(args.data_dir)
    labels = labels_a if args.language == "synthetic-A" else labels_b
    if not labels:
        raise EvalError(f"no labels for {args.language} in {args.data_dir}")
    labelset = LabelSet(class_names=labels, language=args.language)
    preds, _ = zeroshot_classify(images, labelset, model, vocab)
    truth = np.array([concepts[ref] for ref in pairs.image_refs])
    accuracy = float((preds == truth).mean())
    metrics = {"accuracy": accuracy, "num_images": len(truth),
               "num_classes": len(labels)}
    if args.out:
        export_metrics("zero-shot-classification", str(args.data_dir),
                       args.language, metrics, args.out)
        write_run_manifest(Path(args.out).with_suffix(".run.json"), "eval-zeroshot",
                           {"checkpoint": args.checkpoint, "language": args.language},
                           cfg.seed)
    print(f"zero-shot accuracy [{args.language}]: {accuracy:.4f}")
    return 0


def cmd_eval_retrieval(args) -> int:
    model, cfg, vocab = _load_model(args)
    pairs, images = _load_eval_data(args, cfg)
    records = pairs.records
    if args.language != "all":
        keep = [i for i, r in enumerate(records) if r.language == args.language]
    else:
        keep = list(range(len(records)))
    if not keep:
        raise EvalError(f"no records for language {args.language}")
    captions = [records[i].caption for i in keep]
    gt: dict[int, list[int]] = {}
    for col, i in enumerate(keep):
        gt.setdefault(int(pairs.pair_image_idx[i]), []).append(col)
    img_feats = embed_images(model, images)
    txt_feats = embed_texts(model, vocab, captions)
    ks = [int(k) for k in args.ks.split(",")]
    results = retrieval_eval(img_feats, txt_feats, gt, ks=ks)
    metrics = {direction: {f"recall@{k}": v for k, v in res.recall_at.items()}
               for direction, res in results.items()}
    if args.out:
        export_metrics("cross-modal-retrieval", str(args.data_dir),
                       args.language, metrics, args.out)
        write_run_manifest(Path(args.out).with_suffix(".run.json"), "eval-retrieval",
                           {"checkpoint": args.checkpoint, "language": args.language},
                           cfg.seed)
    for direction, res in results.items():
        line = ", ".join(f"R@{k}={v:.2f}%" for k, v in sorted(res.recall_at.items()))
        print(f"{direction}: {line}")
    return 0


def cmd_heatmap(args) -> int:
    model, cfg, vocab = _load_model(args)
    if args.texts_a and args.texts_b:
        texts_a = Path(args.texts_a).read_text("utf-8").splitlines()
        texts_b = Path(args.texts_b).read_text("utf-8").splitlines()
    elif args.data_dir:
        texts_a, texts_b, _ = load_toy_labels(args.data_dir)
    else:
        raise ConfigError("heatmap needs --data-dir or --texts-a/--texts-b")
    heatmap = crosslingual_heatmap(texts_a, texts_b, model, vocab)
    export_heatmap_csv(heatmap, args.out)
    if args.render:
        render_heatmap(heatmap, args.render)
    write_run_manifest(Path(args.out).with_suffix(".run.json"), "heatmap",
                       {"checkpoint": args.checkpoint}, cfg.seed)
    print(f"diagonal argmax hit rate: {heatmap.diagonal_hit_rate:.3f} -> {args.out}")
    return 0


def _gallery_from_args(args, model, cfg) -> GalleryIndex:
    if args.index:
        return GalleryIndex.load(args.index)
    if not args.gallery_dir:
        raise ConfigError("analogy needs --index or --gallery-dir")
    gallery_dir = Path(args.gallery_dir)
    paths = sorted(p for p in gallery_dir.rglob("*.png"))
    if not paths:
        raise AnalogyError(f"no .png images under {gallery_dir}")
    images = np.stack([prepare_eval_image(load_image(p), cfg.image_size)
                       for p in paths])
    ids = [str(p.relative_to(gallery_dir)) for p in paths]
    index = build_gallery(images, model, ids=ids)
    if args.save_index:
        index.save(args.save_index)
    return index


def _analogy_features(args, model, cfg, vocab):
    image = prepare_eval_image(load_image(args.image), cfg.image_size)
    x = embed_images(model, image[None])[0]
    y = embed_texts(model, vocab, [args.text])[0]
    return x, y


def cmd_analogy(args) -> int:
    model, cfg, vocab = _load_model(args)
    index = _gallery_from_args(args, model, cfg)
    x, y = _analogy_features(args, model, cfg, vocab)
    results = analogy_query(AnalogyQuery(x, y, args.w, args.k), index)
    for rank, (gallery_id, score) in enumerate(results, start=1):
        print(f"{rank}\t{gallery_id}\t{score:.6f}")
    return 0


def cmd_sweep_w(args) -> int:
    model, cfg, vocab = _load_model(args)
    index = _gallery_from_args(args, model, cfg)
    x, y = _analogy_features(args, model, cfg, vocab)
    grid = [float(w) for w in args.w_grid.split(",")]
    for w, results in sweep_weight(x, y, grid, index, k=args.k):
        print(f"w={w:g}")
        for rank, (gallery_id, score) in enumerate(results, start=1):
            print(f"  {rank}\t{gallery_id}\t{score:.6f}")
    return 0


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bilip",
        description="Bilingual contrastive language-image pipeline (desk scale).")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-toy-data", help="render the procedural bilingual dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--concepts", type=int, default=8)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--render-size", type=int, default=64)
    p.set_defaults(func=cmd_gen_toy_data)

    p = sub.add_parser("tokenizer-train", help="train the byte-level BPE vocabulary")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target-vocab", type=int, default=512)
    p.set_defaults(func=cmd_tokenizer_train)

    p = sub.add_parser("filter-corpus", help="apply the size/similarity/NSFW filter")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-manifest", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--scores", help="TSV of image_ref, width, height, sim, nsfw")
    p.add_argument("--checkpoint")
    p.add_argument("--vocab")
    p.add_argument("--images-dir")
    p.add_argument("--min-side", type=int, default=32)
    p.add_argument("--sim-threshold", type=float, default=0.28)
    p.add_argument("--nsfw-threshold", type=float, default=0.22)
    p.add_argument("--nsfw-prompts")
    p.set_defaults(func=cmd_filter_corpus)

    for name, func in (("pretrain-mae", cmd_pretrain_mae), ("train", cmd_train)):
        p = sub.add_parser(name, help=f"{name} phase from a run config")
        p.add_argument("--config", required=True)
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config value (repeatable)")
        p.set_defaults(func=func)

    p = sub.add_parser("eval-zeroshot", help="zero-shot classification accuracy")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--language", default="synthetic-A",
                   choices=["synthetic-A", "synthetic-B"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_zeroshot)

    p = sub.add_parser("eval-retrieval", help="cross-modal retrieval recall@K")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--language", default="all",
                   choices=["all", "synthetic-A", "synthetic-B", "en", "ko"])
    p.add_argument("--ks", default="1,5,10")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_retrieval)

    p = sub.add_parser("heatmap", help="cross-lingual cosine similarity heatmap")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--data-dir")
    p.add_argument("--texts-a")
    p.add_argument("--texts-b")
    p.add_argument("--out", required=True)
    p.add_argument("--render", help="optional rendered image path (matplotlib)")
    p.set_defaults(func=cmd_heatmap)

    for name, func in (("analogy", cmd_analogy), ("sweep-w", cmd_sweep_w)):
        p = sub.add_parser(name, help="feature-analogy retrieval")
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--vocab", required=True)
        p.add_argument("--image", required=True)
        p.add_argument("--text", required=True)
        p.add_argument("--index")
        p.add_argument("--gallery-dir")
        p.add_argument("--save-index")
        p.add_argument("--k", type=int, default=10)
        if name == "analogy":
            p.add_argument("--w", type=float, default=2.0)
        else:
            p.add_argument("--w-grid", default="1,2,3,4,5")
        p.set_defaults(func=func)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
