"""Command-line entry point: ``blindspot <subcommand> [flags]``.

Every subcommand resolves a :class:`~blindspot.config.RunConfig` (flags over
``--config`` file over defaults), writes it to ``config.yaml`` inside a run
directory named by its hash, and then produces its artifacts there.

Exit codes: 0 on success, 2 for invalid configuration or arguments, 3 when a
required input (checkpoint, corpus, file) is missing.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .config import ConfigError, RunConfig, dump_config, load_config

log = logging.getLogger("blindspot")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_MISSING = 3


class MissingInput(FileNotFoundError):
    pass


# flag dest -> config key; flags default to None so only given ones override
_FLAG_KEYS = {
    "variant": "geometry.variant",
    "camera_fov": "geometry.camera_fov",
    "frame": "geometry.frame",
    "patch": "geometry.patch",
    "ratio": "geometry.tube_ratio",
    "mask_seed": "geometry.mask_seed",
    "steps": None,  # section depends on subcommand
    "lr": None,
    "batch_size": None,
    "length": "curation.length",
    "min_sim": "curation.min_similarity",
    "stride": "curation.stride_s",
    "period": "curation.period",
    "n_trials": "evaluation.n_trials",
    "seed": "seed",
    "output_dir": "output_dir",
}

_TRAINING_SECTION = {"pretrain": "pretrain", "train": "multimodal"}


def _parse_set(items: Sequence[str]) -> Dict[str, str]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}", source="<command line>")
        out[key.strip()] = value.strip()
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides: Dict[str, Any] = _parse_set(args.set or [])
    for dest, key in _FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if key is None:
            key = f"{_TRAINING_SECTION[args.command]}.{dest}"
        overrides[key] = value
    return load_config(args.config, overrides)


def prepare_run(config: RunConfig, command: str, inputs: Optional[Dict[str, str]] = None) -> Path:
    """Create ``<root>/<command>-<hash>`` and write the resolved config snapshot."""
    from .evaluation.report import config_hash

    key = {"command": command, "config": config.hashable(), "inputs": inputs or {}}
    run = config.output_root() / f"{command}-{config_hash(key)}"
    run.mkdir(parents=True, exist_ok=True)
    snapshot = dump_config(config)
    if inputs:
        snapshot += "# inputs\n" + "".join(f"#   {k}: {v}\n" for k, v in sorted(inputs.items()))
    (run / "config.yaml").write_text(snapshot, encoding="utf-8")
    return run


def _require(path: Optional[str], what: str) -> Path:
    if path is None:
        raise MissingInput(f"{what} not given")
    p = Path(path)
    if not p.exists():
        raise MissingInput(f"{what} not found: {p}")
    return p


# -- shared data plumbing ---------------------------------------------------


def corpus_spec(config: RunConfig, seed: int):
    from .data.synthetic import SyntheticSpec

    d = config.data
    return SyntheticSpec(
        n_concepts=d.n_concepts,
        clips_per_concept=d.clips_per_concept,
        n_frames=d.source_frames,
        height=d.height,
        width=d.width,
        fps=d.fps,
        seed=seed,
    )


def corpus_clips(corpus, config: RunConfig) -> List[np.ndarray]:
    """Centered evaluation-mode clips, one per corpus source."""
    from .data.augment import Mode, augment
    from .data.clips import sample_clip

    d = config.data
    out = []
    for src in corpus.sources:
        clip = sample_clip(src.frames, d.clip_frames, d.clip_stride)
        out.append(augment(clip, Mode.EVAL, size=d.crop_size))
    return out


def corpus_stacked(corpus, config: RunConfig) -> List[np.ndarray]:
    """Each source's middle frame stacked into a static clip, evaluation-mode."""
    from .data.augment import Mode, augment
    from .data.clips import stack_image

    d = config.data
    return [
        augment(stack_image(img, d.clip_frames), Mode.EVAL, size=d.crop_size)
        for img in corpus.middle_frames()
    ]


def pretrain_subset(labels: Sequence[str], n: int) -> List[int]:
    """Round-robin over concepts so the subset stays class-balanced."""
    by_label: Dict[str, List[int]] = {}
    for i, l in enumerate(labels):
        by_label.setdefault(l, []).append(i)
    queues = [by_label[l] for l in sorted(by_label)]
    out: List[int] = []
    depth = 0
    while len(out) < n and any(depth < len(q) for q in queues):
        out.extend(q[depth] for q in queues if depth < len(q))
        depth += 1
    return sorted(out[:n])


def encoder_config(config: RunConfig):
    from .mae import EncoderConfig

    m = config.model
    return EncoderConfig(
        embed_dim=m.embed_dim,
        depth=m.depth,
        n_heads=m.n_heads,
        decoder_dim=m.decoder_dim,
        decoder_depth=m.decoder_depth,
        decoder_heads=m.decoder_heads,
        mlp_ratio=m.mlp_ratio,
        patch_size=config.geometry.patch,
        learnable_pos=m.learnable_pos,
    )


def training_mask_source(config: RunConfig):
    """Mask source at the training crop size (the ``frame`` key only affects ``mask``)."""
    from .mae import fixed_mask_source, random_tube_source
    from .masks import FrameGeometry, Variant, build_mask

    g = config.geometry
    frame = FrameGeometry(config.data.crop_size, config.data.crop_size, g.patch)
    if Variant(g.variant) is Variant.RANDOM_TUBE:
        return random_tube_source(frame, g.tube_ratio, g.mask_seed)
    return fixed_mask_source(build_mask(g.variant, frame, config.camera(), config.visual_field()))


# -- subcommands ------------------------------------------------------------


def cmd_mask(args, config: RunConfig) -> int:
    from .masks import build_mask, mask_to_text, masking_ratio, save_mask_image

    g = config.geometry
    frame = config.frame_geometry()
    mask = build_mask(g.variant, frame, config.camera(), config.visual_field(), g.tube_ratio, g.mask_seed)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        prepare_run(config, "mask")
    else:
        out = prepare_run(config, "mask") / "mask.txt"
    if out.suffix.lower() == ".png":
        save_mask_image(mask, out, frame.patch_size_px)
    else:
        out.write_text(mask_to_text(mask), encoding="utf-8")
        save_mask_image(mask, out.with_suffix(".png"), frame.patch_size_px)
    print(f"{mask.describe()}: masked {mask.n_masked}/{mask.grid.size} ratio {masking_ratio(mask):.4f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_synth(args, config: RunConfig) -> int:
    from .data.synthetic import generate_synthetic_corpus, save_corpus

    run = prepare_run(config, "synth")
    for name, seed in (("train", config.data.corpus_seed), ("test", config.evaluation.heldout_seed)):
        corpus = generate_synthetic_corpus(corpus_spec(config, seed), root="clips")
        save_corpus(corpus, run / name)
        print(f"{name}: {len(corpus.sources)} clips, {len(corpus.words)} concepts -> {run / name}")
    return EXIT_OK


def cmd_pretrain(args, config: RunConfig) -> int:
    from .checkpoint import write_loss_log
    from .data.synthetic import load_corpus
    from .mae import PretrainConfig, pretrain

    corpus_dir = _require(args.corpus, "corpus directory")
    run = prepare_run(config, "pretrain", {"corpus": str(corpus_dir.resolve())})
    corpus = load_corpus(corpus_dir)
    idx = pretrain_subset(corpus.labels, config.data.pretrain_clips)
    clips = corpus_clips(corpus, config)
    dataset = [clips[i] for i in idx]
    p = config.pretrain
    pc = PretrainConfig(encoder_config(config), p.steps, p.batch_size, p.lr, p.weight_decay, seed=config.seed)
    result = pretrain(dataset, pc, training_mask_source(config), checkpoint_path=run / "encoder.npz",
                      variant=config.geometry.variant)
    write_loss_log(run / "loss.csv", result.losses)
    if result.losses:
        print(f"loss {result.losses[0][1]:.4f} -> {result.losses[-1][1]:.4f} over {len(result.losses)} steps")
    print(f"wrote {result.checkpoint_path}")
    return EXIT_OK


def cmd_train(args, config: RunConfig) -> int:
    from .checkpoint import write_loss_log
    from .contrastive import MultimodalConfig, train_multimodal
    from .data.synthetic import load_corpus
    from .mae import load_model

    corpus_dir = _require(args.corpus, "corpus directory")
    enc_path = _require(args.encoder, "encoder checkpoint")
    run = prepare_run(config, "train", {"corpus": str(corpus_dir.resolve()), "encoder": str(enc_path.resolve())})
    corpus = load_corpus(corpus_dir)
    encoder, _ = load_model(enc_path)
    m = config.multimodal
    mc = MultimodalConfig(m.steps, m.batch_size, m.lr, m.weight_decay, m.tau, m.dim, m.normalize, config.seed)
    result = train_multimodal(
        corpus_stacked(corpus, config), corpus.utterances, encoder, corpus.vocab, mc,
        checkpoint_path=run / "multimodal.npz", encoder_ref=str(enc_path),
    )
    corpus.vocab.save(run / "vocab.txt")
    write_loss_log(run / "loss.csv", result.losses)
    if result.losses:
        print(f"loss {result.losses[0][1]:.4f} -> {result.losses[-1][1]:.4f} over {len(result.losses)} steps")
    print(f"wrote {result.checkpoint_path}")
    return EXIT_OK


def cmd_eval(args, config: RunConfig) -> int:
    from .contrastive import load_multimodal
    from .data.synthetic import load_corpus
    from .evaluation import (
        emit_report,
        extract_features,
        linear_probe,
        make_split,
        make_trials,
        multimodal_scorer,
        read_trials,
        trial_outcomes,
        write_trials,
    )

    ckpt_path = _require(args.checkpoint, "multimodal checkpoint")
    corpus_dir = _require(args.corpus, "corpus directory")
    inputs = {"checkpoint": str(ckpt_path.resolve()), "corpus": str(corpus_dir.resolve())}
    if args.trials:
        inputs["trials"] = str(_require(args.trials, "trials file").resolve())
    run = prepare_run(config, "eval", inputs)
    model, _ = load_multimodal(ckpt_path)
    corpus = load_corpus(corpus_dir)
    vocab = corpus.vocab

    refs = [s.path for s in corpus.sources]
    label_of = dict(zip(refs, corpus.labels))
    if args.trials:
        trials = read_trials(args.trials, label_of)
    else:
        trials = make_trials(label_of, config.evaluation.n_trials, config.evaluation.trial_seed)
    write_trials(run / "trials.csv", trials)

    from .data.augment import Mode, augment

    size = config.data.crop_size
    exemplars = dict(zip(refs, corpus.middle_frames()))
    scorer = multimodal_scorer(model, vocab, exemplars, preprocess=lambda c: augment(c, Mode.EVAL, size=size))
    ok = trial_outcomes(scorer, trials)
    results = {"multimodal": [(t.target_label, o) for t, o in zip(trials, ok)]}
    emit_report(results, run, "trials")
    acc = float(np.mean(ok)) if ok else 0.0
    print(f"4-way trial accuracy {acc:.4f} over {len(trials)} trials")

    feats = extract_features(model.encoder, corpus_clips(corpus, config), preprocess=False)
    split = make_split(len(feats), seed=config.seed)
    probe = linear_probe(feats, corpus.labels, split, epochs=config.evaluation.probe_epochs, seed=config.seed)
    test_labels = [corpus.labels[i] for i in split.test]
    emit_report({"probe": list(zip(test_labels, probe.test_correct.tolist()))}, run, "probe")
    print(f"linear probe acc@1 {probe.acc1:.4f} acc@5 {probe.acc5:.4f}")
    print(f"wrote reports to {run}")
    return EXIT_OK


def report_settings(config: RunConfig):
    """Six report rows: two clip lengths, each unfiltered, thresholded, and thresholded with a stride."""
    c = config.curation
    rows = []
    for length in ("4s", "68f"):
        rows += [(length, 0.0, 0.0), (length, c.min_similarity, 0.0), (length, c.min_similarity, c.report_stride_s)]
    return rows


def cmd_curate(args, config: RunConfig) -> int:
    import csv

    from .data.curation import CurationConfig, PixelEmbedder, curate, curation_report
    from .data.manifest import write_manifest
    from .data.synthetic import make_planted_corpus

    c = config.curation
    run = prepare_run(config, "curate")
    planted = make_planted_corpus(
        n_sources=c.n_sources, n_planted=c.n_planted, n_decoys=c.n_decoys, period=c.period, seed=config.seed
    )
    cfg = CurationConfig(c.length, c.min_similarity, c.stride_s, c.period)
    result = curate(planted.images, planted.sources, PixelEmbedder(), cfg)
    write_manifest(run / "manifest.csv", result.entries)
    rows = curation_report(result.matches, planted.images, planted.sources, report_settings(config))
    with open(run / "report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["length", "min_similarity", "stride_s", "n_clips"])
        w.writerows(rows)
    print(f"{len(result.entries)} of {len(planted.images)} labeled images kept")
    for length, sim, stride, n in rows:
        print(f"  length {length:>4}  sim {sim:<5g} stride {stride:<4g} -> {n}")
    print(f"wrote {run / 'manifest.csv'}")
    return EXIT_OK


def cmd_plot(args, config: RunConfig) -> int:
    from .checkpoint import read_loss_log
    from .evaluation.report import plot_per_class, read_per_class

    src = _require(args.input, "input file")
    run = prepare_run(config, "plot", {"input": str(src.resolve())})
    out = Path(args.out) if args.out else run / (src.stem + ".png")
    header = src.read_text(encoding="utf-8").splitlines()[:1]
    if header == ["step,loss"]:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        steps, losses = zip(*read_loss_log(src)) if read_loss_log(src) else ((), ())
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(steps, losses)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        fig.tight_layout()
        fig.savefig(out, dpi=100, metadata={"Software": None})
        plt.close(fig)
    else:
        try:
            rows = read_per_class(src)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"not a loss log or per-class table: {exc}", source=str(src)) from None
        plot_per_class(rows, out)
    print(f"wrote {out}")
    return EXIT_OK


COMMANDS = {
    "mask": cmd_mask,
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "curate": cmd_curate,
    "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key, e.g. model.depth=2")
    common.add_argument("--seed", type=int)
    common.add_argument("--output-dir", help="root for run directories (default $BLINDSPOT_OUTPUT_ROOT or ./runs)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="blindspot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask", parents=[common], help="build and export a patch mask")
    p.add_argument("action", nargs="?", choices=["build"], default="build")
    p.add_argument("--variant")
    p.add_argument("--camera-fov", metavar="WxH")
    p.add_argument("--frame", metavar="HxW")
    p.add_argument("--patch", type=int)
    p.add_argument("--ratio", type=float, help="random tube masking ratio")
    p.add_argument("--mask-seed", type=int)
    p.add_argument("--out", help="text grid path (.png writes only the image)")

    sub.add_parser("synth", parents=[common], help="generate train and held-out synthetic corpora")

    for name, help_text in (("pretrain", "masked-autoencoder pretraining"), ("train", "multimodal contrastive training")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--corpus", help="training corpus directory written by synth")
        p.add_argument("--steps", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", type=int)
        if name == "pretrain":
            p.add_argument("--variant")
            p.add_argument("--camera-fov", metavar="WxH")
            p.add_argument("--ratio", type=float)
        else:
            p.add_argument("--encoder", help="pretrained encoder checkpoint")

    p = sub.add_parser("eval", parents=[common], help="4-way trials and linear probe")
    p.add_argument("--checkpoint", help="multimodal checkpoint")
    p.add_argument("--corpus", help="held-out corpus directory")
    p.add_argument("--trials", help="trials file; generated when omitted")
    p.add_argument("--n-trials", type=int)

    p = sub.add_parser("curate", parents=[common], help="similarity curation on a planted corpus")
    p.add_argument("--length", help="clip length, e.g. 4s or 68f")
    p.add_argument("--min-sim", type=float)
    p.add_argument("--stride", type=float, help="minimum center distance in seconds")
    p.add_argument("--period", type=int)

    p = sub.add_parser("plot", parents=[common], help="plot a loss log or per-class table")
    p.add_argument("input")
    p.add_argument("--out")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](args, config)
    except (MissingInput, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
