"""Command-line interface.

Subcommands: ``synth`` (generate a synthetic corpus), ``train`` (joint or
separate strategy), ``align`` (projections + maps for a separately
trained model), ``decode``, ``score``, and the three studies
(``spectrum``, ``ablate``, ``cycle-study``).  Every training and
inference hyperparameter is a flag with its standard default.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import alignment as al
from . import corpus as cp
from . import decoder as dec
from . import harness as hn
from . import trainer as tr
from .nets import NetConfig
from .objectives import LossWeights

log = logging.getLogger("phonembed")


def _add_net_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("network")
    g.add_argument("--encoder-hidden", type=int, default=256)
    g.add_argument("--audio-decoder-hidden", type=int, default=512)
    g.add_argument("--text-decoder-hidden", type=int, default=256)
    g.add_argument("--layers", type=int, default=1, choices=(1, 2, 3))
    g.add_argument("--phonetic-dim", type=int, default=256)
    g.add_argument("--speaker-dim", type=int, default=256)
    g.add_argument("--subword-embed-dim", type=int, default=64)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--learning-rate", type=float, default=1e-4)
    g.add_argument("--batch-size", type=int, default=32)
    g.add_argument("--max-epochs", type=int, default=100)
    g.add_argument("--patience", type=int, default=10)
    g.add_argument("--grad-clip", type=float, default=5.0)
    g.add_argument("--negatives-per-pair", type=int, default=1)
    g.add_argument("--val-fraction", type=float, default=0.1)
    g.add_argument("--steps-per-epoch", type=int, default=None)
    g.add_argument("--n-critic", type=int, default=5)
    g.add_argument("--gp-weight", type=float, default=10.0)
    g.add_argument("--adv-weight", type=float, default=1.0)
    w = p.add_argument_group("loss weights")
    w.add_argument("--w-audio-recon", type=float, default=0.2)
    w.add_argument("--w-text-recon", type=float, default=1.0)
    w.add_argument("--w-cross-audio", type=float, default=0.2)
    w.add_argument("--w-cross-text", type=float, default=1.0)
    w.add_argument("--w-embedding", type=float, default=5.0)
    w.add_argument("--margin", type=float, default=0.01)
    w.add_argument("--enable-cycle", action="store_true")
    w.add_argument("--cycle-weight", type=float, default=1.0)
    w.add_argument("--cycle-mode", choices=("soft", "hard"), default="soft")


def _add_decode_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("decoding")
    g.add_argument("--beta", type=float, default=0.01, help="LM fusion weight")
    g.add_argument("--beam-size", type=int, default=10)
    g.add_argument("--lm-backoff", type=float, default=0.4)


def _weights_from(args) -> LossWeights:
    return LossWeights(
        audio_recon=args.w_audio_recon,
        text_recon=args.w_text_recon,
        cross_audio=args.w_cross_audio,
        cross_text=args.w_cross_text,
        embedding=args.w_embedding,
        margin=args.margin,
        cycle=args.cycle_weight,
        enable_cycle=args.enable_cycle,
    )


def _net_config_from(args, corpus: cp.Corpus) -> NetConfig:
    return NetConfig(
        feature_dim=corpus.feature_dim,
        inventory_size=corpus.lexicon.inventory_size,
        encoder_hidden=args.encoder_hidden,
        audio_decoder_hidden=args.audio_decoder_hidden,
        text_decoder_hidden=args.text_decoder_hidden,
        layers=args.layers,
        phonetic_dim=args.phonetic_dim,
        speaker_dim=args.speaker_dim,
        subword_embed_dim=args.subword_embed_dim,
    )


def _train_config_from(args, adversarial: bool = False) -> tr.TrainConfig:
    return tr.TrainConfig(
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        max_epochs=args.max_epochs,
        patience=args.patience,
        seed=args.seed,
        weights=_weights_from(args),
        grad_clip=args.grad_clip,
        negatives_per_pair=args.negatives_per_pair,
        val_fraction=args.val_fraction,
        cycle_mode=args.cycle_mode,
        steps_per_epoch=args.steps_per_epoch,
        adversarial=adversarial,
        n_critic=args.n_critic,
        gp_weight=args.gp_weight,
        adv_weight=args.adv_weight,
    )


def _pairs_from(args, corpus: cp.Corpus) -> cp.PairSet:
    n = args.n_paired if args.n_paired else len(corpus.annotated_indices)
    return cp.build_pair_set(corpus, n, seed=args.seed)


# -- subcommands ---------------------------------------------------------


def cmd_synth(args) -> int:
    spec = (
        cp.SynthSpec.from_json(Path(args.spec).read_text(encoding="utf-8"))
        if args.spec
        else cp.SynthSpec()
    )
    train, test = cp.generate_synthetic_split(spec, args.seed)
    out = Path(args.out)
    cp.save_corpus(train, out / "train")
    cp.save_corpus(test, out / "test")
    (out / "synth_spec.json").write_text(spec.to_json(), encoding="utf-8")
    print(
        f"wrote {train.n_spoken} train and {test.n_spoken} test spoken words "
        f"({train.duration():.4f} hr train) to {out}"
    )
    return 0


def cmd_train(args) -> int:
    corpus = cp.load_corpus_dir(args.corpus)
    if args.cmvn:
        corpus = cp.apply_cmvn(corpus)
    pairs = _pairs_from(args, corpus)
    net_cfg = _net_config_from(args, corpus)
    separate = args.strategy == "separate"
    cfg = _train_config_from(args, adversarial=separate)
    if separate:
        result = al.train_separate(corpus, pairs, net_cfg, cfg)
    else:
        result = tr.train_joint(corpus, pairs, net_cfg, cfg)
    tr.checkpoint_save(
        result.model,
        args.out,
        extra_meta={
            "strategy": args.strategy,
            "seed": args.seed,
            "n_paired": pairs.n_paired,
            "best_val": result.best_val,
            "best_epoch": result.best_epoch,
        },
    )
    if args.history:
        result.save_history(args.history)
    print(
        f"trained {result.steps} steps (best val {result.best_val:.4f} "
        f"at epoch {result.best_epoch}); checkpoint at {args.out}"
    )
    return 1 if result.aborted else 0


def cmd_align(args) -> int:
    corpus = cp.load_corpus_dir(args.corpus)
    if args.cmvn:
        corpus = cp.apply_cmvn(corpus)
    model = tr.checkpoint_load(
        args.checkpoint, expect={"feature_dim": corpus.feature_dim}
    )
    pairs = _pairs_from(args, corpus)
    bundle = al.build_alignment(
        model,
        corpus,
        pairs,
        dim=args.dim,
        cycle_weight=args.map_cycle_weight,
        steps=args.map_steps,
        lr=args.map_lr,
    )
    al.save_alignment(bundle, args.out)
    print(
        f"aligned {pairs.n_paired} pairs in {args.dim} dims; "
        f"final objective {bundle.final_objective:.6f}; saved to {args.out}"
    )
    return 0


def cmd_decode(args) -> int:
    train_corpus = cp.load_corpus_dir(args.train_corpus)
    test_corpus = cp.load_corpus_dir(args.test_corpus)
    if args.cmvn:
        train_corpus = cp.apply_cmvn(train_corpus)
        test_corpus = cp.apply_cmvn(test_corpus)
    model = tr.checkpoint_load(
        args.checkpoint, expect={"feature_dim": test_corpus.feature_dim}
    )
    if args.alignment:
        source = dec.AlignedEmbeddingSource(model, al.load_alignment(args.alignment))
    else:
        source = dec.JointEmbeddingSource(model)
    index = dec.build_text_index(train_corpus.lexicon, source)
    lm = dec.train_trigram_lm(
        train_corpus.transcripts,
        train_corpus.lexicon.n_words,
        dec.SmoothingConfig(backoff=args.lm_backoff),
    )
    if args.save_lm:
        lm.save(args.save_lm)
    results = dec.decode_corpus(
        test_corpus, source, index, lm, beta=args.beta, beam_size=args.beam_size
    )
    dec.write_decode_records(results, train_corpus.lexicon, args.out)
    print(f"decoded {len(results)} utterances to {args.out}")
    return 0


def cmd_score(args) -> int:
    corpus = cp.load_corpus_dir(args.refs)
    hyps_by_utt = dec.read_decode_records(args.hyps)
    refs, hyps = [], []
    for utt in sorted(corpus.utterances):
        refs.append([corpus.lexicon.surface(w) for w in corpus.transcripts[utt]])
        hyps.append(hyps_by_utt.get(utt, []))
    wer = hn.word_error_rate(refs, hyps)
    print(f"WER {wer:.2f}% over {len(refs)} utterances")
    if args.out:
        Path(args.out).write_text(f"wer\n{wer:.6f}\n", encoding="utf-8")
    return 0


def _harness_config(args) -> hn.HarnessConfig:
    train_corpus = cp.load_corpus_dir(args.corpus)
    test_corpus = cp.load_corpus_dir(args.test_corpus)
    if args.cmvn:
        train_corpus = cp.apply_cmvn(train_corpus)
        test_corpus = cp.apply_cmvn(test_corpus)
    return hn.HarnessConfig(
        train_corpus=train_corpus,
        test_corpus=test_corpus,
        net_config=_net_config_from(args, train_corpus),
        train_config=_train_config_from(args),
        beta=args.beta,
        beam_size=args.beam_size,
        smoothing=dec.SmoothingConfig(backoff=args.lm_backoff),
        master_seed=args.seed,
    )


def cmd_spectrum(args) -> int:
    config = _harness_config(args)
    hours = [float(h) for h in args.hours.split(",")]
    n_paired = [int(n) for n in args.n_paired_grid.split(",")]
    grid = hn.ExperimentGrid(
        cells=tuple((h, n) for h in hours for n in n_paired), n_seeds=args.n_seeds
    )
    table = hn.run_spectrum(grid, config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table.write_csv(out / "spectrum.csv", hn.SPECTRUM_COLUMNS)
    table.write_manifest(out / "spectrum_manifest.jsonl")
    if args.contour_resolution:
        contour = hn.emit_contour(table, args.contour_resolution)
        hn.write_contour_csv(contour, out / "contour.csv")
    ok = sum(1 for r in table.rows if r["status"] == "ok")
    print(f"spectrum: {ok}/{len(table.rows)} cells ok; results in {out}")
    return 1 if table.any_failed else 0


def cmd_ablate(args) -> int:
    config = _harness_config(args)
    terms = tuple(t for t in args.terms.split(",") if t)
    table = hn.run_ablation(config, terms, n_paired=args.n_paired, n_seeds=args.n_seeds)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table.write_csv(out / "ablation.csv", hn.ABLATION_COLUMNS)
    table.write_manifest(out / "ablation_manifest.jsonl")
    print(f"ablation over {terms}; results in {out}")
    return 1 if table.any_failed else 0


def cmd_cycle_study(args) -> int:
    config = _harness_config(args)
    n_values = tuple(int(n) for n in args.n_values.split(","))
    table = hn.run_cycle_study(
        config, n_values, cycle_weight=args.cycle_weight, n_seeds=args.n_seeds
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table.write_csv(out / "cycle.csv", hn.CYCLE_COLUMNS)
    table.write_manifest(out / "cycle_manifest.jsonl")
    print(f"cycle study over N={n_values}; results in {out}")
    return 1 if table.any_failed else 0


# -- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phonembed",
        description="Joint phonetic embeddings of spoken and written words",
    )
    parser.add_argument("--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument(
            "--cmvn", action="store_true", help="apply per-utterance normalization"
        )
        p.add_argument(
            "--frame-period", type=float, default=0.01, help="seconds per frame"
        )

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--spec", help="SynthSpec JSON file (defaults used otherwise)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="write per-step loss records here")
    p.add_argument("--n-paired", type=int, default=0, help="0 = all annotated")
    p.add_argument("--strategy", choices=("joint", "separate"), default="joint")
    _add_net_flags(p)
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("align", help="fit projections and maps (separate path)")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-paired", type=int, default=0)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--map-cycle-weight", type=float, default=1.0)
    p.add_argument("--map-steps", type=int, default=5000)
    p.add_argument("--map-lr", type=float, default=1e-3)
    p.set_defaults(fn=cmd_align)

    p = sub.add_parser("decode", help="recognize a test corpus")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--train-corpus", required=True, help="lexicon + LM transcripts")
    p.add_argument("--test-corpus", required=True)
    p.add_argument("--alignment", help="alignment bundle (separate path)")
    p.add_argument("--out", required=True, help="decode records (jsonl)")
    p.add_argument("--save-lm", help="also write the trained LM here")
    _add_decode_flags(p)
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("score", help="word error rate of decode records")
    p.add_argument("--refs", required=True, help="corpus dir with transcripts")
    p.add_argument("--hyps", required=True, help="decode records (jsonl)")
    p.add_argument("--out", help="write the WER here as CSV")
    p.set_defaults(fn=cmd_score)

    for name, fn in (
        ("spectrum", cmd_spectrum),
        ("ablate", cmd_ablate),
        ("cycle-study", cmd_cycle_study),
    ):
        p = sub.add_parser(name, help=f"run the {name} study")
        common(p)
        p.add_argument("--corpus", required=True)
        p.add_argument("--test-corpus", required=True)
        p.add_argument("--out-dir", required=True)
        p.add_argument("--n-seeds", type=int, default=1)
        _add_net_flags(p)
        _add_train_flags(p)
        _add_decode_flags(p)
        if name == "spectrum":
            p.add_argument("--hours", required=True, help="comma-separated hours grid")
            p.add_argument(
                "--n-paired-grid", required=True, help="comma-separated pair counts"
            )
            p.add_argument(
                "--contour-resolution",
                type=int,
                default=0,
                help="also write an interpolated contour grid (0 = off)",
            )
        elif name == "ablate":
            p.add_argument("--n-paired", type=int, required=True)
            p.add_argument(
                "--terms",
                default="audio_recon,text_recon,cross_audio,cross_text,embedding",
                help="comma-separated terms to drop one at a time",
            )
        else:
            p.add_argument("--n-values", required=True, help="comma-separated pair counts")
        p.set_defaults(fn=fn)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
