"""Command-line driver for the annotation pipeline.

Every subcommand reads its inputs, writes artifacts to ``--out`` and leaves a
``manifest-<command>.json`` describing the resolved configuration, the seed
and SHA-256 checksums of inputs and outputs. Options can also be given in a
flat ``key=value`` file passed with ``--config``; flags on the command line
win over the file.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .corpus import (
    compute_stats,
    filter_normals,
    filter_unusable,
    load_corpus,
    make_splits,
    read_split,
    save_corpus,
    write_split,
)
from .embed import (
    EmbeddingConfig,
    EmbeddingTable,
    SentenceEncoder,
    calibrate_threshold,
    make_encoder_pairs,
    threshold_accuracy,
    train_embeddings,
)
from .errors import BadConfig, DataError, NumericalError, RadAnnotError, UsageError
from .matcher import (
    ABLATIONS,
    MatcherConfig,
    SynonymDict,
    evaluate_matching,
    match_corpus,
    random_baseline_corpus,
    read_matches,
    write_matches,
)

log = logging.getLogger("radannot")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def read_config(path) -> Dict[str, str]:
    """Flat ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out: Dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}: line {i}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


class Run:
    """Per-command context: resolved options, output dir and manifest."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: Dict[str, str] = {}
        self.outputs: Dict[str, str] = {}

    def input(self, name: str, required: bool = True) -> Optional[Path]:
        """Resolve an input option; explicit paths must exist, defaults may be absent."""
        value = getattr(self.args, name)
        explicit = value is not None
        path = Path(value) if explicit else self.out / DEFAULT_FILES[name]
        if not path.exists():
            if explicit or required:
                raise FileNotFoundError(f"{name}: no such file: {path}")
            return None
        self.inputs[name] = str(path)
        return path

    def output(self, filename: str) -> Path:
        path = self.out / filename
        self.outputs[filename] = str(path)
        return path

    def config(self) -> dict:
        skip = {"func", "config", "verbose"}
        return {k: v for k, v in sorted(vars(self.args).items()) if k not in skip}

    def write_manifest(self) -> None:
        cfg = self.config()
        blob = json.dumps(cfg, sort_keys=True, default=str)
        manifest = {
            "command": self.command,
            "version": __version__,
            "config": cfg,
            "config_sha256": hashlib.sha256(blob.encode()).hexdigest(),
            "seed": self.args.seed,
            "inputs": {k: {"path": v, "sha256": sha256(v)} for k, v in sorted(self.inputs.items())},
            "artifacts": {Path(v).name: sha256(v) for _, v in sorted(self.outputs.items())},
        }
        path = self.out / f"manifest-{self.command}.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


DEFAULT_FILES = {
    "corpus": "corpus.jsonl",
    "dictionary": "dictionary.tsv",
    "manual": "manual_matches.tsv",
    "matches": "matches.tsv",
    "embeddings": "embeddings.bin",
    "encoder": "encoder.txt",
    "split": "split.txt",
    "model": "model.bin",
    "annotations": "annotations.tsv",
    "sentence_annotations": "sentence_annotations.tsv",
}


# -- helpers -----------------------------------------------------------------


def _parse_ratios(text: str):
    try:
        parts = tuple(float(x) for x in str(text).split(","))
    except ValueError:
        raise BadConfig(f"bad ratios {text!r}")
    return parts


def _embedding_config(a) -> EmbeddingConfig:
    return EmbeddingConfig(dim=a.dim, window=a.window, negative=a.negative, epochs=a.embed_epochs,
                           min_count=a.min_count, buckets=a.buckets, seed=a.seed)


def _load_or_train_embeddings(run: Run, reports) -> EmbeddingTable:
    path = run.input("embeddings", required=False)
    if path is not None:
        return EmbeddingTable.load(path)
    log.info("no embeddings file; training on the corpus")
    table = train_embeddings([s.tokens for r in reports for s in r.sentences], _embedding_config(run.args))
    table.save(run.output(DEFAULT_FILES["embeddings"]))
    return table


def _load_synonyms(run: Run) -> Optional[SynonymDict]:
    path = run.input("dictionary", required=False)
    return SynonymDict.load(path) if path is not None else None


def read_encoder(path) -> float:
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("threshold="):
            return float(line.split("=", 1)[1])
    raise DataError(f"{path}: no threshold line")


def _fit_encoder(table, reports, manual, seed) -> tuple:
    enc = SentenceEncoder(table)
    pairs = make_encoder_pairs(reports, manual, seed)
    calibrate_threshold(enc, pairs)
    return enc, pairs


def _calibration_subset(reports, fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    n = max(1, int(round(fraction * len(reports))))
    idx = sorted(rng.permutation(len(reports))[:n])
    return [reports[i] for i in idx]


def _encoder_for(run: Run, table, reports, manual) -> SentenceEncoder:
    path = run.input("encoder", required=False)
    if path is not None:
        return SentenceEncoder(table, read_encoder(path))
    calib = _calibration_subset(reports, run.args.calibration_fraction, run.args.seed)
    ids = {r.id for r in calib}
    enc, _ = _fit_encoder(table, calib, [m for m in manual if m.report_id in ids], run.args.seed)
    log.info("encoder threshold %.6f calibrated on %d reports", enc.threshold, len(calib))
    return enc


def _matcher_config(a) -> MatcherConfig:
    if a.ablation:
        if a.ablation not in ABLATIONS or ABLATIONS[a.ablation] is None:
            raise BadConfig(f"unknown matcher configuration {a.ablation!r}")
        cfg = ABLATIONS[a.ablation]
        return replace(cfg, k=a.k)
    return MatcherConfig(k=a.k)


def _split_for(run: Run, reports):
    path = run.input("split", required=False)
    if path is not None:
        return read_split(path, run.args.seed)
    return make_splits(reports, _parse_ratios(run.args.ratios), run.args.seed)


def _select(reports, ids):
    wanted = set(ids)
    return [r for r in reports if r.id in wanted]


def _train_config(a):
    from .seq2seq import TrainConfig

    return TrainConfig(learning_rate=a.learning_rate, batch_size=a.batch_size, grad_clip_norm=a.grad_clip_norm,
                       beam_size=a.beam_size, max_decode_len=a.max_decode_len, epochs=a.epochs, seed=a.seed,
                       min_token_freq=a.min_token_freq, emb_dim=a.emb_dim, enc_hidden=a.enc_hidden,
                       dec_hidden=a.dec_hidden, enc_layers=a.enc_layers, paragraph_level=a.paragraph_level,
                       stop_loss=a.stop_loss)


# -- commands ----------------------------------------------------------------


def cmd_ingest(run: Run) -> None:
    a = run.args
    reports = load_corpus(run.input("corpus"))
    n_in = len(reports)
    if not a.keep_normals:
        reports = filter_normals(reports)
    reports = filter_unusable(reports)
    matches = read_matches(run.input("manual")) if run.input("manual", required=False) else ()
    stats = compute_stats(reports, matches)
    save_corpus(reports, run.output("ingested.jsonl"))
    text = stats.format_table() + "\n\n" + stats.format_kv() + "\n"
    run.output("stats.txt").write_text(text, encoding="utf-8")
    log.info("kept %d of %d reports", len(reports), n_in)
    print(text, end="")


def cmd_split(run: Run) -> None:
    reports = load_corpus(run.input("corpus"))
    split = make_splits(reports, _parse_ratios(run.args.ratios), run.args.seed)
    write_split(split, run.output(DEFAULT_FILES["split"]))
    print(f"train={len(split.train_ids)} val={len(split.val_ids)} test={len(split.test_ids)}")


def cmd_train_embed(run: Run) -> None:
    reports = load_corpus(run.input("corpus"))
    table = train_embeddings([s.tokens for r in reports for s in r.sentences], _embedding_config(run.args))
    table.save(run.output(DEFAULT_FILES["embeddings"]))
    print(f"words={len(table.words)} dim={table.dim}")


def cmd_match(run: Run) -> None:
    a = run.args
    reports = load_corpus(run.input("corpus"))
    cfg = _matcher_config(a)
    synonyms = _load_synonyms(run)
    table = _load_or_train_embeddings(run, reports)
    encoder = None
    if cfg.use_encoder_fallback:
        manual = read_matches(run.input("manual")) if run.input("manual", required=False) else []
        if run.input("encoder", required=False) is None and not manual:
            raise BadConfig("encoder fallback needs an encoder file or manual matches to calibrate on")
        encoder = _encoder_for(run, table, reports, manual)
    result = match_corpus(reports, synonyms, table, encoder, cfg)
    write_matches(result.pairs, run.output(DEFAULT_FILES["matches"]))
    counts = result.branch_counts
    print(f"matched={len(result.pairs)} unmatched={len(result.unmatched)} "
          + " ".join(f"branch{b}={n}" for b, n in zip((1, 2, 3, 4), counts)))


def cmd_eval_match(run: Run) -> None:
    a = run.args
    reports = load_corpus(run.input("corpus"))
    manual = read_matches(run.input("manual"))
    synonyms = _load_synonyms(run)
    table = _load_or_train_embeddings(run, reports)
    encoder = _encoder_for(run, table, reports, manual)
    rows = []
    for name, cfg in ABLATIONS.items():
        if cfg is None:
            pred = random_baseline_corpus(reports, a.seed)
        else:
            pred = match_corpus(reports, synonyms, table, encoder if cfg.use_encoder_fallback else None,
                                replace(cfg, k=a.k)).pairs
        rows.append((name, evaluate_matching(pred, manual)))
    width = max(len(n) for n, _ in rows)
    lines = [f"{'method'.ljust(width)}  accuracy"] + [f"{n.ljust(width)}  {v:.4f}" for n, v in rows]
    kv = [f"{n.replace(' ', '_')}={v:.6f}" for n, v in rows] + [f"encoder_threshold={encoder.threshold:.6f}"]
    text = "\n".join(lines) + "\n\n" + "\n".join(kv) + "\n"
    run.output("ablation.txt").write_text(text, encoding="utf-8")
    print(text, end="")


def cmd_fit_encoder(run: Run) -> None:
    reports = load_corpus(run.input("corpus"))
    manual = read_matches(run.input("manual"))
    table = _load_or_train_embeddings(run, reports)
    enc, pairs = _fit_encoder(table, reports, manual, run.args.seed)
    acc = threshold_accuracy(enc, pairs)
    text = f"threshold={enc.threshold!r}\naccuracy={acc:.6f}\npairs={len(pairs)}\n"
    run.output(DEFAULT_FILES["encoder"]).write_text(text, encoding="utf-8")
    print(text, end="")


def _pairs_for(reports, matches, paragraph):
    from .seq2seq import paragraph_pairs, sentence_pairs

    return (paragraph_pairs if paragraph else sentence_pairs)(reports, matches)


def cmd_train(run: Run) -> None:
    from .seq2seq import train
    from .seq2seq.io import save_model

    a = run.args
    reports = load_corpus(run.input("corpus"))
    matches = read_matches(run.input("matches"))
    split = _split_for(run, reports)
    cfg = _train_config(a)
    embeddings = None
    if a.init_embeddings:
        embeddings = EmbeddingTable.load(run.input("embeddings"))
    tr = _pairs_for(_select(reports, split.train_ids), matches, cfg.paragraph_level)
    va = _pairs_for(_select(reports, split.val_ids), matches, cfg.paragraph_level)
    res = train(tr, cfg, val_pairs=va, embeddings=embeddings)
    save_model(res.model, run.output(DEFAULT_FILES["model"]), cfg.to_dict())
    lines = ["epoch\ttrain_loss\tval_loss"]
    lines += [f"{i + 1}\t{t:.6f}\t{v:.6f}" for i, (t, v) in enumerate(zip(res.train_losses, res.val_losses))]
    run.output("train_log.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"epochs={len(res.train_losses)} best_epoch={res.best_epoch + 1} "
          f"best_val_loss={res.val_losses[res.best_epoch]:.6f}")


def cmd_annotate(run: Run) -> None:
    from .seq2seq import annotate_sentences
    from .seq2seq.io import load_model, write_annotations

    a = run.args
    reports = load_corpus(run.input("corpus"))
    model, tcfg = load_model(run.input("model"))
    if a.part != "all":
        split = _split_for(run, reports)
        reports = _select(reports, getattr(split, f"{a.part}_ids"))
    paragraph = bool(tcfg.get("paragraph_level", False))
    rows, sent_rows = [], []
    for r in reports:
        if paragraph:
            src = [t for s in r.sentences for t in s.tokens]
            rows.append((r.id, annotate_sentences(model, [src], a.beam_size, a.max_decode_len)))
            continue
        union, seen = [], set()
        for s in r.sentences:
            anns = annotate_sentences(model, [s.tokens], a.beam_size, a.max_decode_len)
            sent_rows.append((f"{r.id}#{s.index}", anns))
            for x in anns:
                if x not in seen:
                    seen.add(x)
                    union.append(x)
        rows.append((r.id, union))
    write_annotations(run.output(DEFAULT_FILES["annotations"]), rows)
    if sent_rows:
        write_annotations(run.output("sentence_annotations.tsv"), sent_rows)
    print(f"reports={len(rows)} annotations={sum(len(x) for _, x in rows)}")


def cmd_evaluate(run: Run) -> None:
    from .metrics import evaluate, format_kv, format_table, make_pair
    from .seq2seq.io import read_annotations

    a = run.args
    reports = {r.id: r for r in load_corpus(run.input("corpus"))}
    predicted = read_annotations(run.input("annotations"))
    results = []
    if a.level in ("report", "both"):
        pairs = []
        for rid, anns in predicted:
            if rid not in reports:
                raise DataError(f"annotation file names unknown report {rid!r}")
            ref = [x.raw for x in reports[rid].annotations]
            if ref:
                pairs.append(make_pair(anns, ref))
        results.append(evaluate(pairs, a.system, "report"))
    if a.level in ("sentence", "both"):
        path = run.input("sentence_annotations")
        matches = read_matches(run.input("matches"))
        hosted: Dict[tuple, List[int]] = {}
        for m in matches:
            hosted.setdefault((m.report_id, m.sentence_index), []).append(m.annotation_index)
        pairs = []
        for key, anns in read_annotations(path):
            rid, idx = key.rsplit("#", 1)
            ref_idx = sorted(hosted.get((rid, int(idx)), []))
            if ref_idx:
                pairs.append(make_pair(anns, [reports[rid].annotations[i].raw for i in ref_idx]))
        results.append(evaluate(pairs, a.system, "sentence"))
    text = format_table(results) + "\n\n" + format_kv(results) + "\n"
    run.output("evaluation.txt").write_text(text, encoding="utf-8")
    print(text, end="")


def cmd_synth(run: Run) -> None:
    from .synth import SynthConfig, generate

    a = run.args
    lo, hi = (int(x) for x in str(a.sentences_per_report).split(","))
    cfg = SynthConfig(seed=a.seed, n_reports=a.n_reports, sentences_per_report=(lo, hi),
                      negative_fraction=a.negative_fraction, synonym_fraction=a.synonym_fraction,
                      stem_fraction=a.stem_fraction, neighbor_fraction=a.neighbor_fraction,
                      paraphrase_fraction=a.paraphrase_fraction)
    corpus = generate(cfg)
    save_corpus(corpus.reports, run.output(DEFAULT_FILES["corpus"]))
    corpus.synonyms.save(run.output(DEFAULT_FILES["dictionary"]))
    write_matches(corpus.matches, run.output(DEFAULT_FILES["manual"]), provenance=False)
    text = corpus.stats.format_table() + "\n\n" + corpus.stats.format_kv() + "\n"
    run.output("stats.txt").write_text(text, encoding="utf-8")
    print(text, end="")


# -- parser ------------------------------------------------------------------


def _add_paths(p, *names):
    for n in names:
        p.add_argument(f"--{n.replace('_', '-')}", dest=n, default=None,
                       help=f"path (default: <out>/{DEFAULT_FILES.get(n, n)})")


def _add_embed_opts(p):
    d = EmbeddingConfig()
    p.add_argument("--dim", type=int, default=d.dim)
    p.add_argument("--window", type=int, default=d.window)
    p.add_argument("--negative", type=int, default=d.negative)
    p.add_argument("--embed-epochs", type=int, default=d.epochs)
    p.add_argument("--min-count", type=int, default=d.min_count)
    p.add_argument("--buckets", type=int, default=d.buckets)


def _add_matcher_opts(p):
    p.add_argument("--k", type=int, default=5, help="neighbours per heading word")
    p.add_argument("--calibration-fraction", type=float, default=0.2,
                   help="share of reports used to calibrate the encoder when no encoder file is given")


def _add_decode_opts(p):
    p.add_argument("--beam-size", type=int, default=5)
    p.add_argument("--max-decode-len", type=int, default=40)


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise BadConfig(f"not a boolean: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="radannot", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", default=None, help="flat key=value file; flags override it")
        p.add_argument("--out", default="run", help="output directory (default: run)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("-v", "--verbose", action="store_true")
        p.set_defaults(func=func)
        return p

    p = command("ingest", cmd_ingest, "parse, preprocess and filter a corpus; print statistics")
    _add_paths(p, "corpus", "manual")
    p.add_argument("--keep-normals", type=_bool, nargs="?", const=True, default=False)

    p = command("split", cmd_split, "seeded train/val/test split")
    _add_paths(p, "corpus")
    p.add_argument("--ratios", default="0.8,0.1,0.1")

    p = command("train-embed", cmd_train_embed, "train subword skip-gram vectors")
    _add_paths(p, "corpus")
    _add_embed_opts(p)

    p = command("match", cmd_match, "rule-based sentence-annotation matching")
    _add_paths(p, "corpus", "dictionary", "embeddings", "encoder", "manual")
    _add_embed_opts(p)
    _add_matcher_opts(p)
    p.add_argument("--ablation", default=None, help="one of: " + ", ".join(n for n, c in ABLATIONS.items() if c))

    p = command("eval-match", cmd_eval_match, "ablation table against manual matches")
    _add_paths(p, "corpus", "dictionary", "embeddings", "encoder", "manual")
    _add_embed_opts(p)
    _add_matcher_opts(p)

    p = command("fit-encoder", cmd_fit_encoder, "calibrate the sentence-encoder threshold")
    _add_paths(p, "corpus", "embeddings", "manual")
    _add_embed_opts(p)

    p = command("train", cmd_train, "train the pointer-generator annotator")
    _add_paths(p, "corpus", "matches", "split", "embeddings")
    p.add_argument("--ratios", default="0.8,0.1,0.1")
    p.add_argument("--learning-rate", type=float, default=0.001)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--grad-clip-norm", type=float, default=5.0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--min-token-freq", type=int, default=1)
    p.add_argument("--emb-dim", type=int, default=100)
    p.add_argument("--enc-hidden", type=int, default=256)
    p.add_argument("--dec-hidden", type=int, default=512)
    p.add_argument("--enc-layers", type=int, default=2)
    p.add_argument("--stop-loss", type=float, default=0.0)
    p.add_argument("--paragraph-level", type=_bool, nargs="?", const=True, default=False)
    p.add_argument("--init-embeddings", type=_bool, nargs="?", const=True, default=False,
                   help="initialise word vectors from --embeddings")
    _add_decode_opts(p)

    p = command("annotate", cmd_annotate, "annotate reports with a trained model")
    _add_paths(p, "corpus", "model", "split")
    p.add_argument("--ratios", default="0.8,0.1,0.1")
    p.add_argument("--part", choices=("all", "train", "val", "test"), default="test")
    _add_decode_opts(p)

    p = command("evaluate", cmd_evaluate, "BLEU/METEOR/ROUGE-L table for generated annotations")
    _add_paths(p, "corpus", "annotations", "matches", "sentence_annotations")
    p.add_argument("--level", choices=("report", "sentence", "both"), default="report")
    p.add_argument("--system", default="model")

    p = command("synth", cmd_synth, "generate a synthetic corpus with ground-truth matches")
    p.add_argument("--n-reports", type=int, default=1000)
    p.add_argument("--sentences-per-report", default="4,10")
    p.add_argument("--negative-fraction", type=float, default=0.6)
    p.add_argument("--synonym-fraction", type=float, default=0.2)
    p.add_argument("--stem-fraction", type=float, default=0.1)
    p.add_argument("--neighbor-fraction", type=float, default=0.1)
    p.add_argument("--paraphrase-fraction", type=float, default=0.03)
    return parser


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if args.config:
        values = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        for k in values:
            if k not in known or k in ("config", "help", "func"):
                raise UsageError(f"{args.config}: unknown key {k!r} for {args.command}")
        defaults = {}
        for k, v in values.items():
            act = known[k]
            conv = act.type or (lambda x: x)
            if isinstance(act, argparse._StoreTrueAction):
                conv = _bool
            defaults[k] = conv(v)
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        run = Run(args.command, args)
        args.func(run)
        run.write_manifest()
        return EXIT_OK
    except UsageError as e:
        print(f"radannot: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as e:
        print(f"radannot: missing file: {e}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, json.JSONDecodeError) as e:
        print(f"radannot: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as e:
        print(f"radannot: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except RadAnnotError as e:
        print(f"radannot: error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
