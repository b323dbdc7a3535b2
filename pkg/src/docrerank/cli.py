"""Command-line entry point wiring the modules into reproducible pipelines.

Every subcommand reads and writes only the documented file formats: document
corpora as text (``# doc-id`` headers, one sentence per line), n-best pools
and decode results as JSON lines, models in their own text formats. Two
invocations with identical flags and seeds produce byte-identical outputs;
--threads changes wall time only, never results.

Exit codes: 0 success, 1 usage error, 2 data error (missing, unreadable, or
inconsistent inputs), 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from . import DataError, __version__
from .channel import load_channel, save_channel, train_ibm1
from .corpus import (
    load_document_corpus,
    save_document_corpus,
    zip_parallel_documents,
)
from .decoder import (
    Weights,
    doc_decode,
    load_decode_results,
    posterior_dependency_probe,
    save_decode_results,
    sent_rerank,
)
from .lm import (
    PERPLEXITY_CONVENTION,
    load_lm,
    perplexity_per_word,
    save_lm,
    train_ngram_lm,
)
from .metrics import (
    consistency_accuracy,
    corpus_bleu,
    oracle_pick_ratio,
    pairwise_bleu,
    save_bleu_report,
)
from .proposal import load_nbest, save_nbest
from .synth import (
    SynthConfig,
    build_probe_lattices,
    generate_corpus,
    load_annotations,
    make_ambiguous_lattice,
    save_annotations,
)
from .tuning import GridSpec, grid_search, save_grid_table

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

DEFAULT_BEAM = 5
_DEFAULT_GRID = GridSpec()


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; here that code means a
    data error, so usage problems are remapped to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _weights_arg(text) -> Weights:
    parts = str(text).split(",")
    if len(parts) not in (3, 4):
        raise argparse.ArgumentTypeError(
            f"weights must be l1,l2,l3 or l1,l2,l3,llm, got {text!r}"
        )
    try:
        values = [float(p) for p in parts]
        return Weights(*values)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def _float_list(text) -> tuple[float, ...]:
    try:
        return tuple(float(p) for p in str(text).split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def _positive_int(text) -> int:
    try:
        value = int(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text!r}")
    return value


# -- shared flag groups -------------------------------------------------------


def _add_config(sp):
    sp.add_argument(
        "--config",
        metavar="JSON",
        help="JSON object of option defaults for this subcommand "
             "(explicit flags win)",
    )


def _add_threads(sp):
    sp.add_argument(
        "--threads",
        type=_positive_int,
        default=os.cpu_count() or 1,
        help="worker threads; results are identical for any value "
             "(default: available cores)",
    )


def _add_scoring_inputs(sp):
    sp.add_argument("--source", required=True,
                    help="source-side document corpus")
    sp.add_argument("--lattices", required=True,
                    help="candidate pools, JSON lines")
    sp.add_argument("--lm", required=True, help="language model file")
    sp.add_argument("--channel", required=True, help="channel model file")


def _map_ordered(fn, items, threads):
    if threads == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# -- subcommand handlers ------------------------------------------------------


def _cmd_train_lm(args) -> int:
    docs = load_document_corpus(args.target)
    lm = train_ngram_lm(docs, order=args.order, discount=args.discount,
                        scope=args.scope)
    save_lm(lm, args.out)
    ppl = perplexity_per_word(lm, docs)
    print(f"trained order-{lm.order} {lm.scope}-scope lm on {len(docs)} "
          f"documents, vocab {len(lm.vocab)}")
    print(f"training-set perplexity {ppl!r}")
    print(f"perplexity convention: {PERPLEXITY_CONVENTION}")
    return EXIT_OK


def _cmd_train_channel(args) -> int:
    src = load_document_corpus(args.source)
    tgt = load_document_corpus(args.target)
    pairs = zip_parallel_documents(src, tgt).sentence_pairs()
    model = train_ibm1(pairs, iterations=args.iterations)
    save_channel(model, args.out)
    print(f"trained channel on {len(pairs)} sentence pairs "
          f"({len(model.src_vocab)} source x {len(model.tgt_vocab)} target types)")
    if model.train_loglik:
        print(f"training log-likelihood {model.train_loglik[0]!r} -> "
              f"{model.train_loglik[-1]!r} over {len(model.train_loglik)} iterations")
    return EXIT_OK


def _load_rerank_inputs(args):
    source_docs = load_document_corpus(args.source)
    lattices = load_nbest(args.lattices, source_docs)
    if not lattices:
        raise DataError(f"no documents in {args.source}")
    return lattices, load_lm(args.lm), load_channel(args.channel)


def _cmd_decode(args) -> int:
    lattices, lm, channel = _load_rerank_inputs(args)
    results = _map_ordered(
        lambda lat: doc_decode(lat, lm, channel, args.weights, args.beam),
        lattices, args.threads,
    )
    save_decode_results(results, args.out)
    if args.docs_out:
        save_document_corpus([r.output for r in results], args.docs_out)
    mean = sum(r.final_score for r in results) / len(results)
    print(f"decoded {len(results)} documents with beam {args.beam}, "
          f"mean final score {mean!r}")
    return EXIT_OK


def _cmd_sent_rerank(args) -> int:
    lattices, lm, channel = _load_rerank_inputs(args)
    results = _map_ordered(
        lambda lat: sent_rerank(lat, lm, channel, args.weights),
        lattices, args.threads,
    )
    save_decode_results(results, args.out)
    if args.docs_out:
        save_document_corpus([r.output for r in results], args.docs_out)
    mean = sum(r.final_score for r in results) / len(results)
    print(f"reranked {len(results)} documents sentence by sentence, "
          f"mean score {mean!r}")
    return EXIT_OK


def _cmd_tune(args) -> int:
    source_docs = load_document_corpus(args.source)
    target_docs = load_document_corpus(args.target)
    dev = zip_parallel_documents(source_docs, target_docs)
    lattices = load_nbest(args.lattices, source_docs)
    lm = load_lm(args.lm)
    channel = load_channel(args.channel)
    grid = GridSpec(args.grid_l1, args.grid_l2, args.grid_l3)
    best, score, rows = grid_search(dev, lattices, lm, channel, grid,
                                    B=args.beam, threads=args.threads)
    save_grid_table(rows, args.table_out)
    print(f"best lambda1 {best.lambda1!r} lambda2 {best.lambda2!r} "
          f"lambda3 {best.lambda3!r} bleu {score!r}")
    print(f"evaluated {len(rows)} grid points")
    return EXIT_OK


def _cmd_eval_bleu(args) -> int:
    hyps = load_document_corpus(args.hyp)
    refs = [load_document_corpus(path) for path in args.refs]
    report = corpus_bleu(hyps, refs, lowercase=args.lowercase,
                         smooth=args.smooth)
    if args.report_out:
        save_bleu_report(report, args.report_out)
    precisions = " ".join(repr(p) for p in report.precisions)
    print(f"bleu {report.bleu!r} precisions {precisions} "
          f"bp {report.brevity_penalty!r} hyp_len {report.hyp_length} "
          f"ref_len {report.ref_length}")
    if args.annotations:
        annotations = load_annotations(args.annotations)
        accuracy = consistency_accuracy(hyps, annotations)
        print(f"consistency {accuracy!r} over {len(annotations)} annotations")
    return EXIT_OK


def _cmd_diversity(args) -> int:
    source_docs = load_document_corpus(args.source)
    lattices = load_nbest(args.lattices, source_docs)
    scores = []
    for lat in lattices:
        for slot in lat.slots:
            if len(slot) >= 2:
                scores.append(pairwise_bleu(slot, lowercase=args.lowercase,
                                            smooth=args.smooth))
    if not scores:
        raise DataError("no slot offers two or more candidates to compare")
    print(f"mean pairwise bleu {sum(scores) / len(scores)!r} "
          f"over {len(scores)} candidate pools")
    return EXIT_OK


def _cmd_oracle_pick(args) -> int:
    source_docs = load_document_corpus(args.source)
    lattices = load_nbest(args.lattices, source_docs)
    decodes = {}
    for rec in load_decode_results(args.decodes):
        if rec.doc_id in decodes:
            raise DataError(f"duplicate decode record for document {rec.doc_id!r}")
        decodes[rec.doc_id] = rec
    refs_by_id = {d.doc_id: d for d in load_document_corpus(args.refs)}
    choices = []
    refs = []
    for lat in lattices:
        rec = decodes.get(lat.doc_id)
        if rec is None:
            raise DataError(f"no decode record for document {lat.doc_id!r}")
        ref = refs_by_id.get(lat.doc_id)
        if ref is None:
            raise DataError(f"no reference document {lat.doc_id!r}")
        choices.append(rec.chosen)
        refs.append(ref)
    ratio = oracle_pick_ratio(lattices, choices, refs)
    print(f"pick ratio {ratio!r} over {len(lattices)} documents")
    return EXIT_OK


def _cmd_synth_gen(args) -> int:
    cfg = SynthConfig(num_docs=args.docs, sentences_per_doc=args.sentences,
                      filler_vocab=args.filler_vocab,
                      entities_per_phenomenon=args.entities,
                      mix=args.mix, ambiguity_rate=args.rate, seed=args.seed)
    corpus, annotations = generate_corpus(cfg)
    save_document_corpus([s for s, _ in corpus.docs], args.source_out)
    save_document_corpus([t for _, t in corpus.docs], args.target_out)
    save_annotations(annotations, args.annotations_out)
    if args.lattices_out:
        by_doc = {}
        for a in annotations:
            by_doc.setdefault(a.doc_id, []).append(a)
        lattices = [
            make_ambiguous_lattice(pair, by_doc.get(pair[1].doc_id, ()),
                                   K=args.nbest, seed=args.seed,
                                   confusable_rate=args.confusable_rate)
            for pair in corpus.docs
        ]
        save_nbest(lattices, args.lattices_out)
    print(f"generated {cfg.num_docs} documents, "
          f"{cfg.num_docs * cfg.sentences_per_doc} sentences, "
          f"{len(annotations)} planted ambiguities")
    return EXIT_OK


def _cmd_probe(args) -> int:
    source_docs = load_document_corpus(args.source)
    target_docs = load_document_corpus(args.target)
    corpus = zip_parallel_documents(source_docs, target_docs)
    annotations = load_annotations(args.annotations)
    base, variant = build_probe_lattices(corpus, annotations, K=args.nbest,
                                         seed=args.seed)
    lm = load_lm(args.lm)
    channel = load_channel(args.channel)
    report = posterior_dependency_probe(base, variant, lm, channel,
                                        args.weights, args.beam)
    record = {
        "doc_id": base.doc_id,
        "coupled": report.coupled,
        "changed_slots": list(report.changed_slots),
        "base_chosen": list(report.base.chosen),
        "variant_chosen": list(report.variant.chosen),
        "base_output": [" ".join(s) for s in report.base.output.sentences],
        "variant_output": [" ".join(s) for s in report.variant.output.sentences],
    }
    text = json.dumps(record, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


# -- parser construction ------------------------------------------------------


def _build_parser():
    parser = _Parser(
        prog="docrerank",
        description="Noisy-channel reranking of machine-translation "
                    "candidates with document context.",
    )
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="subcommand",
                                required=True, parser_class=_Parser)
    subparsers: dict[str, argparse.ArgumentParser] = {}

    def add(name, handler, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.set_defaults(handler=handler)
        _add_config(sp)
        subparsers[name] = sp
        return sp

    sp = add("train-lm", _cmd_train_lm,
             "train a Kneser-Ney n-gram language model on target documents")
    sp.add_argument("--target", required=True,
                    help="target-side document corpus")
    sp.add_argument("--order", type=_positive_int, default=4)
    sp.add_argument("--discount", type=float, default=0.75)
    sp.add_argument("--scope", choices=("document", "sentence"),
                    default="document",
                    help="whether context crosses sentence boundaries")
    sp.add_argument("--out", required=True, help="model file to write")

    sp = add("train-channel", _cmd_train_channel,
             "train the word-translation channel model")
    sp.add_argument("--source", required=True)
    sp.add_argument("--target", required=True)
    sp.add_argument("--iterations", type=_positive_int, default=5)
    sp.add_argument("--out", required=True, help="model file to write")

    for name, handler, help_text in (
        ("decode", _cmd_decode,
         "choose one candidate per sentence by document-level beam search"),
        ("sent-rerank", _cmd_sent_rerank,
         "choose one candidate per sentence independently"),
    ):
        sp = add(name, handler, help_text)
        _add_scoring_inputs(sp)
        sp.add_argument("--weights", type=_weights_arg, required=True,
                        metavar="L1,L2,L3[,LLM]")
        if name == "decode":
            sp.add_argument("--beam", type=_positive_int, default=DEFAULT_BEAM)
        sp.add_argument("--out", required=True,
                        help="decode results, JSON lines")
        sp.add_argument("--docs-out",
                        help="also write the chosen documents as a corpus file")
        _add_threads(sp)

    sp = add("tune", _cmd_tune,
             "grid-search interpolation weights against dev BLEU")
    _add_scoring_inputs(sp)
    sp.add_argument("--target", required=True,
                    help="dev reference document corpus")
    sp.add_argument("--beam", type=_positive_int, default=DEFAULT_BEAM)
    sp.add_argument("--grid-l1", type=_float_list,
                    default=_DEFAULT_GRID.lambda1_values, metavar="V,V,...")
    sp.add_argument("--grid-l2", type=_float_list,
                    default=_DEFAULT_GRID.lambda2_values, metavar="V,V,...")
    sp.add_argument("--grid-l3", type=_float_list,
                    default=_DEFAULT_GRID.lambda3_values, metavar="V,V,...")
    sp.add_argument("--table-out", required=True,
                    help="full grid table, tab-separated")
    _add_threads(sp)

    sp = add("eval-bleu", _cmd_eval_bleu, "corpus BLEU against references")
    sp.add_argument("--hyp", required=True, help="hypothesis document corpus")
    sp.add_argument("--refs", required=True, nargs="+",
                    help="one or more reference document corpora")
    sp.add_argument("--lowercase", action="store_true")
    sp.add_argument("--smooth", action="store_true",
                    help="add-one smoothing on higher-order precisions")
    sp.add_argument("--annotations",
                    help="also report consistency accuracy on these "
                         "annotations, JSON lines")
    sp.add_argument("--report-out", help="write the full report as JSON")

    sp = add("analyze-diversity", _cmd_diversity,
             "mean pairwise BLEU inside each candidate pool")
    sp.add_argument("--source", required=True)
    sp.add_argument("--lattices", required=True)
    sp.add_argument("--lowercase", action="store_true")
    sp.add_argument("--smooth", action="store_true")

    sp = add("oracle-pick", _cmd_oracle_pick,
             "fraction of chosen candidates that reproduce the reference")
    sp.add_argument("--source", required=True)
    sp.add_argument("--lattices", required=True)
    sp.add_argument("--decodes", required=True,
                    help="decode results, JSON lines")
    sp.add_argument("--refs", required=True,
                    help="reference document corpus")

    sp = add("synth-gen", _cmd_synth_gen,
             "generate a synthetic parallel corpus with planted ambiguities")
    sp.add_argument("--docs", type=_positive_int, required=True)
    sp.add_argument("--sentences", type=_positive_int, required=True)
    sp.add_argument("--rate", type=float, default=0.3,
                    help="fraction of sentences with a planted ambiguity")
    sp.add_argument("--mix", type=_float_list,
                    default=(0.25, 0.25, 0.25, 0.25),
                    help="phenomenon mix: number,tense,lexical,pronoun")
    sp.add_argument("--filler-vocab", type=_positive_int, default=12)
    sp.add_argument("--entities", type=_positive_int, default=2)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--source-out", required=True)
    sp.add_argument("--target-out", required=True)
    sp.add_argument("--annotations-out", required=True)
    sp.add_argument("--lattices-out",
                    help="also build near-tied candidate pools per document")
    sp.add_argument("--nbest", type=_positive_int, default=8,
                    help="pool size for --lattices-out; bounded by the "
                         "single-swap distractor space the filler vocabulary "
                         "allows")
    sp.add_argument("--confusable-rate", type=float, default=0.25,
                    help="share of distractors that outscore the reference "
                         "on the proposal")

    sp = add("probe-dependency", _cmd_probe,
             "decode two pools differing only in the disambiguating sentence "
             "and report which later choices change")
    sp.add_argument("--source", required=True)
    sp.add_argument("--target", required=True)
    sp.add_argument("--annotations", required=True)
    sp.add_argument("--lm", required=True)
    sp.add_argument("--channel", required=True)
    sp.add_argument("--weights", type=_weights_arg, required=True,
                    metavar="L1,L2,L3[,LLM]")
    sp.add_argument("--beam", type=_positive_int, default=DEFAULT_BEAM)
    sp.add_argument("--nbest", type=_positive_int, default=2,
                    help="candidates per probed sentence")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="write the report as JSON")

    return parser, subparsers


def _config_path(argv):
    for i, arg in enumerate(argv):
        if arg == "--config":
            if i + 1 < len(argv):
                return argv[i + 1]
        elif arg.startswith("--config="):
            return arg.split("=", 1)[1]
    return None


def _coerce_config_value(action, value):
    """Config files may spell values either as flag strings or as native
    JSON scalars/arrays."""
    if isinstance(value, str) and action.type is not None:
        return action.type(value)
    if isinstance(value, bool):
        return value
    if action.type in (int, _positive_int) and isinstance(value, int):
        return action.type(str(value))
    if action.type is float and isinstance(value, (int, float)):
        return float(value)
    if action.type is _weights_arg and isinstance(value, (list, tuple)):
        return Weights(*[float(v) for v in value])
    if action.type is _float_list and isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    return value


def _apply_config(argv, subparsers):
    """Load --config JSON (if any) into the chosen subparser's defaults, so
    explicit command-line flags always win."""
    path = _config_path(argv)
    if path is None:
        return
    if not argv or argv[0] not in subparsers:
        return
    name = argv[0]
    sp = subparsers[name]
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as e:
        raise DataError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(cfg, dict):
        raise DataError(f"config {path} must hold a JSON object")
    known = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest in ("help", "config", "handler") or dest not in known:
            raise _UsageError(
                f"config {path}: unknown option {key!r} for subcommand {name!r}"
            )
        try:
            defaults[dest] = _coerce_config_value(known[dest], value)
        except (argparse.ArgumentTypeError, TypeError, ValueError) as e:
            raise _UsageError(f"config {path}: bad value for {key!r}: {e}") from e
        # a value from the config satisfies a required flag
        known[dest].required = False
    sp.set_defaults(**defaults)


def run(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    argv = list(argv)
    parser, subparsers = _build_parser()
    try:
        _apply_config(argv, subparsers)
        args = parser.parse_args(argv)
    except SystemExit as e:
        code = e.code
        if code is None:
            return EXIT_OK
        return code if isinstance(code, int) else EXIT_USAGE
    except _UsageError as e:
        print(f"docrerank: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"docrerank: error: {e}", file=sys.stderr)
        return EXIT_DATA

    try:
        return args.handler(args)
    except DataError as e:
        print(f"docrerank: error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"docrerank: error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"docrerank: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # the documented catch-all exit
        print(f"docrerank: internal error: {type(e).__name__}: {e}",
              file=sys.stderr)
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
