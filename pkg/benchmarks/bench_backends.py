"""Compare the compiled kernels against the pure-Python twin.

Times language-model scoring, channel EM training, and full document decoding
on a synthetic workload, once per backend, and prints a speedup table. Both
backends return bit-identical numbers (the test suite enforces this); the only
difference is wall time.

Usage: python3 benchmarks/bench_backends.py [--docs N] [--sentences M]
"""

import argparse
import time

from docrerank import kernels
from docrerank.channel import train_ibm1
from docrerank.decoder import Weights, doc_decode
from docrerank.lm import train_ngram_lm
from docrerank.synth import SynthConfig, generate_corpus, make_ambiguous_lattice


def build_workload(docs, sentences, seed):
    corpus, annotations = generate_corpus(
        SynthConfig(num_docs=docs, sentences_per_doc=sentences,
                    ambiguity_rate=0.5, seed=seed)
    )
    targets = [t for _, t in corpus.docs]
    by_doc = {}
    for a in annotations:
        by_doc.setdefault(a.doc_id, []).append(a)
    lattices = [
        make_ambiguous_lattice(pair, by_doc.get(pair[1].doc_id, ()),
                               K=8, seed=seed)
        for pair in corpus.docs
    ]
    return corpus, targets, lattices


def time_call(fn, repeat=3):
    best = float("inf")
    result = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def bench_backend(name, corpus, targets, lattices):
    kernels.set_backend(name)
    lm = train_ngram_lm(targets, order=4)
    channel = train_ibm1(corpus.sentence_pairs(), iterations=2)
    weights = Weights(1.0, 1.0, 0.1)

    def score_lm():
        total = 0.0
        for doc in targets:
            state = lm.initial_state()
            for sent in doc.sentences:
                lp, state = lm.score_sentence(state, sent)
                total += lp
        return total

    def train_channel():
        return train_ibm1(corpus.sentence_pairs(), iterations=5)

    def decode_all():
        return [doc_decode(lat, lm, channel, weights, B=5) for lat in lattices]

    rows = {}
    rows["lm scoring"], lm_total = time_call(score_lm)
    rows["channel EM (5 iters)"], model = time_call(train_channel)
    rows["doc decode (beam 5)"], results = time_call(decode_all)
    checks = (lm_total, model.train_loglik[-1],
              sum(r.final_score for r in results))
    return rows, checks


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--docs", type=int, default=60)
    parser.add_argument("--sentences", type=int, default=8)
    parser.add_argument("--seed", type=int, default=13)
    args = parser.parse_args()

    corpus, targets, lattices = build_workload(args.docs, args.sentences,
                                               args.seed)
    n_sents = sum(len(t.sentences) for t in targets)
    print(f"workload: {len(targets)} documents, {n_sents} sentences, "
          f"pools of 8 candidates")

    if not kernels.compiled_available():
        print("compiled extension not built; timing the python backend only")
        names = ["python"]
    else:
        names = ["python", "compiled"]

    all_rows = {}
    all_checks = {}
    for name in names:
        all_rows[name], all_checks[name] = bench_backend(
            name, corpus, targets, lattices)

    if len(names) == 2 and all_checks["python"] != all_checks["compiled"]:
        raise SystemExit("backends disagree; run the parity tests")

    width = max(len(k) for k in next(iter(all_rows.values())))
    header = f"{'stage':<{width}}  " + "".join(f"{n:>12}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for stage in next(iter(all_rows.values())):
        line = f"{stage:<{width}}  "
        for name in names:
            line += f"{all_rows[name][stage] * 1e3:>10.2f}ms"
        if len(names) == 2:
            ratio = all_rows["python"][stage] / all_rows["compiled"][stage]
            line += f"{ratio:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
