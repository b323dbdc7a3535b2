"""Translation quality metrics.

corpus_bleu follows the multi-bleu.perl conventions: modified n-gram
precision up to order 4 with per-sentence clipping against the best reference
count, a multiplicative brevity penalty from the closest reference length
(ties resolved toward the earliest reference set), and no smoothing by
default. Orders with zero possible n-grams anywhere in the corpus (all
hypotheses shorter than n) are excluded from the geometric mean rather than
zeroing it; with `smooth` enabled, orders 2 and up use (matches+1)/(possible+1).

pairwise_bleu measures candidate pool similarity as the mean BLEU over all
ordered candidate pairs; lower values mean a more diverse pool.
"""

from __future__ import annotations

import json
import math
import os
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

from . import DataError
from .corpus import Document

MAX_ORDER = 4


@dataclass(frozen=True)
class BleuReport:
    """Corpus BLEU on the 0..100 scale with its components.

    `precisions` holds the per-order values entering the geometric mean
    (excluded orders appear as the neutral 1.0); `match_counts` and
    `possible_counts` are the raw clipped-match and hypothesis n-gram totals,
    so the score is recomputable from the fields.
    """

    bleu: float
    precisions: tuple[float, float, float, float]
    brevity_penalty: float
    hyp_length: int
    ref_length: int
    match_counts: tuple[int, int, int, int]
    possible_counts: tuple[int, int, int, int]


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _lower(sent):
    return tuple(t.lower() for t in sent)


def corpus_bleu(hyps: Sequence[Document], refs: Sequence[Sequence[Document]],
                lowercase: bool = False, smooth: bool = False) -> BleuReport:
    """Corpus-level BLEU of `hyps` against one or more aligned reference
    corpora. Every reference corpus must match `hyps` document for document
    and sentence for sentence."""
    if not hyps:
        raise DataError("no hypothesis documents")
    if not refs:
        raise DataError("at least one reference corpus is required")
    for k, ref_corpus in enumerate(refs):
        if len(ref_corpus) != len(hyps):
            raise DataError(
                f"reference corpus {k} has {len(ref_corpus)} documents, "
                f"hypotheses have {len(hyps)}"
            )
        for hyp_doc, ref_doc in zip(hyps, ref_corpus):
            if len(ref_doc.sentences) != len(hyp_doc.sentences):
                raise DataError(
                    f"reference corpus {k}, document {ref_doc.doc_id!r}: "
                    f"{len(ref_doc.sentences)} sentences vs "
                    f"{len(hyp_doc.sentences)} in hypothesis {hyp_doc.doc_id!r}"
                )

    match = [0] * MAX_ORDER
    possible = [0] * MAX_ORDER
    hyp_len = 0
    ref_len = 0
    for i, hyp_doc in enumerate(hyps):
        for j, hyp_sent in enumerate(hyp_doc.sentences):
            h = _lower(hyp_sent) if lowercase else tuple(hyp_sent)
            ref_sents = [
                _lower(rc[i].sentences[j]) if lowercase else tuple(rc[i].sentences[j])
                for rc in refs
            ]
            hyp_len += len(h)
            best_diff = None
            closest = 0
            for r in ref_sents:
                diff = abs(len(r) - len(h))
                if best_diff is None or diff < best_diff:
                    best_diff = diff
                    closest = len(r)
            ref_len += closest
            for n in range(1, MAX_ORDER + 1):
                hyp_grams = _ngrams(h, n)
                if not hyp_grams:
                    continue
                clip = Counter()
                for r in ref_sents:
                    for g, c in _ngrams(r, n).items():
                        if c > clip[g]:
                            clip[g] = c
                match[n - 1] += sum(min(c, clip[g]) for g, c in hyp_grams.items())
                possible[n - 1] += sum(hyp_grams.values())

    precisions = []
    log_sum = 0.0
    included = 0
    zero_hit = False
    for n in range(1, MAX_ORDER + 1):
        m, t = match[n - 1], possible[n - 1]
        if t == 0:
            precisions.append(1.0)
            continue
        if smooth and n >= 2:
            p = (m + 1) / (t + 1)
        else:
            p = m / t
        precisions.append(p)
        included += 1
        if p == 0.0:
            zero_hit = True
        else:
            log_sum += math.log(p)

    if hyp_len == 0 or ref_len == 0:
        bp = 1.0
    elif hyp_len < ref_len:
        bp = math.exp(1.0 - ref_len / hyp_len)
    else:
        bp = 1.0
    bleu = 0.0 if (zero_hit or included == 0) else 100.0 * bp * math.exp(log_sum / included)
    return BleuReport(
        bleu=bleu,
        precisions=tuple(precisions),
        brevity_penalty=bp,
        hyp_length=hyp_len,
        ref_length=ref_len,
        match_counts=tuple(match),
        possible_counts=tuple(possible),
    )


def _as_document(item, i):
    if isinstance(item, Document):
        return item
    tokens = getattr(item, "tokens", None)
    if tokens is not None:
        return Document(f"cand{i}", (tuple(tokens),))
    return Document(f"cand{i}", (tuple(item),))


def pairwise_bleu(pool, lowercase: bool = False, smooth: bool = False) -> float:
    """Mean BLEU over all ordered pairs of pool members (each scored against
    each other as the sole reference). Accepts documents, candidates, or bare
    token sequences."""
    docs = [_as_document(item, i) for i, item in enumerate(pool)]
    if len(docs) < 2:
        raise ValueError(f"pairwise diversity needs at least 2 candidates, got {len(docs)}")
    total = 0.0
    pairs = 0
    for i, hyp in enumerate(docs):
        for j, ref in enumerate(docs):
            if i == j:
                continue
            if len(hyp.sentences) != len(ref.sentences):
                raise DataError(
                    f"pool members {i} and {j} have different sentence counts"
                )
            total += corpus_bleu([hyp], [[ref]], lowercase=lowercase, smooth=smooth).bleu
            pairs += 1
    return total / pairs


def oracle_pick_ratio(lattices, choices, refs: Sequence[Document]) -> float:
    """Fraction of slots whose chosen candidate reproduces the reference
    sentence. Every slot must offer the reference among its candidates, so a
    perfect scorer could reach 1.0."""
    if not lattices:
        raise DataError("no lattices to score")
    if len(choices) != len(lattices) or len(refs) != len(lattices):
        raise DataError(
            f"got {len(lattices)} lattices, {len(choices)} choice vectors, "
            f"{len(refs)} references"
        )
    hits = 0
    slots = 0
    for lat, chosen, ref in zip(lattices, choices, refs):
        if len(chosen) != len(lat.slots) or len(ref.sentences) != len(lat.slots):
            raise DataError(
                f"lattice {lat.doc_id!r}: {len(lat.slots)} slots, "
                f"{len(chosen)} choices, {len(ref.sentences)} reference sentences"
            )
        for j, slot in enumerate(lat.slots):
            ref_sent = tuple(ref.sentences[j])
            if not any(c.tokens == ref_sent for c in slot):
                raise DataError(
                    f"lattice {lat.doc_id!r} slot {j} does not contain the reference"
                )
            ci = chosen[j]
            if not isinstance(ci, int) or not 0 <= ci < len(slot):
                raise DataError(
                    f"lattice {lat.doc_id!r} slot {j}: choice {ci!r} out of range"
                )
            slots += 1
            if slot[ci].tokens == ref_sent:
                hits += 1
    return hits / slots


def consistency_accuracy(outputs: Sequence[Document], annotations) -> float:
    """Fraction of annotated token positions whose output token equals the
    document-consistent form. Annotations carry doc_id, sent_index,
    token_index and consistent_form; an empty annotation list is vacuously
    consistent (1.0)."""
    by_id = {}
    for doc in outputs:
        if doc.doc_id in by_id:
            raise DataError(f"duplicate output document {doc.doc_id!r}")
        by_id[doc.doc_id] = doc
    anns = list(annotations)
    if not anns:
        return 1.0
    hits = 0
    for a in anns:
        doc = by_id.get(a.doc_id)
        if doc is None:
            raise DataError(f"annotation references unknown document {a.doc_id!r}")
        if not 0 <= a.sent_index < len(doc.sentences):
            raise DataError(
                f"annotation references missing sentence {a.sent_index} "
                f"in document {a.doc_id!r}"
            )
        sent = doc.sentences[a.sent_index]
        if not 0 <= a.token_index < len(sent):
            raise DataError(
                f"annotation references missing token {a.token_index} in "
                f"document {a.doc_id!r} sentence {a.sent_index}"
            )
        if sent[a.token_index] == a.consistent_form:
            hits += 1
    return hits / len(anns)


def bleu_report_dict(report: BleuReport) -> dict:
    return asdict(report)


def save_bleu_report(report: BleuReport, path: str | os.PathLike) -> None:
    """One JSON object with every report field."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(bleu_report_dict(report), fh, sort_keys=True)
        fh.write("\n")
