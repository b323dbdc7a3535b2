"""Synthetic parallel corpora with planted cross-sentence dependencies.

The toy grammar plants "chains": a disambiguating sentence establishes an
attribute (number, tense, lexical choice, or pronoun gender) with an explicit
cue token, and the following 1..4 sentences realize an entity whose target
form depends on that attribute while the source token stays unmarked. A chain
sentence carries the form at both its first and last position, so consecutive
chain sentences lay down a dense (form, <eos>, form) trigram across the
sentence boundary. A document language model of order 3 or more therefore
prefers the attribute-consistent realization; a per-sentence model cannot see
the evidence at all.

Documents are generated in twin pairs (identical skeleton, every attribute
flipped), which balances the target-side token statistics exactly: a
sentence-scope LM trained on the corpus scores the two realizations of any
planted ambiguity identically, and the channel sees both forms aligned to the
same source token equally often. num_docs must therefore be even.

Token spelling convention: filler tokens are plain (tf3/sf3); grammar tokens
(forms and cues) contain a dot, e.g. num0.sg, tns.past.cue. Lattice-building
code relies on the dot to tell fillers from grammar tokens.
"""

from __future__ import annotations

import json
import math
import os
import random
from dataclasses import dataclass
from typing import Iterable, Sequence

from . import DataError
from .corpus import Document, ParallelDocumentCorpus
from .proposal import Candidate, Lattice, normalize_slot

PHENOMENA = ("number", "tense", "lexical", "pronoun")

_ATTR = {
    "number": ("sg", "pl"),
    "tense": ("past", "pres"),
    "lexical": ("syna", "synb"),
    "pronoun": ("masc", "fem"),
}
_CODE = {"number": "num", "tense": "tns", "lexical": "lex", "pronoun": "prn"}

_CHAIN_MAX = 4
BASE_LOGPROB = -0.3
CONFUSABLE_BONUS = 0.2
JITTER = 5e-7


def _tgt_form(phen, ent, a):
    return f"{_CODE[phen]}{ent}.{_ATTR[phen][a]}"


def _src_form(phen, ent):
    return f"{_CODE[phen]}{ent}.src"


def _tgt_marker(phen, a):
    return f"{_CODE[phen]}.{_ATTR[phen][a]}.cue"


def _src_marker(phen, a):
    return f"{_CODE[phen]}.{_ATTR[phen][a]}.scue"


def _tgt_fill(j):
    return f"tf{j}"


def _src_fill(j):
    return f"sf{j}"


@dataclass(frozen=True)
class SynthConfig:
    num_docs: int
    sentences_per_doc: int
    filler_vocab: int = 12
    entities_per_phenomenon: int = 2
    mix: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    ambiguity_rate: float = 0.3
    seed: int = 0
    min_fillers: int = 2
    max_fillers: int = 4

    def __post_init__(self):
        for name in ("num_docs", "sentences_per_doc", "filler_vocab",
                     "entities_per_phenomenon"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {v!r}")
        if self.num_docs % 2 != 0:
            raise ValueError(
                "num_docs must be even: documents are generated as "
                "attribute-flipped twin pairs to balance target statistics"
            )
        object.__setattr__(self, "mix", tuple(float(f) for f in self.mix))
        if len(self.mix) != len(PHENOMENA):
            raise ValueError(f"mix needs {len(PHENOMENA)} fractions, got {len(self.mix)}")
        if any(f < 0 or not math.isfinite(f) for f in self.mix):
            raise ValueError(f"mix fractions must be finite and >= 0, got {self.mix}")
        if abs(sum(self.mix) - 1.0) > 1e-9:
            raise ValueError(f"mix fractions must sum to 1, got {sum(self.mix)!r}")
        if not 0.0 <= self.ambiguity_rate < 1.0:
            raise ValueError(
                f"ambiguity_rate must be in [0, 1), got {self.ambiguity_rate!r}"
            )
        if not 1 <= self.min_fillers <= self.max_fillers:
            raise ValueError(
                f"need 1 <= min_fillers <= max_fillers, got "
                f"{self.min_fillers}..{self.max_fillers}"
            )


@dataclass(frozen=True)
class Annotation:
    """One planted ambiguity: the token at (doc_id, sent_index, token_index)
    must be consistent_form given the document context; inconsistent_form is
    the competing realization."""

    doc_id: str
    sent_index: int
    token_index: int
    consistent_form: str
    inconsistent_form: str

    def __post_init__(self):
        if not self.doc_id:
            raise DataError("annotation with empty doc_id")
        for name in ("sent_index", "token_index"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise DataError(f"annotation {name} must be an integer >= 0, got {v!r}")
        if not self.consistent_form or not self.inconsistent_form:
            raise DataError("annotation forms must be non-empty")
        if self.consistent_form == self.inconsistent_form:
            raise DataError(
                f"annotation forms must differ, both are {self.consistent_form!r}"
            )


def _expected_chain_len(room: int) -> float:
    """E[min(U{1..4}, room)]: chains are clipped to the sentences left."""
    return sum(min(l, room) for l in range(1, _CHAIN_MAX + 1)) / _CHAIN_MAX


def _chain_start_prob(rate: float, room: int) -> float:
    """Probability of opening a chain at a free position so that the expected
    fraction of ambiguous sentences comes out near `rate` (each chain spends
    one sentence on the disambiguator plus E[len | room] ambiguous ones)."""
    if rate <= 0.0 or room < 1:
        return 0.0
    return min(1.0, rate / (_expected_chain_len(room) * (1.0 - rate)))


def _pick_phenomenon(rng, mix):
    x = rng.random()
    acc = 0.0
    for phen, frac in zip(PHENOMENA, mix):
        acc += frac
        if x < acc:
            return phen
    return PHENOMENA[-1]


def _fillers(rng, cfg):
    k = rng.randint(cfg.min_fillers, cfg.max_fillers)
    return tuple(rng.randrange(cfg.filler_vocab) for _ in range(k))


def _make_skeleton(rng, cfg):
    """Sentence plans shared by a twin pair: ('bg'|'disamb'|'chain',
    phenomenon, entity, attribute, filler indices)."""
    plans = []
    t = 0
    while t < cfg.sentences_per_doc:
        room = cfg.sentences_per_doc - t - 1
        if room >= 1 and rng.random() < _chain_start_prob(cfg.ambiguity_rate, room):
            length = min(rng.randint(1, _CHAIN_MAX), room)
            phen = _pick_phenomenon(rng, cfg.mix)
            ent = rng.randrange(cfg.entities_per_phenomenon)
            attr = rng.randrange(2)
            plans.append(("disamb", phen, ent, attr, _fillers(rng, cfg)))
            for _ in range(length):
                plans.append(("chain", phen, ent, attr, _fillers(rng, cfg)))
            t += 1 + length
        else:
            plans.append(("bg", None, None, 0, _fillers(rng, cfg)))
            t += 1
    return plans


def _realize(plans, doc_id, flip):
    src_sents = []
    tgt_sents = []
    anns = []
    for idx, (kind, phen, ent, attr, fills) in enumerate(plans):
        sf = tuple(_src_fill(j) for j in fills)
        tf = tuple(_tgt_fill(j) for j in fills)
        if kind == "bg":
            src_sents.append(sf)
            tgt_sents.append(tf)
        elif kind == "disamb":
            a = attr ^ flip
            src_sents.append(sf + (_src_marker(phen, a), _src_form(phen, ent)))
            tgt_sents.append(tf + (_tgt_marker(phen, a), _tgt_form(phen, ent, a)))
        else:
            a = attr ^ flip
            form = _tgt_form(phen, ent, a)
            sform = _src_form(phen, ent)
            src_sents.append((sform,) + sf + (sform,))
            tgt_sents.append((form,) + tf + (form,))
            anns.append(Annotation(doc_id, idx, 0, form, _tgt_form(phen, ent, 1 - a)))
    return (Document(doc_id, tuple(src_sents)),
            Document(doc_id, tuple(tgt_sents)), anns)


def generate_corpus(cfg: SynthConfig):
    """Parallel documents plus the annotations of every planted ambiguity.
    Twin m produces documents doc{2m} and doc{2m+1}; generation is
    deterministic given cfg.seed, with one derived stream per twin pair."""
    pairs = []
    annotations = []
    for m in range(cfg.num_docs // 2):
        rng = random.Random(f"{cfg.seed}:{m}")
        plans = _make_skeleton(rng, cfg)
        for flip in (0, 1):
            doc_id = f"doc{2 * m + flip}"
            src, tgt, anns = _realize(plans, doc_id, flip)
            pairs.append((src, tgt))
            annotations.extend(anns)
    return ParallelDocumentCorpus(tuple(pairs)), annotations


def _swap_positions(ref, ann):
    """Positions a distractor may corrupt: filler tokens only, so variants
    that differ in the planted form cannot arise by accident. Unannotated
    sentences without any filler fall back to every position."""
    positions = [p for p, tok in enumerate(ref) if "." not in tok]
    if not positions and ann is None:
        positions = list(range(len(ref)))
    return positions


def _fill_distractors(cands, taken, ref, ann, pool, want, rng, confusable_rate,
                      doc_id, slot_index):
    positions = _swap_positions(ref, ann)
    attempts = 0
    limit = 400 * max(want, 1)
    while want > 0 and attempts < limit and positions:
        attempts += 1
        pos = rng.choice(positions)
        repl = pool[rng.randrange(len(pool))]
        if repl == ref[pos]:
            continue
        toks = ref[:pos] + (repl,) + ref[pos + 1:]
        if toks in taken:
            continue
        taken.add(toks)
        if rng.random() < confusable_rate:
            lp = BASE_LOGPROB + CONFUSABLE_BONUS
        else:
            lp = BASE_LOGPROB - rng.uniform(0.5, 2.5)
        cands.append(Candidate(toks, lp))
        want -= 1
    if want > 0:
        raise DataError(
            f"document {doc_id!r} slot {slot_index}: could not build enough "
            f"distinct distractors (vocabulary too small for K)"
        )


def make_ambiguous_lattice(pair, annotations: Iterable[Annotation], K: int,
                           seed: int = 0, confusable_rate: float = 0.25) -> Lattice:
    """Candidate lattice for one document pair. Every slot holds the reference;
    annotated slots additionally hold the attribute-flipped variant with a
    proposal logprob within 1e-6 of the reference's; the rest are filler-swap
    distractors, a `confusable_rate` share of which outscore the reference on
    the proposal alone (the channel has to reject them)."""
    if not isinstance(K, int) or K < 2:
        raise ValueError(f"K must be an integer >= 2, got {K!r}")
    if not 0.0 <= confusable_rate <= 1.0:
        raise ValueError(f"confusable_rate must be in [0, 1], got {confusable_rate!r}")
    src_doc, tgt_doc = pair
    if len(src_doc.sentences) != len(tgt_doc.sentences):
        raise DataError(
            f"document pair {tgt_doc.doc_id!r}: source and target sentence "
            f"counts differ"
        )
    by_idx = {}
    for a in annotations:
        if a.doc_id != tgt_doc.doc_id:
            continue
        if a.sent_index in by_idx:
            raise DataError(
                f"document {tgt_doc.doc_id!r}: duplicate annotation for "
                f"sentence {a.sent_index}"
            )
        by_idx[a.sent_index] = a
    rng = random.Random(f"{seed}:{tgt_doc.doc_id}")
    pool = sorted({t for s in tgt_doc.sentences for t in s})
    slots = []
    for i, ref in enumerate(tgt_doc.sentences):
        ref = tuple(ref)
        cands = [Candidate(ref, BASE_LOGPROB)]
        taken = {ref}
        ann = by_idx.get(i)
        if ann is not None:
            if not (0 <= ann.token_index < len(ref)) \
                    or ref[ann.token_index] != ann.consistent_form:
                raise DataError(
                    f"annotation for {tgt_doc.doc_id!r} sentence {i} does not "
                    f"match the reference"
                )
            variant = tuple(
                ann.inconsistent_form if t == ann.consistent_form else t
                for t in ref
            )
            delta = rng.uniform(-JITTER, JITTER)
            cands.append(Candidate(variant, BASE_LOGPROB + delta))
            taken.add(variant)
        _fill_distractors(cands, taken, ref, ann, pool, K - len(cands), rng,
                          confusable_rate, tgt_doc.doc_id, i)
        slots.append(normalize_slot(cands))
    return Lattice(tgt_doc.doc_id, src_doc, tuple(slots))


def build_probe_lattices(corpus: ParallelDocumentCorpus,
                         annotations: Sequence[Annotation], K: int = 2,
                         seed: int = 0):
    """Two lattices for the dependency probe, cut from the first planted chain
    in the corpus: slot 0 is forced to the disambiguating sentence (consistent
    attribute in the base lattice, flipped in the variant, using the twin
    document) and the chain slots offer both realizations near-tied. Returns
    (base, variant)."""
    if not isinstance(K, int) or K < 2:
        raise ValueError(f"K must be an integer >= 2, got {K!r}")
    by_doc = {}
    for a in annotations:
        by_doc.setdefault(a.doc_id, []).append(a)
    for m in range(len(corpus.docs) // 2):
        src_a, tgt_a = corpus.docs[2 * m]
        src_b, tgt_b = corpus.docs[2 * m + 1]
        anns = sorted(by_doc.get(tgt_a.doc_id, ()), key=lambda a: a.sent_index)
        if not anns:
            continue
        first = anns[0]
        run = [first]
        for a in anns[1:]:
            prev = run[-1]
            if a.sent_index == prev.sent_index + 1 \
                    and a.consistent_form == prev.consistent_form:
                run.append(a)
            else:
                break
        d = first.sent_index - 1
        lo, hi = d, run[-1].sent_index
        pid = f"{tgt_a.doc_id}:probe"
        rng = random.Random(f"{seed}:{pid}")
        pool = sorted({t for s in tgt_a.sentences for t in s})
        base_src = Document(pid, tuple(src_a.sentences[lo:hi + 1]))
        var_src = Document(pid, tuple(src_b.sentences[lo:hi + 1]))
        shared = []
        for j, ann in enumerate(run, start=1):
            ref = tuple(tgt_a.sentences[lo + j])
            variant = tuple(tgt_b.sentences[lo + j])
            delta = rng.uniform(-JITTER, JITTER)
            cands = [Candidate(ref, BASE_LOGPROB),
                     Candidate(variant, BASE_LOGPROB + delta)]
            taken = {ref, variant}
            _fill_distractors(cands, taken, ref, ann, pool, K - len(cands),
                              rng, 0.0, pid, j)
            shared.append(normalize_slot(cands))
        base_slot0 = (Candidate(tuple(tgt_a.sentences[d]), BASE_LOGPROB),)
        var_slot0 = (Candidate(tuple(tgt_b.sentences[d]), BASE_LOGPROB),)
        base = Lattice(pid, base_src, (base_slot0,) + tuple(shared))
        variant = Lattice(pid, var_src, (var_slot0,) + tuple(shared))
        return base, variant
    raise DataError("corpus has no planted ambiguities to probe")


def toy_dictionary(cfg: SynthConfig) -> dict:
    """Per-token translation options for the toy proposal model: fillers get
    a dominant translation plus weaker neighbors, cues translate 1:1, and the
    ambiguous source forms split evenly between their two realizations."""
    d = {}
    n = cfg.filler_vocab
    for j in range(n):
        opts = [(_tgt_fill(j), 0.7)]
        for step, p in ((1, 0.2), (2, 0.1)):
            alt = _tgt_fill((j + step) % n)
            if all(alt != t for t, _ in opts):
                opts.append((alt, p))
        d[_src_fill(j)] = opts
    for phen in PHENOMENA:
        for a in (0, 1):
            d[_src_marker(phen, a)] = [(_tgt_marker(phen, a), 1.0)]
        for ent in range(cfg.entities_per_phenomenon):
            d[_src_form(phen, ent)] = [
                (_tgt_form(phen, ent, 0), 0.5),
                (_tgt_form(phen, ent, 1), 0.5),
            ]
    return d


# -- annotation persistence --------------------------------------------------

_ANN_FIELDS = ("doc_id", "sent_index", "token_index",
               "consistent_form", "inconsistent_form")


def save_annotations(annotations: Sequence[Annotation], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a in annotations:
            rec = {f: getattr(a, f) for f in _ANN_FIELDS}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_annotations(path: str | os.PathLike) -> list[Annotation]:
    out = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read annotations {path}: {e}") from e
    with fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{line_no}: not valid JSON: {e}") from e
            if not isinstance(rec, dict):
                raise DataError(f"{path}:{line_no}: annotation record is not an object")
            missing = [f for f in _ANN_FIELDS if f not in rec]
            if missing:
                raise DataError(
                    f"{path}:{line_no}: annotation missing field(s) {missing}"
                )
            try:
                out.append(Annotation(**{f: rec[f] for f in _ANN_FIELDS}))
            except DataError as e:
                raise DataError(f"{path}:{line_no}: {e}") from e
    return out
