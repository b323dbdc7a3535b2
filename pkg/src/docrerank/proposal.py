"""Per-sentence candidate pools: n-best ingestion, toy proposals, merging.

A Lattice holds one candidate slot per source sentence. Slots are always
deduplicated by token sequence and ordered by descending proposal logprob
(ties: lowest expert id, then token sequence), so downstream consumers can
rely on slot[0] being the proposal-best candidate.

The n-best file format is one JSON object per line with fields doc_id,
sent_index, tokens (space-separated string), logprob, and optional expert_id
(default "e0").
"""

from __future__ import annotations

import json
import math
import os
import random
from dataclasses import dataclass
from typing import Mapping, Sequence

from . import DataError
from .corpus import Document, Sentence, make_sentence

DEFAULT_EXPERT = "e0"


@dataclass(frozen=True)
class Candidate:
    tokens: Sentence
    proposal_logprob: float
    expert_id: str = DEFAULT_EXPERT

    def __post_init__(self):
        object.__setattr__(self, "tokens", make_sentence(self.tokens))
        lp = self.proposal_logprob
        if not isinstance(lp, (int, float)) or not math.isfinite(lp):
            raise DataError(f"candidate logprob must be finite, got {lp!r}")
        if lp > 0:
            raise DataError(f"candidate logprob must be <= 0, got {lp!r}")
        object.__setattr__(self, "proposal_logprob", float(lp))
        if not self.expert_id or not isinstance(self.expert_id, str):
            raise DataError(f"bad expert_id {self.expert_id!r}")


def _slot_key(c: Candidate):
    return (-c.proposal_logprob, c.expert_id, c.tokens)


def _dedup(cands: Sequence[Candidate]) -> list[Candidate]:
    """Keep one candidate per token sequence: max logprob, then lowest
    expert_id, then earliest position."""
    best: dict[Sentence, Candidate] = {}
    for c in cands:
        prev = best.get(c.tokens)
        if (
            prev is None
            or c.proposal_logprob > prev.proposal_logprob
            or (c.proposal_logprob == prev.proposal_logprob and c.expert_id < prev.expert_id)
        ):
            best[c.tokens] = c
    return list(best.values())


def normalize_slot(cands: Sequence[Candidate]) -> tuple[Candidate, ...]:
    return tuple(sorted(_dedup(cands), key=_slot_key))


@dataclass(frozen=True)
class Lattice:
    doc_id: str
    source: Document
    slots: tuple[tuple[Candidate, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple(tuple(s) for s in self.slots))
        if len(self.slots) != len(self.source.sentences):
            raise DataError(
                f"lattice {self.doc_id!r}: {len(self.slots)} slots for "
                f"{len(self.source.sentences)} source sentences"
            )
        for i, slot in enumerate(self.slots):
            if not slot:
                raise DataError(f"lattice {self.doc_id!r}: slot {i} is empty")
            seen = set()
            for c in slot:
                if c.tokens in seen:
                    raise DataError(
                        f"lattice {self.doc_id!r}: slot {i} has duplicate candidate "
                        f"{' '.join(c.tokens)!r}"
                    )
                seen.add(c.tokens)
            for a, b in zip(slot, slot[1:]):
                if b.proposal_logprob > a.proposal_logprob:
                    raise DataError(
                        f"lattice {self.doc_id!r}: slot {i} not ordered by "
                        f"descending logprob"
                    )

    def slot_sizes(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.slots)


def load_nbest(path: str | os.PathLike, source_docs: Sequence[Document]) -> list[Lattice]:
    by_id: dict[str, Document] = {}
    for d in source_docs:
        if d.doc_id in by_id:
            raise DataError(f"duplicate doc_id {d.doc_id!r} in source documents")
        by_id[d.doc_id] = d
    pools: dict[str, list[list[Candidate]]] = {
        d.doc_id: [[] for _ in d.sentences] for d in source_docs
    }
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read n-best file {path}: {e}") from e
    with fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{line_no}: bad record: {e}") from e
            if not isinstance(rec, dict):
                raise DataError(f"{path}:{line_no}: record is not an object")
            try:
                doc_id = rec["doc_id"]
                sent_index = rec["sent_index"]
                tokens = rec["tokens"]
                logprob = rec["logprob"]
            except KeyError as e:
                raise DataError(f"{path}:{line_no}: missing field {e.args[0]!r}")
            expert_id = rec.get("expert_id", DEFAULT_EXPERT)
            if doc_id not in pools:
                raise DataError(f"{path}:{line_no}: unknown doc_id {doc_id!r}")
            if not isinstance(sent_index, int) or isinstance(sent_index, bool):
                raise DataError(f"{path}:{line_no}: sent_index must be an integer")
            slots = pools[doc_id]
            if not 0 <= sent_index < len(slots):
                raise DataError(
                    f"{path}:{line_no}: sent_index {sent_index} out of range for "
                    f"document {doc_id!r} with {len(slots)} sentences"
                )
            if not isinstance(tokens, str):
                raise DataError(f"{path}:{line_no}: tokens must be a string")
            if not isinstance(logprob, (int, float)) or isinstance(logprob, bool):
                raise DataError(f"{path}:{line_no}: logprob must be a number")
            try:
                cand = Candidate(tuple(tokens.split()), logprob, expert_id)
            except DataError as e:
                raise DataError(f"{path}:{line_no}: {e}") from e
            slots[sent_index].append(cand)
    lattices = []
    for d in source_docs:
        raw_slots = pools[d.doc_id]
        for i, slot in enumerate(raw_slots):
            if not slot:
                raise DataError(
                    f"{path}: document {d.doc_id!r} sentence {i} has no candidates"
                )
        lattices.append(
            Lattice(d.doc_id, d, tuple(normalize_slot(s) for s in raw_slots))
        )
    return lattices


def save_nbest(lattices: Sequence[Lattice], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for lat in lattices:
            for i, slot in enumerate(lat.slots):
                for c in slot:
                    rec = {
                        "doc_id": lat.doc_id,
                        "sent_index": i,
                        "tokens": " ".join(c.tokens),
                        "logprob": c.proposal_logprob,
                        "expert_id": c.expert_id,
                    }
                    fh.write(json.dumps(rec) + "\n")


def toy_propose(source: Document, dictionary: Mapping[str, Sequence[tuple[str, float]]],
                K: int, noise_seed: int, expert_id: str = DEFAULT_EXPERT,
                noise_scale: float = 0.0) -> Lattice:
    """Candidate slots from a probabilistic token dictionary.

    Per sentence, every source token independently offers its dictionary
    options (a token missing from the dictionary copies itself through with
    probability 1), and the K highest-weight token-by-token translations are
    enumerated exactly by beam (positions are independent, so a width-K beam
    is exact). Weights are log probabilities; with noise_scale > 0 each
    position/option weight gets Gaussian jitter drawn from noise_seed, which
    models disagreeing experts. Logprobs are clamped to <= 0.
    """
    if not isinstance(K, int) or K < 1:
        raise ValueError(f"K must be an integer >= 1, got {K!r}")
    if noise_scale < 0:
        raise ValueError(f"noise_scale must be >= 0, got {noise_scale!r}")
    rng = random.Random(noise_seed)
    slots = []
    for sent in source.sentences:
        per_pos: list[list[tuple[str, float]]] = []
        for tok in sent:
            entries = dictionary.get(tok)
            if not entries:
                entries = [(tok, 1.0)]
            opts = []
            for t, p in entries:
                if not 0.0 < p <= 1.0:
                    raise ValueError(
                        f"dictionary probability for {tok!r} -> {t!r} must be in (0, 1], got {p!r}"
                    )
                w = math.log(p)
                if noise_scale:
                    w += rng.gauss(0.0, noise_scale)
                opts.append((t, w))
            per_pos.append(opts)
        beam: list[tuple[tuple[str, ...], float]] = [((), 0.0)]
        for opts in per_pos:
            ext = [
                (toks + (t,), acc + w)
                for toks, acc in beam
                for t, w in opts
            ]
            ext.sort(key=lambda e: (-e[1], e[0]))
            beam = ext[:K]
        slots.append(normalize_slot(
            [Candidate(toks, min(w, 0.0), expert_id) for toks, w in beam]
        ))
    return Lattice(source.doc_id, source, tuple(slots))


def merge_expert_pools(lattices: Sequence[Lattice], K: int) -> Lattice:
    """Union the slots of several lattices for the same document, dedup by
    token sequence (keep max logprob), then truncate to K per slot by
    round-robin over experts in expert_id order so every expert stays
    represented."""
    if not lattices:
        raise DataError("no lattices to merge")
    if not isinstance(K, int) or K < 1:
        raise ValueError(f"K must be an integer >= 1, got {K!r}")
    first = lattices[0]
    for lat in lattices[1:]:
        if lat.doc_id != first.doc_id:
            raise DataError(f"doc_id mismatch: {lat.doc_id!r} vs {first.doc_id!r}")
        if len(lat.slots) != len(first.slots):
            raise DataError(
                f"slot count mismatch for {first.doc_id!r}: "
                f"{len(lat.slots)} vs {len(first.slots)}"
            )
    merged_slots = []
    for i in range(len(first.slots)):
        pool = _dedup([c for lat in lattices for c in lat.slots[i]])
        by_expert: dict[str, list[Candidate]] = {}
        for c in pool:
            by_expert.setdefault(c.expert_id, []).append(c)
        queues = [
            sorted(by_expert[e], key=_slot_key) for e in sorted(by_expert)
        ]
        picked: list[Candidate] = []
        depth = 0
        while len(picked) < K:
            advanced = False
            for q in queues:
                if depth < len(q):
                    picked.append(q[depth])
                    advanced = True
                    if len(picked) == K:
                        break
            if not advanced:
                break
            depth += 1
        merged_slots.append(normalize_slot(picked))
    return Lattice(first.doc_id, first.source, tuple(merged_slots))
