"""Document decoding: beam search over candidate slots.

The objective for extending a partial document with candidate y at slot i is

    lambda1 * log q(y)  +  lambda_lm * log p_LM(y | state)
    + lambda2 * log p_TM(x_i | y)  +  lambda3 * |y|

summed left to right, plus lambda_lm * log p(<stop> | state) once after the
last slot. Scorers are duck-typed: a language model provides initial_state(),
score_sentence(state, tokens) -> (logprob, state) and stop_logprob(state); a
channel model provides logprob(source_tokens, target_tokens).

Beam semantics: the top-B truncation (by cumulative score, ties by smaller
chosen-index vector) applies when advancing from one slot to the next. After
the final slot every expanded hypothesis receives the stop term and the
argmax is taken without a further truncation, so with B >= K^(l-1) the result
is exactly the exhaustive argmax even when the stop term depends on state.
"""

from __future__ import annotations

import itertools
import json
import math
import os
from dataclasses import dataclass
from typing import Sequence

from . import DataError
from .corpus import Document, Sentence
from .proposal import Candidate, Lattice


@dataclass(frozen=True)
class Weights:
    lambda1: float
    lambda2: float
    lambda3: float
    lambda_lm: float = 1.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda_lm"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v!r}")
            object.__setattr__(self, name, float(v))


@dataclass(frozen=True)
class ScoreBreakdown:
    proposal: float
    lm: float
    channel: float
    length: int
    total: float


@dataclass(frozen=True)
class Hypothesis:
    chosen: tuple[int, ...]
    cumulative: float
    lm_state: tuple
    breakdowns: tuple[ScoreBreakdown, ...]


@dataclass(frozen=True)
class BeamStats:
    expansions: int
    pruned: int


@dataclass(frozen=True)
class DecodeResult:
    doc_id: str
    output: Document
    chosen: tuple[int, ...]
    final_score: float
    stop_term: float
    breakdowns: tuple[ScoreBreakdown, ...]
    stats: BeamStats


def score_extension(weights: Weights, lm, channel, hyp: Hypothesis,
                    slot_source: Sentence, cand: Candidate):
    """Score extending `hyp` with `cand`; returns (ScoreBreakdown, lm state
    after the candidate's tokens and <eos>)."""
    lm_lp, next_state = lm.score_sentence(hyp.lm_state, cand.tokens)
    ch_lp = channel.logprob(slot_source, cand.tokens)
    length = len(cand.tokens)
    total = (
        weights.lambda1 * cand.proposal_logprob
        + weights.lambda_lm * lm_lp
        + weights.lambda2 * ch_lp
        + weights.lambda3 * length
    )
    return ScoreBreakdown(cand.proposal_logprob, lm_lp, ch_lp, length, total), next_state


def _initial_hypothesis(lm) -> Hypothesis:
    return Hypothesis((), 0.0, lm.initial_state(), ())


def _hyp_order(h: Hypothesis):
    return (-h.cumulative, h.chosen)


def _finish(lattice: Lattice, finals, stats) -> DecodeResult:
    """finals: list of (final_score, stop_term, hypothesis)."""
    best_score, best_stop, best = min(
        finals, key=lambda f: (-f[0], f[2].chosen)
    )
    output = Document(lattice.doc_id, tuple(
        lattice.slots[i][ci].tokens for i, ci in enumerate(best.chosen)
    ))
    return DecodeResult(
        doc_id=lattice.doc_id,
        output=output,
        chosen=best.chosen,
        final_score=best_score,
        stop_term=best_stop,
        breakdowns=best.breakdowns,
        stats=stats,
    )


def doc_decode(lattice: Lattice, lm, channel, weights: Weights, B: int = 5) -> DecodeResult:
    if not isinstance(B, int) or B < 1:
        raise ValueError(f"B must be an integer >= 1, got {B!r}")
    beam = [_initial_hypothesis(lm)]
    expansions = 0
    pruned = 0
    last = len(lattice.slots) - 1
    for i, slot in enumerate(lattice.slots):
        src = lattice.source.sentences[i]
        ext = []
        for h in beam:
            for ci, cand in enumerate(slot):
                bd, state = score_extension(weights, lm, channel, h, src, cand)
                ext.append(Hypothesis(
                    h.chosen + (ci,), h.cumulative + bd.total, state,
                    h.breakdowns + (bd,),
                ))
                expansions += 1
        if i < last and len(ext) > B:
            ext.sort(key=_hyp_order)
            pruned += len(ext) - B
            ext = ext[:B]
        beam = ext
    finals = []
    for h in beam:
        stop = weights.lambda_lm * lm.stop_logprob(h.lm_state)
        finals.append((h.cumulative + stop, stop, h))
    return _finish(lattice, finals, BeamStats(expansions, pruned))


def exhaustive_decode(lattice: Lattice, lm, channel, weights: Weights,
                      cap: int = 1_000_000) -> DecodeResult:
    """Enumerate every path and return the exact argmax (same tie-break as
    doc_decode). Scoring follows the same left-to-right summation order, so
    scores are bitwise comparable with a wide beam."""
    n_paths = 1
    for slot in lattice.slots:
        n_paths *= len(slot)
        if n_paths > cap:
            raise ValueError(
                f"lattice {lattice.doc_id!r} has more than {cap} paths"
            )
    expansions = 0
    finals = []
    for path in itertools.product(*(range(len(s)) for s in lattice.slots)):
        h = _initial_hypothesis(lm)
        for i, ci in enumerate(path):
            bd, state = score_extension(
                weights, lm, channel, h, lattice.source.sentences[i],
                lattice.slots[i][ci],
            )
            h = Hypothesis(h.chosen + (ci,), h.cumulative + bd.total, state,
                           h.breakdowns + (bd,))
            expansions += 1
        stop = weights.lambda_lm * lm.stop_logprob(h.lm_state)
        finals.append((h.cumulative + stop, stop, h))
    return _finish(lattice, finals, BeamStats(expansions, 0))


def sent_rerank(lattice: Lattice, sentence_lm, channel, weights: Weights) -> DecodeResult:
    """Per-slot independent argmax: every slot is scored from the LM's
    initial state and no stop term is applied."""
    chosen = []
    breakdowns = []
    cumulative = 0.0
    expansions = 0
    pruned = 0
    init = _initial_hypothesis(sentence_lm)
    for i, slot in enumerate(lattice.slots):
        src = lattice.source.sentences[i]
        best_ci = -1
        best_bd = None
        for ci, cand in enumerate(slot):
            bd, _ = score_extension(weights, sentence_lm, channel, init, src, cand)
            expansions += 1
            if best_bd is None or bd.total > best_bd.total:
                best_ci, best_bd = ci, bd
        chosen.append(best_ci)
        breakdowns.append(best_bd)
        cumulative += best_bd.total
        pruned += len(slot) - 1
    chosen_t = tuple(chosen)
    output = Document(lattice.doc_id, tuple(
        lattice.slots[i][ci].tokens for i, ci in enumerate(chosen_t)
    ))
    return DecodeResult(
        doc_id=lattice.doc_id,
        output=output,
        chosen=chosen_t,
        final_score=cumulative,
        stop_term=0.0,
        breakdowns=tuple(breakdowns),
        stats=BeamStats(expansions, pruned),
    )


@dataclass(frozen=True)
class ProbeReport:
    base: DecodeResult
    variant: DecodeResult
    changed_slots: tuple[int, ...]
    coupled: bool


def posterior_dependency_probe(base: Lattice, variant: Lattice, lm, channel,
                               weights: Weights, B: int = 5) -> ProbeReport:
    """Decode two lattices that differ only in slot 0 and report which later
    slots changed their chosen candidate. A context-sensitive document
    posterior can change later choices; per-sentence scoring cannot."""
    if len(base.slots) != len(variant.slots):
        raise DataError("probe lattices must have the same slot count")
    if len(base.slots) < 2:
        raise DataError("probe needs at least two slots")
    for i in range(1, len(base.slots)):
        if base.slots[i] != variant.slots[i]:
            raise DataError(
                f"probe lattices must be identical from slot 1 on (slot {i} differs)"
            )
        if base.source.sentences[i] != variant.source.sentences[i]:
            raise DataError(
                f"probe sources must be identical from slot 1 on (sentence {i} differs)"
            )
    r0 = doc_decode(base, lm, channel, weights, B)
    r1 = doc_decode(variant, lm, channel, weights, B)
    changed = tuple(
        i for i in range(1, len(base.slots)) if r0.chosen[i] != r1.chosen[i]
    )
    return ProbeReport(r0, r1, changed, bool(changed))


# -- persistence -------------------------------------------------------------

def save_decode_results(results: Sequence[DecodeResult], path: str | os.PathLike) -> None:
    """One JSON record per document: doc_id, output sentences, chosen indices,
    final score, stop term, per-sentence breakdowns, beam statistics."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in results:
            rec = {
                "doc_id": r.doc_id,
                "output": [" ".join(s) for s in r.output.sentences],
                "chosen": list(r.chosen),
                "final_score": r.final_score,
                "stop_term": r.stop_term,
                "breakdowns": [
                    {
                        "proposal": b.proposal,
                        "lm": b.lm,
                        "channel": b.channel,
                        "length": b.length,
                        "total": b.total,
                    }
                    for b in r.breakdowns
                ],
                "beam_stats": {"expansions": r.stats.expansions, "pruned": r.stats.pruned},
            }
            fh.write(json.dumps(rec) + "\n")


@dataclass(frozen=True)
class SavedDecode:
    doc_id: str
    output: Document
    final_score: float
    chosen: tuple[int, ...]


def load_decode_results(path: str | os.PathLike) -> list[SavedDecode]:
    out = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read decode results {path}: {e}") from e
    with fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                doc_id = rec["doc_id"]
                sents = tuple(tuple(s.split()) for s in rec["output"])
                final_score = float(rec["final_score"])
                chosen = tuple(int(c) for c in rec["chosen"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, AttributeError) as e:
                raise DataError(f"{path}:{line_no}: bad decode record: {e}") from e
            out.append(SavedDecode(doc_id, Document(doc_id, sents), final_score, chosen))
    return out
