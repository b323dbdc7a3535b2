"""Interpolated Kneser-Ney n-gram language model over token streams.

Documents are rendered as  <bos> s1 <eos> s2 <eos> ... <eos> <stop>  so the
n-gram window crosses sentence boundaries and carries document context. A
"sentence" scope variant renders each sentence as its own stream and resets
context at scoring time.

Probabilities are estimated with a fixed absolute discount: the highest order
keeps raw counts, lower orders use continuation counts, except that n-grams
starting with <bos> keep raw counts (they can never be continued leftward).
Tokens seen once keep their own counts and additionally donate a copy of
every n-gram window they occur in to <unk>, so unknown tokens at scoring time
get sensible mass. The unigram distribution interpolates with a uniform base
over the event vocabulary (everything except <bos>), which makes every
conditional distribution sum to exactly 1.

Storage (and the ARPA file) is log10; scoring converts per event so a saved
and reloaded model scores bit-identically to the in-memory one.
"""

from __future__ import annotations

import json
import math
import os
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import DataError
from . import kernels
from .corpus import Document, Sentence

BOS, EOS, STOP, UNK = "<bos>", "<eos>", "<stop>", "<unk>"
MARKERS = (BOS, EOS, STOP, UNK)

DEFAULT_ORDER = 4
DEFAULT_DISCOUNT = 0.75

PROB_FLOOR = 1e-10
_LN_FLOOR = math.log(PROB_FLOOR)
_LN10 = math.log(10.0)

PERPLEXITY_CONVENTION = (
    "scored events = every sentence token (unknowns as <unk>) + one <eos> per "
    "sentence + one <stop> per document; perplexity = exp(-logprob/events)"
)

LMState = tuple  # tuple of token ids, the last order-1 of the rendered stream

_FORMAT_NAME = "docrerank-ngram"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class _Trie:
    tok: np.ndarray
    lp: np.ndarray
    bo: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    level_off: tuple[int, ...]
    grams: tuple[tuple[int, ...], ...]


def _build_trie(level_entries: Sequence[Mapping[tuple, tuple[float, float | None]]]) -> _Trie:
    """level_entries[k-1]: {id-tuple of length k: (lp10, bo10 or None)}."""
    levels = [sorted(le.items()) for le in level_entries]
    off = [0]
    for lev in levels:
        off.append(off[-1] + len(lev))
    total = off[-1]
    tok = np.zeros(total, np.int32)
    lp = np.zeros(total, np.float64)
    bo = np.zeros(total, np.float64)
    lo = np.zeros(total, np.int32)
    hi = np.zeros(total, np.int32)
    grams: list[tuple[int, ...]] = [()] * total
    for k_idx, lev in enumerate(levels):
        base = off[k_idx]
        for i, (g, (l, b)) in enumerate(lev):
            tok[base + i] = g[-1]
            lp[base + i] = l
            bo[base + i] = 0.0 if b is None else b
            grams[base + i] = g
    for k_idx in range(len(levels) - 1):
        parents, children = levels[k_idx], levels[k_idx + 1]
        pbase, cbase = off[k_idx], off[k_idx + 1]
        j = 0
        for i, (g, _) in enumerate(parents):
            start = j
            while j < len(children) and children[j][0][:-1] == g:
                j += 1
            lo[pbase + i] = cbase + start
            hi[pbase + i] = cbase + j
        if j != len(children):
            raise DataError("n-gram table contains an entry whose context entry is missing")
    return _Trie(tok, lp, bo, lo, hi, tuple(off), tuple(grams))


class NGramLM:
    """Immutable after construction; scoring is reentrant."""

    def __init__(self, order, discount, scope, vocab, trie: _Trie):
        if scope not in ("document", "sentence"):
            raise ValueError(f"scope must be 'document' or 'sentence', got {scope!r}")
        self.order = order
        self.discount = discount
        self.scope = scope
        self.vocab = tuple(vocab)
        self._surface2id = {t: i for i, t in enumerate(self.vocab)}
        if len(self._surface2id) != len(self.vocab):
            raise DataError("duplicate token in vocabulary")
        for m in MARKERS:
            if m not in self._surface2id:
                raise DataError(f"vocabulary is missing the reserved marker {m}")
        self._bos = self._surface2id[BOS]
        self._eos = self._surface2id[EOS]
        self._stop = self._surface2id[STOP]
        self._unk = self._surface2id[UNK]
        self._content2id = {
            t: i for t, i in self._surface2id.items() if t not in MARKERS
        }
        self._trie = trie

    # -- construction ------------------------------------------------------

    @classmethod
    def from_ngram_tables(cls, order, vocab, entries, discount=DEFAULT_DISCOUNT,
                          scope="document"):
        """Build from explicit tables {surface-tuple: (lp10, bo10 or None)}.

        Used by the file loader and by tests that need hand-built models.
        vocab order defines token ids.
        """
        s2i = {t: i for i, t in enumerate(vocab)}
        per_level: list[dict] = [dict() for _ in range(order)]
        for g, v in entries.items():
            if not 1 <= len(g) <= order:
                raise DataError(f"n-gram {g!r} longer than the model order {order}")
            try:
                ids = tuple(s2i[t] for t in g)
            except KeyError as e:
                raise DataError(f"n-gram {g!r} uses a token missing from the vocabulary") from e
            per_level[len(g) - 1][ids] = (float(v[0]), None if v[1] is None else float(v[1]))
        # every event token needs a unigram entry or scoring could dead-end;
        # <bos> is never predicted so its entry is optional
        missing = [t for t in vocab if t != BOS and (s2i[t],) not in per_level[0]]
        if missing:
            raise DataError(f"unigram entries missing for {missing[:3]}")
        return cls(order, discount, scope, vocab, _build_trie(per_level))

    @classmethod
    def uniform(cls, tokens: Iterable[str], scope="document"):
        """Order-1 model assigning 1/V to every event (V counts the markers
        <eos>, <stop>, <unk> but not <bos>). Baseline and test fixture."""
        vocab = list(MARKERS)
        for t in tokens:
            if t in MARKERS or t in vocab:
                continue
            vocab.append(t)
        v_event = len(vocab) - 1
        lp10 = -math.log10(v_event)
        entries = {(t,): (lp10, None) for t in vocab}
        return cls.from_ngram_tables(1, vocab, entries, scope=scope)

    # -- scoring -----------------------------------------------------------

    def initial_state(self) -> LMState:
        if self.order == 1:
            return ()
        return (self._bos,)

    def _check_state(self, state) -> tuple:
        st = tuple(state)
        if len(st) > self.order - 1:
            raise ValueError("state was not produced by this model (too long)")
        n = len(self.vocab)
        for i in st:
            if not isinstance(i, int) or not 0 <= i < n:
                raise ValueError("state was not produced by this model")
        return st

    def encode(self, tokens: Sequence[str]) -> list[int]:
        unk = self._unk
        get = self._content2id.get
        return [get(t, unk) for t in tokens]

    def score_sentence(self, state: LMState, tokens: Sequence[str]) -> tuple[float, LMState]:
        """Natural-log probability of the sentence plus its <eos> event,
        scored from `state`; returns the extended state. A sentence-scope
        model ignores the incoming state and always scores from the start."""
        if not tokens:
            raise ValueError("empty sentence")
        st = self.initial_state() if self.scope == "sentence" else self._check_state(state)
        ids = self.encode(tokens)
        ids.append(self._eos)
        t = self._trie
        total, new_state = kernels.lm_score_run(
            t.tok, t.lp, t.bo, t.lo, t.hi,
            t.level_off[0], t.level_off[1], self.order,
            st, ids, _LN_FLOOR,
        )
        return total, new_state

    def stop_logprob(self, state: LMState) -> float:
        st = self._check_state(state)
        t = self._trie
        lp10 = kernels.lm_event_lp10(
            t.tok, t.lp, t.bo, t.lo, t.hi,
            t.level_off[0], t.level_off[1], st, self._stop,
        )
        return max(lp10 * _LN10, _LN_FLOOR)

    def prob(self, context: Sequence[str], token: str) -> float:
        """Exact conditional probability p(token | context) in linear space,
        without the scoring floor. `token` may be <eos>/<stop>/<unk> but not
        <bos> (which is never a prediction event)."""
        if token == BOS:
            raise ValueError("<bos> is not a prediction event")
        wid = self._surface2id.get(token, self._unk)
        ctx = [self._surface2id.get(t, self._unk) for t in context]
        ctx = ctx[max(0, len(ctx) - (self.order - 1)):]
        t = self._trie
        lp10 = kernels.lm_event_lp10(
            t.tok, t.lp, t.bo, t.lo, t.hi,
            t.level_off[0], t.level_off[1], ctx, wid,
        )
        return 10.0 ** lp10

    # -- introspection used by persistence and tests ------------------------

    def level_sizes(self) -> tuple[int, ...]:
        off = self._trie.level_off
        return tuple(off[k + 1] - off[k] for k in range(self.order))

    def iter_entries(self, k: int):
        """Yield (surface-tuple, lp10, bo10) for stored k-grams in id order."""
        t = self._trie
        for e in range(t.level_off[k - 1], t.level_off[k]):
            g = tuple(self.vocab[i] for i in t.grams[e])
            yield g, float(t.lp[e]), float(t.bo[e])


def _render_streams(docs: Sequence[Document], scope: str, s2i: Mapping[str, int]):
    bos, eos, stop = s2i[BOS], s2i[EOS], s2i[STOP]
    streams: list[list[int]] = []
    for doc in docs:
        if scope == "sentence":
            for sent in doc.sentences:
                streams.append([bos] + [s2i[t] for t in sent] + [eos, stop])
        else:
            stream = [bos]
            for sent in doc.sentences:
                stream.extend(s2i[t] for t in sent)
                stream.append(eos)
            stream.append(stop)
            streams.append(stream)
    return streams


def train_ngram_lm(docs: Sequence[Document], order: int = DEFAULT_ORDER,
                   discount: float = DEFAULT_DISCOUNT, scope: str = "document") -> NGramLM:
    if not docs:
        raise DataError("empty training corpus")
    if not isinstance(order, int) or order < 1:
        raise ValueError(f"order must be an integer >= 1, got {order!r}")
    if not 0.0 < discount < 1.0:
        raise ValueError(f"discount must be in (0, 1), got {discount!r}")
    if scope not in ("document", "sentence"):
        raise ValueError(f"scope must be 'document' or 'sentence', got {scope!r}")

    counts: dict[str, int] = {}
    for doc in docs:
        for sent in doc.sentences:
            for t in sent:
                if t in MARKERS:
                    raise DataError(f"corpus token collides with reserved marker {t!r}")
                counts[t] = counts.get(t, 0) + 1
    vocab = list(MARKERS) + list(counts)
    s2i = {t: i for i, t in enumerate(vocab)}
    unk = s2i[UNK]
    singleton = {s2i[t] for t, c in counts.items() if c == 1}

    streams = _render_streams(docs, scope, s2i)

    # raw n-gram windows; windows containing a singleton are counted a second
    # time with singleton positions replaced by <unk>
    raw: list[dict] = [dict() for _ in range(order + 1)]
    for stream in streams:
        mapped = [unk if i in singleton else i for i in stream]
        L = len(stream)
        for k in range(1, order + 1):
            rk = raw[k]
            for i in range(L - k + 1):
                g = tuple(stream[i:i + k])
                rk[g] = rk.get(g, 0) + 1
                mg = tuple(mapped[i:i + k])
                if mg != g:
                    rk[mg] = rk.get(mg, 0) + 1

    # adjusted counts: top order raw; lower orders continuation counts except
    # <bos>-initial grams (never continued leftward) which keep raw counts;
    # the (<bos>,) unigram is dropped (never a prediction event)
    bos_id = s2i[BOS]
    adj: list[dict] = [dict() for _ in range(order + 1)]
    adj[order] = dict(raw[order])
    if order == 1:
        adj[1].pop((bos_id,), None)
    for k in range(order - 1, 0, -1):
        cont: dict = defaultdict(int)
        for g in raw[k + 1]:
            cont[g[1:]] += 1
        ak = adj[k]
        for g, c in raw[k].items():
            if g[0] == bos_id:
                if k > 1:
                    ak[g] = c
            else:
                cc = cont.get(g, 0)
                if cc:
                    ak[g] = cc

    # entry sets: adjusted grams, closed under context prefixes, full vocab
    # at level 1
    entry_sets: list[set] = [set(adj[k]) for k in range(order + 1)]
    for k in range(order, 1, -1):
        entry_sets[k - 1].update(g[:-1] for g in entry_sets[k])
    entry_sets[1].update((i,) for i in range(len(vocab)))

    v_event = len(vocab) - 1
    unif = 1.0 / v_event
    discount = float(discount)

    probs: list[dict] = [dict() for _ in range(order + 1)]
    rowgamma: list[dict] = [dict() for _ in range(order + 1)]

    def lower_q(g: tuple) -> float:
        # interpolated conditional from the already-built lower levels
        j = len(g)
        if j == 0:
            return unif
        p = probs[j].get(g)
        if p is not None:
            return p
        return rowgamma[j].get(g[:-1], 1.0) * lower_q(g[1:])

    for k in range(1, order + 1):
        rows: dict = defaultdict(list)
        for g in entry_sets[k]:
            rows[g[:-1]].append(g)
        ak = adj[k]
        for h, grams in rows.items():
            T = 0
            npos = 0
            for g in grams:
                c = ak.get(g, 0)
                T += c
                if c:
                    npos += 1
            gamma = (discount * npos / T) if T else 1.0
            rowgamma[k][h] = gamma
            pk = probs[k]
            for g in grams:
                c = ak.get(g, 0)
                alpha = (c - discount) / T if c else 0.0
                pk[g] = alpha + gamma * lower_q(g[1:])

    per_level = []
    for k in range(1, order + 1):
        d = {}
        gk = rowgamma[k + 1] if k < order else {}
        for g, p in probs[k].items():
            gamma = gk.get(g)
            bo10 = None if gamma is None else math.log10(gamma)
            d[g] = (math.log10(p), bo10)
        per_level.append(d)

    return NGramLM(order, discount, scope, vocab, _build_trie(per_level))


# -- module-level operation surface ---------------------------------------

def sentence_logprob(lm: NGramLM, state: LMState, sent: Sequence[str]) -> tuple[float, LMState]:
    return lm.score_sentence(state, sent)


def stop_logprob(lm: NGramLM, state: LMState) -> float:
    return lm.stop_logprob(state)


def perplexity_per_word(lm: NGramLM, docs: Sequence[Document]) -> float:
    """exp(-logprob/events); see PERPLEXITY_CONVENTION for what counts."""
    if not docs:
        raise DataError("empty evaluation set")
    total = 0.0
    events = 0
    for doc in docs:
        state = lm.initial_state()
        for sent in doc.sentences:
            lp, state = lm.score_sentence(state, sent)
            total += lp
            events += len(sent) + 1
        total += lm.stop_logprob(state)
        events += 1
    return math.exp(-total / events)


def save_lm(lm: NGramLM, path: str | os.PathLike) -> None:
    """ARPA-style text (log10) plus a JSON sidecar `<path>.meta`."""
    sizes = lm.level_sizes()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\\data\\\n")
        for k in range(1, lm.order + 1):
            fh.write(f"ngram {k}={sizes[k - 1]}\n")
        for k in range(1, lm.order + 1):
            fh.write(f"\n\\{k}-grams:\n")
            if k < lm.order:
                for g, lp10, bo10 in lm.iter_entries(k):
                    fh.write(f"{lp10!r}\t{' '.join(g)}\t{bo10!r}\n")
            else:
                for g, lp10, _ in lm.iter_entries(k):
                    fh.write(f"{lp10!r}\t{' '.join(g)}\n")
        fh.write("\n\\end\\\n")
    meta = {
        "format": _FORMAT_NAME,
        "version": _FORMAT_VERSION,
        "order": lm.order,
        "discount": lm.discount,
        "scope": lm.scope,
        "markers": {"bos": BOS, "eos": EOS, "stop": STOP, "unk": UNK},
    }
    with open(str(path) + ".meta", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True)
        fh.write("\n")


def load_lm(path: str | os.PathLike) -> NGramLM:
    meta_path = str(path) + ".meta"
    try:
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
    except OSError as e:
        raise DataError(f"missing model sidecar {meta_path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"malformed model sidecar {meta_path}: {e}") from e
    if meta.get("format") != _FORMAT_NAME or meta.get("version") != _FORMAT_VERSION:
        raise DataError(
            f"model format/version mismatch in {meta_path}: "
            f"expected {_FORMAT_NAME} v{_FORMAT_VERSION}"
        )
    order = meta["order"]

    declared: dict[int, int] = {}
    vocab: list[str] = []
    entries: dict[tuple, tuple[float, float | None]] = {}
    state = "preamble"
    cur_k = 0
    cur_n = 0
    ended = False
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read model file {path}: {e}") from e
    with fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line == "\\data\\":
                state = "counts"
                continue
            if line == "\\end\\":
                ended = True
                break
            if line.startswith("\\") and line.endswith("-grams:"):
                try:
                    cur_k = int(line[1:-len("-grams:")])
                except ValueError:
                    raise DataError(f"{path}:{line_no}: bad section header {line!r}")
                if cur_k not in declared:
                    raise DataError(f"{path}:{line_no}: undeclared section {line!r}")
                state = "grams"
                cur_n = 0
                continue
            if state == "counts":
                if not line.startswith("ngram "):
                    raise DataError(f"{path}:{line_no}: expected 'ngram k=N' line")
                try:
                    k_s, n_s = line[len("ngram "):].split("=")
                    declared[int(k_s)] = int(n_s)
                except ValueError:
                    raise DataError(f"{path}:{line_no}: bad count line {line!r}")
                continue
            if state != "grams":
                raise DataError(f"{path}:{line_no}: unexpected content before \\data\\")
            parts = line.split("\t")
            if len(parts) == 2 and cur_k == order:
                lp_s, toks = parts
                bo = None
            elif len(parts) == 3 and cur_k < order:
                lp_s, toks, bo_s = parts
                try:
                    bo = float(bo_s)
                except ValueError:
                    raise DataError(f"{path}:{line_no}: bad backoff value {bo_s!r}")
            else:
                raise DataError(f"{path}:{line_no}: malformed {cur_k}-gram line")
            try:
                lp10 = float(lp_s)
            except ValueError:
                raise DataError(f"{path}:{line_no}: bad logprob value {lp_s!r}")
            g = tuple(toks.split(" "))
            if len(g) != cur_k or "" in g:
                raise DataError(f"{path}:{line_no}: token count does not match section order")
            if cur_k == 1:
                vocab.append(g[0])
            if g in entries:
                raise DataError(f"{path}:{line_no}: duplicate n-gram {g!r}")
            entries[g] = (lp10, bo)
            cur_n += 1
    if not ended:
        raise DataError(f"{path}: truncated model file (missing \\end\\)")
    if sorted(declared) != list(range(1, order + 1)):
        raise DataError(f"{path}: declared n-gram orders {sorted(declared)} do not match order {order}")
    got = {k: 0 for k in declared}
    for g in entries:
        got[len(g)] += 1
    if got != declared:
        raise DataError(f"{path}: n-gram counts do not match the \\data\\ header")
    return NGramLM.from_ngram_tables(
        order, vocab, entries, discount=meta["discount"], scope=meta["scope"]
    )
