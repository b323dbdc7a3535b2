"""IBM Model 1 channel: p(source sentence | target sentence).

Trained in the reverse direction (the candidate target generates the observed
source) so the score plugs into the noisy-channel objective. The translation
table is stored row-per-target in CSR form: row 0 is the NULL word, each row
holds the co-occurring source ids sorted, and probabilities are row-normalized
after every EM step.

Score of x given y:  sum_m log( (1/(N+1)) * sum_{n=0..N} t(x_m | y_n) )
with y_0 = NULL. Source tokens whose inner sum is empty (unseen) fall back to
a 1e-10 floor instead of -inf.
"""

from __future__ import annotations

import math
import os
import warnings
from typing import Mapping, Sequence

import numpy as np

from . import DataError
from . import kernels
from .corpus import ParallelSentenceCorpus

NULL = "<NULL>"

PROB_FLOOR = 1e-10

NORMALIZATION_TOLERANCE = 1e-9


class IBM1Model:
    """Immutable after construction; scoring is reentrant."""

    def __init__(self, src_vocab, tgt_vocab, row_off, row_src, probs, train_loglik=()):
        self.src_vocab = tuple(src_vocab)
        self.tgt_vocab = tuple(tgt_vocab)
        if not self.tgt_vocab or self.tgt_vocab[0] != NULL:
            raise DataError(f"target vocabulary must start with {NULL}")
        self._src2id = {t: i for i, t in enumerate(self.src_vocab)}
        self._tgt2id = {t: i for i, t in enumerate(self.tgt_vocab)}
        if len(self._src2id) != len(self.src_vocab) or len(self._tgt2id) != len(self.tgt_vocab):
            raise DataError("duplicate token in channel vocabulary")
        self._row_off = np.asarray(row_off, dtype=np.int64)
        self._row_src = np.asarray(row_src, dtype=np.int32)
        self._probs = np.asarray(probs, dtype=np.float64)
        if np.any(self._probs <= 0.0):
            raise DataError("channel model stores a non-positive probability")
        self.train_loglik = tuple(train_loglik)

    @classmethod
    def from_ttable(cls, ttable: Mapping[tuple[str, str], float], train_loglik=()):
        """Build from {(source-token, target-token-or-<NULL>): probability}.

        Entry iteration order fixes the token ids (first occurrence wins),
        which in turn fixes the file layout written by save_channel.
        """
        src_vocab: list[str] = []
        tgt_vocab: list[str] = [NULL]
        s2i: dict[str, int] = {}
        t2i: dict[str, int] = {NULL: 0}
        cells: dict[tuple[int, int], float] = {}
        for (s, t), p in ttable.items():
            p = float(p)
            if not p > 0.0 or p != p or p == math.inf:
                raise DataError(f"bad probability {p!r} for ({s!r}, {t!r})")
            if s not in s2i:
                s2i[s] = len(src_vocab)
                src_vocab.append(s)
            if t not in t2i:
                t2i[t] = len(tgt_vocab)
                tgt_vocab.append(t)
            key = (t2i[t], s2i[s])
            if key in cells:
                raise DataError(f"duplicate translation entry ({s!r}, {t!r})")
            cells[key] = p
        row_off = np.zeros(len(tgt_vocab) + 1, dtype=np.int64)
        items = sorted(cells.items())
        for (ti, _), _ in items:
            row_off[ti + 1] += 1
        np.cumsum(row_off, out=row_off)
        row_src = np.array([si for (_, si), _ in items], dtype=np.int32)
        probs = np.array([p for _, p in items], dtype=np.float64)
        return cls(src_vocab, tgt_vocab, row_off, row_src, probs, train_loglik)

    # -- lookups -------------------------------------------------------------

    def prob(self, src_token: str, tgt_token: str) -> float:
        """t(src | tgt); 0.0 when the pair is not stored. tgt may be <NULL>."""
        si = self._src2id.get(src_token)
        ti = self._tgt2id.get(tgt_token)
        if si is None or ti is None:
            return 0.0
        lo, hi = int(self._row_off[ti]), int(self._row_off[ti + 1])
        j = np.searchsorted(self._row_src[lo:hi], si)
        if j < hi - lo and self._row_src[lo + j] == si:
            return float(self._probs[lo + j])
        return 0.0

    def row_items(self, tgt_token: str):
        """Yield (src_token, prob) for one target row in source-id order."""
        ti = self._tgt2id[tgt_token]
        for j in range(int(self._row_off[ti]), int(self._row_off[ti + 1])):
            yield self.src_vocab[int(self._row_src[j])], float(self._probs[j])

    # -- scoring ---------------------------------------------------------------

    def logprob(self, x: Sequence[str], y: Sequence[str]) -> float:
        """Natural-log p(x | y); the channel-scorer interface."""
        if not x:
            raise ValueError("empty source sentence")
        if not y:
            raise ValueError("empty candidate sentence")
        x_ids = np.array([self._src2id.get(t, -1) for t in x], dtype=np.int32)
        y_ids = np.array([self._tgt2id.get(t, -1) for t in y], dtype=np.int32)
        return kernels.ibm1_score(
            self._row_off, self._row_src, self._probs, x_ids, y_ids, PROB_FLOOR
        )


def train_ibm1(pairs: ParallelSentenceCorpus, iterations: int = 5) -> IBM1Model:
    if not isinstance(iterations, int) or iterations < 1:
        raise ValueError(f"iterations must be an integer >= 1, got {iterations!r}")
    if not len(pairs):
        raise DataError("empty parallel corpus")

    src_vocab: list[str] = []
    tgt_vocab: list[str] = [NULL]
    s2i: dict[str, int] = {}
    t2i: dict[str, int] = {NULL: 0}
    for src, tgt in pairs.pairs:
        for t in src:
            if t not in s2i:
                s2i[t] = len(src_vocab)
                src_vocab.append(t)
        for t in tgt:
            if t not in t2i:
                t2i[t] = len(tgt_vocab)
                tgt_vocab.append(t)

    # co-occurrence sets define each row's support; NULL co-occurs with all
    rows: list[set[int]] = [set() for _ in range(len(tgt_vocab))]
    rows[0] = set(range(len(src_vocab)))
    for src, tgt in pairs.pairs:
        sids = {s2i[t] for t in src}
        for t in tgt:
            rows[t2i[t]].update(sids)

    row_off = np.zeros(len(tgt_vocab) + 1, dtype=np.int64)
    for ti, srcs in enumerate(rows):
        row_off[ti + 1] = len(srcs)
    np.cumsum(row_off, out=row_off)
    row_src = np.empty(int(row_off[-1]), dtype=np.int32)
    probs = np.empty(int(row_off[-1]), dtype=np.float64)
    for ti, srcs in enumerate(rows):
        lo = int(row_off[ti])
        ordered = sorted(srcs)
        row_src[lo:lo + len(ordered)] = ordered
        if ordered:
            probs[lo:lo + len(ordered)] = 1.0 / len(ordered)

    src_flat = np.array(
        [s2i[t] for src, _ in pairs.pairs for t in src], dtype=np.int32
    )
    src_off = np.zeros(len(pairs) + 1, dtype=np.int64)
    tgt_flat = np.array(
        [t2i[t] for _, tgt in pairs.pairs for t in tgt], dtype=np.int32
    )
    tgt_off = np.zeros(len(pairs) + 1, dtype=np.int64)
    for p, (src, tgt) in enumerate(pairs.pairs):
        src_off[p + 1] = src_off[p] + len(src)
        tgt_off[p + 1] = tgt_off[p] + len(tgt)
    max_tgt = max(len(tgt) for _, tgt in pairs.pairs)
    work = np.zeros(max_tgt + 1, dtype=np.int64)

    loglik = []
    for _ in range(iterations):
        probs, ll = kernels.ibm1_em_step(
            src_flat, src_off, tgt_flat, tgt_off, row_off, row_src, probs, work
        )
        loglik.append(float(ll))

    return IBM1Model(src_vocab, tgt_vocab, row_off, row_src, probs, loglik)


def channel_logprob(model, x: Sequence[str], y: Sequence[str]) -> float:
    return model.logprob(x, y)


def save_channel(model: IBM1Model, path: str | os.PathLike) -> None:
    """Tab-separated `source<TAB>target<TAB>prob`, NULL spelled <NULL>,
    ordered by target id then source id."""
    with open(path, "w", encoding="utf-8") as fh:
        for tgt in model.tgt_vocab:
            for src, p in model.row_items(tgt):
                fh.write(f"{src}\t{tgt}\t{p!r}\n")


def load_channel(path: str | os.PathLike) -> IBM1Model:
    ttable: dict[tuple[str, str], float] = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read channel file {path}: {e}") from e
    with fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{line_no}: expected 3 tab-separated fields")
            src, tgt, p_s = parts
            if not src or not tgt:
                raise DataError(f"{path}:{line_no}: empty token field")
            try:
                p = float(p_s)
            except ValueError:
                raise DataError(f"{path}:{line_no}: bad probability {p_s!r}")
            if not p > 0.0 or p == math.inf or p != p:
                raise DataError(f"{path}:{line_no}: probability out of range: {p_s}")
            if (src, tgt) in ttable:
                raise DataError(f"{path}:{line_no}: duplicate entry ({src!r}, {tgt!r})")
            ttable[(src, tgt)] = p
    if not ttable:
        raise DataError(f"{path}: empty channel file")

    # renormalize rows that drifted; keep exact values for rows already
    # normalized so a clean save/load cycle is parameter-exact
    sums: dict[str, float] = {}
    for (_, tgt), p in ttable.items():
        sums[tgt] = sums.get(tgt, 0.0) + p
    drifted = sorted(t for t, s in sums.items() if abs(s - 1.0) > NORMALIZATION_TOLERANCE)
    if drifted:
        warnings.warn(
            f"{path}: renormalized {len(drifted)} target row(s) whose "
            f"probabilities did not sum to 1: {', '.join(drifted[:5])}"
            + ("..." if len(drifted) > 5 else "")
        )
        bad = set(drifted)
        ttable = {
            (s, t): (p / sums[t] if t in bad else p) for (s, t), p in ttable.items()
        }
    return IBM1Model.from_ttable(ttable)
