"""Grid search over the reranker's interpolation weights.

The search is joint: every point of the Cartesian product lambda1 x lambda2 x
lambda3 is decoded and scored (lambda_lm stays fixed at 1.0), which at the
default 7 * 7 * 4 = 196 points is perfectly tractable and leaves no ordering
ambiguity. Points are independent, so they may be evaluated concurrently; the
result is reduced in grid order (lambda1 outermost, lambda3 innermost) and is
the same for any thread count. Ties keep the earliest grid point.

Language-model and channel scores do not depend on the weights, so one shared
memo serves all grid points; a 196-point search costs barely more scorer work
than a single decode of the dev set.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

from . import DataError
from .corpus import Document, ParallelDocumentCorpus
from .decoder import Weights, doc_decode
from .metrics import corpus_bleu
from .proposal import Lattice

_LAMBDA_GRID = (0.8, 1.0, 1.5, 2.0, 2.2, 2.5, 3.0)
_LENGTH_GRID = (0.2, 0.5, 0.8, 1.0)


def _as_value_tuple(name, values):
    try:
        out = tuple(float(v) for v in values)
    except (TypeError, ValueError) as e:
        raise ValueError(f"{name} must be a sequence of reals: {e}") from e
    if not out:
        raise ValueError(f"{name} must not be empty")
    for v in out:
        if not math.isfinite(v):
            raise ValueError(f"{name} contains a non-finite value {v!r}")
    return out


@dataclass(frozen=True)
class GridSpec:
    lambda1_values: tuple[float, ...] = _LAMBDA_GRID
    lambda2_values: tuple[float, ...] = _LAMBDA_GRID
    lambda3_values: tuple[float, ...] = _LENGTH_GRID

    def __post_init__(self):
        for name in ("lambda1_values", "lambda2_values", "lambda3_values"):
            object.__setattr__(self, name, _as_value_tuple(name, getattr(self, name)))

    def __len__(self) -> int:
        return (len(self.lambda1_values) * len(self.lambda2_values)
                * len(self.lambda3_values))

    def points(self) -> Iterator[Weights]:
        """Grid points in canonical order: lambda1 outermost, then lambda2,
        lambda3 innermost, each in listed order."""
        for l1 in self.lambda1_values:
            for l2 in self.lambda2_values:
                for l3 in self.lambda3_values:
                    yield Weights(l1, l2, l3)


@dataclass(frozen=True)
class GridRow:
    lambda1: float
    lambda2: float
    lambda3: float
    bleu: float


class _MemoLM:
    """Caches score_sentence/stop_logprob by (state, tokens). States are
    opaque duck-typed values; unhashable ones simply bypass the cache."""

    def __init__(self, lm):
        self._lm = lm
        self._sent: dict = {}
        self._stop: dict = {}

    def initial_state(self):
        return self._lm.initial_state()

    def score_sentence(self, state, tokens):
        key = (state, tokens)
        try:
            hit = self._sent.get(key)
        except TypeError:
            return self._lm.score_sentence(state, tokens)
        if hit is None:
            hit = self._lm.score_sentence(state, tokens)
            self._sent[key] = hit
        return hit

    def stop_logprob(self, state):
        try:
            hit = self._stop.get(state)
        except TypeError:
            return self._lm.stop_logprob(state)
        if hit is None:
            hit = self._lm.stop_logprob(state)
            self._stop[state] = hit
        return hit


class _MemoChannel:
    def __init__(self, channel):
        self._channel = channel
        self._cache: dict = {}

    def logprob(self, x, y):
        key = (x, y)
        try:
            hit = self._cache.get(key)
        except TypeError:
            return self._channel.logprob(x, y)
        if hit is None:
            hit = self._channel.logprob(x, y)
            self._cache[key] = hit
        return hit


def _bleu_metric(outputs: Sequence[Document], refs: Sequence[Document]) -> float:
    return corpus_bleu(list(outputs), [list(refs)]).bleu


def _paired_lattices(dev: ParallelDocumentCorpus,
                     lattices: Sequence[Lattice]):
    by_id: dict[str, Lattice] = {}
    for lat in lattices:
        if lat.doc_id in by_id:
            raise DataError(f"duplicate lattice for document {lat.doc_id!r}")
        by_id[lat.doc_id] = lat
    paired = []
    for src, tgt in dev.docs:
        lat = by_id.get(src.doc_id)
        if lat is None:
            raise DataError(f"no lattice for dev document {src.doc_id!r}")
        if len(lat.slots) != len(tgt.sentences):
            raise DataError(
                f"document {src.doc_id!r}: lattice has {len(lat.slots)} slots "
                f"for {len(tgt.sentences)} reference sentences"
            )
        paired.append((lat, tgt))
    if not paired:
        raise DataError("dev corpus is empty")
    return paired


def grid_search(dev: ParallelDocumentCorpus, lattices: Sequence[Lattice],
                lm, channel, grid: Optional[GridSpec] = None, B: int = 5,
                metric: Optional[Callable[[Sequence[Document], Sequence[Document]], float]] = None,
                threads: int = 1):
    """Decode the dev set at every grid point and return
    (best weights, best metric, full table).

    The metric defaults to corpus BLEU of the decoded documents against the
    dev references; any callable (outputs, references) -> real may be
    substituted. The argmax keeps the earliest grid point on ties. The table
    has one GridRow per grid point, in grid order.
    """
    if grid is None:
        grid = GridSpec()
    if metric is None:
        metric = _bleu_metric
    if not isinstance(threads, int) or threads < 1:
        raise ValueError(f"threads must be an integer >= 1, got {threads!r}")
    paired = _paired_lattices(dev, lattices)
    refs = [tgt for _, tgt in paired]
    mlm = _MemoLM(lm)
    mch = _MemoChannel(channel)

    def evaluate(weights: Weights) -> float:
        outputs = [doc_decode(lat, mlm, mch, weights, B).output
                   for lat, _ in paired]
        return metric(outputs, refs)

    points = list(grid.points())
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(evaluate, points))
    else:
        scores = [evaluate(w) for w in points]

    best_weights = None
    best_score = -math.inf
    rows = []
    for w, s in zip(points, scores):
        rows.append(GridRow(w.lambda1, w.lambda2, w.lambda3, s))
        if best_weights is None or s > best_score:
            best_weights, best_score = w, s
    return best_weights, best_score, tuple(rows)


def save_grid_table(rows: Sequence[GridRow], path: str | os.PathLike) -> None:
    """Tab-separated table, one line per grid point, with a header line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("lambda1\tlambda2\tlambda3\tbleu\n")
        for r in rows:
            fh.write(f"{r.lambda1!r}\t{r.lambda2!r}\t{r.lambda3!r}\t{r.bleu!r}\n")
