"""Weight grid search: grid construction and ordering, argmax and tie rules,
the idempotence of the returned metric, scorer memoization, thread-count
independence, and the tab-separated table export."""

import pytest

from docrerank import DataError
from docrerank.corpus import Document, ParallelDocumentCorpus
from docrerank.decoder import Weights, doc_decode
from docrerank.lm import train_ngram_lm
from docrerank.channel import train_ibm1
from docrerank.metrics import corpus_bleu
from docrerank.proposal import Candidate, Lattice, normalize_slot
from docrerank.synth import SynthConfig, generate_corpus, make_ambiguous_lattice
from docrerank.tuning import GridRow, GridSpec, grid_search, save_grid_table


class TableLM:
    """State-free scorer with per-sentence scores from a lookup table."""

    def __init__(self, table, stop=0.0):
        self.table = table
        self.stop = stop

    def initial_state(self):
        return ()

    def score_sentence(self, state, tokens):
        return self.table[tuple(tokens)], state

    def stop_logprob(self, state):
        return self.stop


class ListStateLM(TableLM):
    """Same scores, but the state is a list, which cannot be hashed."""

    def initial_state(self):
        return []

    def score_sentence(self, state, tokens):
        return self.table[tuple(tokens)], list(state) + [len(tokens)]


class TableChannel:
    def __init__(self, table):
        self.table = table
        self.calls = 0

    def logprob(self, x, y):
        self.calls += 1
        return self.table[(tuple(x), tuple(y))]


def two_slot_fixture():
    """One dev document whose references are recovered only at lambda2 = 2.0:
    slot 0 needs lambda2 > 1.5 (the channel must overrule the LM) and slot 1
    needs lambda2 < 2.5 (the LM must overrule the channel)."""
    src = Document("d0", (("s", "zero"), ("s", "one")))
    ref = Document("d0", (("r", "zero"), ("r", "one")))
    g0, g1 = ("g", "zero"), ("g", "one")
    lm = TableLM({
        ("r", "zero"): -2.5, g0: -1.0,
        ("r", "one"): -1.0, g1: -3.5,
    })
    channel = TableChannel({
        (("s", "zero"), ("r", "zero")): -1.0, (("s", "zero"), g0): -2.0,
        (("s", "one"), ("r", "one")): -2.0, (("s", "one"), g1): -1.0,
    })
    slots = (
        normalize_slot([Candidate(("r", "zero"), -0.7), Candidate(g0, -0.7)]),
        normalize_slot([Candidate(("r", "one"), -0.7), Candidate(g1, -0.7)]),
    )
    lattice = Lattice("d0", src, slots)
    dev = ParallelDocumentCorpus(((src, ref),))
    return dev, [lattice], lm, channel


class TestGridSpec:
    def test_defaults_match_documented_grid(self):
        grid = GridSpec()
        assert grid.lambda1_values == (0.8, 1.0, 1.5, 2.0, 2.2, 2.5, 3.0)
        assert grid.lambda2_values == grid.lambda1_values
        assert grid.lambda3_values == (0.2, 0.5, 0.8, 1.0)
        assert len(grid) == 196

    def test_points_order_is_lambda3_fastest(self):
        grid = GridSpec([1.0, 2.0], [3.0], [4.0, 5.0])
        pts = list(grid.points())
        assert [(w.lambda1, w.lambda2, w.lambda3) for w in pts] == [
            (1.0, 3.0, 4.0), (1.0, 3.0, 5.0),
            (2.0, 3.0, 4.0), (2.0, 3.0, 5.0),
        ]
        assert all(w.lambda_lm == 1.0 for w in pts)

    def test_first_default_point(self):
        assert next(GridSpec().points()) == Weights(0.8, 0.8, 0.2)

    def test_values_coerced_to_floats(self):
        grid = GridSpec([1], [2], [3])
        assert grid.lambda1_values == (1.0,)
        assert isinstance(grid.lambda1_values[0], float)

    @pytest.mark.parametrize("kwargs", [
        {"lambda1_values": []},
        {"lambda2_values": ()},
        {"lambda3_values": [float("inf")]},
        {"lambda1_values": [float("nan")]},
        {"lambda2_values": ["x"]},
    ])
    def test_bad_values_rejected(self, kwargs):
        with pytest.raises(ValueError):
            GridSpec(**kwargs)


class TestGridSearch:
    def test_recovers_the_only_winning_channel_weight(self):
        dev, lattices, lm, channel = two_slot_fixture()
        grid = GridSpec([1.0], [1.0, 2.0, 3.0], [0.0])
        best, score, rows = grid_search(dev, lattices, lm, channel, grid)
        assert best == Weights(1.0, 2.0, 0.0)
        assert score == 100.0
        assert len(rows) == 3
        assert rows[1].bleu == 100.0
        assert rows[0].bleu < 100.0 and rows[2].bleu < 100.0

    def test_single_point_grid_returns_that_point(self):
        dev, lattices, lm, channel = two_slot_fixture()
        grid = GridSpec([1.5], [2.2], [0.5])
        best, score, rows = grid_search(dev, lattices, lm, channel, grid)
        assert best == Weights(1.5, 2.2, 0.5)
        assert len(rows) == 1
        assert rows[0] == GridRow(1.5, 2.2, 0.5, score)

    def test_ties_keep_the_earliest_point(self):
        # the reference dominates every term, so all grid points decode
        # identically and score the same
        src = Document("d0", (("s", "a"),))
        ref = Document("d0", (("r", "a"),))
        lm = TableLM({("r", "a"): -1.0, ("g", "a"): -5.0})
        channel = TableChannel({
            (("s", "a"), ("r", "a")): -1.0,
            (("s", "a"), ("g", "a")): -5.0,
        })
        lattice = Lattice("d0", src, (normalize_slot(
            [Candidate(("r", "a"), -0.5), Candidate(("g", "a"), -1.5)]
        ),))
        dev = ParallelDocumentCorpus(((src, ref),))
        grid = GridSpec([1.0, 2.0], [1.0, 2.0], [0.2, 0.5])
        best, score, rows = grid_search(dev, [lattice], lm, channel, grid)
        assert best == Weights(1.0, 1.0, 0.2)
        assert score == 100.0
        assert len(rows) == 8
        assert all(r.bleu == 100.0 for r in rows)

    def test_table_rows_follow_grid_order(self):
        dev, lattices, lm, channel = two_slot_fixture()
        grid = GridSpec([1.0, 2.0], [1.0, 3.0], [0.0, 0.5])
        _, _, rows = grid_search(dev, lattices, lm, channel, grid)
        assert [(r.lambda1, r.lambda2, r.lambda3) for r in rows] == [
            (w.lambda1, w.lambda2, w.lambda3) for w in grid.points()
        ]

    def test_metric_is_idempotent(self):
        dev, lattices, lm, channel = two_slot_fixture()
        grid = GridSpec([1.0, 2.0], [1.0, 2.0, 3.0], [0.0, 0.3])
        best, score, _ = grid_search(dev, lattices, lm, channel, grid, B=3)
        outputs = [doc_decode(lat, lm, channel, best, B=3).output
                   for lat in lattices]
        refs = [tgt for _, tgt in dev.docs]
        assert corpus_bleu(outputs, [refs]).bleu == score

    def test_thread_count_does_not_change_results(self):
        dev, lattices, lm, channel = two_slot_fixture()
        grid = GridSpec([1.0, 2.0], [1.0, 2.0, 3.0], [0.0, 0.4])
        serial = grid_search(dev, lattices, lm, channel, grid, threads=1)
        threaded = grid_search(dev, lattices, lm, channel, grid, threads=4)
        assert serial == threaded

    def test_channel_scored_once_per_distinct_pair(self):
        dev, lattices, lm, channel = two_slot_fixture()
        grid = GridSpec([1.0, 2.0, 3.0], [1.0, 2.0], [0.0, 0.5])
        grid_search(dev, lattices, lm, channel, grid)
        # 2 slots x 2 candidates, shared across all 12 grid points
        assert channel.calls == 4

    def test_unhashable_lm_state_bypasses_the_memo(self):
        dev, lattices, lm, channel = two_slot_fixture()
        listy = ListStateLM(lm.table)
        grid = GridSpec([1.0], [1.0, 2.0, 3.0], [0.0])
        best, score, rows = grid_search(dev, lattices, listy, channel, grid)
        assert best == Weights(1.0, 2.0, 0.0)
        assert score == 100.0

    def test_custom_metric_is_used(self):
        dev, lattices, lm, channel = two_slot_fixture()
        grid = GridSpec([1.0], [1.0, 2.0], [0.0])

        def count_r(outputs, refs):
            return float(sum(
                sent[0] == "r" for d in outputs for sent in d.sentences
            ))

        best, score, rows = grid_search(dev, lattices, lm, channel, grid,
                                        metric=count_r)
        assert best == Weights(1.0, 2.0, 0.0)
        assert score == 2.0
        assert [r.bleu for r in rows] == [1.0, 2.0]

    def test_missing_lattice_rejected(self):
        dev, lattices, lm, channel = two_slot_fixture()
        with pytest.raises(DataError):
            grid_search(dev, [], lm, channel, GridSpec([1.0], [1.0], [0.0]))

    def test_duplicate_lattice_rejected(self):
        dev, lattices, lm, channel = two_slot_fixture()
        with pytest.raises(DataError):
            grid_search(dev, lattices * 2, lm, channel,
                        GridSpec([1.0], [1.0], [0.0]))

    def test_slot_count_mismatch_rejected(self):
        dev, lattices, lm, channel = two_slot_fixture()
        lat = lattices[0]
        short_src = Document("d0", lat.source.sentences[:1])
        short = Lattice("d0", short_src, lat.slots[:1])
        with pytest.raises(DataError):
            grid_search(dev, [short], lm, channel,
                        GridSpec([1.0], [1.0], [0.0]))

    def test_empty_dev_rejected(self):
        _, lattices, lm, channel = two_slot_fixture()
        with pytest.raises(DataError):
            grid_search(ParallelDocumentCorpus(()), lattices, lm, channel,
                        GridSpec([1.0], [1.0], [0.0]))

    @pytest.mark.parametrize("threads", [0, -1, 2.0])
    def test_bad_thread_count_rejected(self, threads):
        dev, lattices, lm, channel = two_slot_fixture()
        with pytest.raises(ValueError):
            grid_search(dev, lattices, lm, channel,
                        GridSpec([1.0], [1.0], [0.0]), threads=threads)

    def test_end_to_end_on_synthetic_data(self):
        cfg = SynthConfig(num_docs=8, sentences_per_doc=4,
                          ambiguity_rate=0.4, seed=3)
        corpus, annotations = generate_corpus(cfg)
        by_doc = {}
        for a in annotations:
            by_doc.setdefault(a.doc_id, []).append(a)
        lattices = [
            make_ambiguous_lattice(pair, by_doc.get(pair[1].doc_id, ()), K=3)
            for pair in corpus.docs
        ]
        lm = train_ngram_lm([tgt for _, tgt in corpus.docs], order=3,
                            scope="document")
        channel = train_ibm1(corpus.sentence_pairs(), iterations=3)
        grid = GridSpec([0.5, 1.0], [1.0, 2.0], [0.0])
        best, score, rows = grid_search(corpus, lattices, lm, channel, grid,
                                        threads=2)
        assert len(rows) == 4
        assert 0.0 <= score <= 100.0
        assert any(GridRow(best.lambda1, best.lambda2, best.lambda3, score) == r
                   for r in rows)


class TestTableExport:
    def test_tsv_layout(self, tmp_path):
        rows = (GridRow(0.8, 1.0, 0.2, 31.25), GridRow(1.5, 2.2, 0.5, 100.0))
        path = tmp_path / "grid.tsv"
        save_grid_table(rows, path)
        assert path.read_text(encoding="utf-8") == (
            "lambda1\tlambda2\tlambda3\tbleu\n"
            "0.8\t1.0\t0.2\t31.25\n"
            "1.5\t2.2\t0.5\t100.0\n"
        )

    def test_round_trips_through_float(self, tmp_path):
        rows = (GridRow(2.2, 0.30000000000000004, 1.0, 71.65313105737893),)
        path = tmp_path / "grid.tsv"
        save_grid_table(rows, path)
        _, line = path.read_text(encoding="utf-8").splitlines()
        vals = [float(v) for v in line.split("\t")]
        assert vals == [2.2, 0.30000000000000004, 1.0, 71.65313105737893]
