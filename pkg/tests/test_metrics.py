"""BLEU, pool diversity, oracle pick ratio and consistency accuracy."""

import json
import math
import random
from collections import namedtuple

import pytest

from docrerank import DataError
from docrerank.corpus import Document
from docrerank.metrics import (
    BleuReport,
    bleu_report_dict,
    consistency_accuracy,
    corpus_bleu,
    oracle_pick_ratio,
    pairwise_bleu,
    save_bleu_report,
)
from docrerank.proposal import Candidate, Lattice, normalize_slot

Ann = namedtuple("Ann", "doc_id sent_index token_index consistent_form inconsistent_form")


def doc(doc_id, *sents):
    return Document(doc_id, tuple(tuple(s.split()) for s in sents))


class TestCorpusBleu:

    def test_identical_is_100(self):
        hyp = [doc("d0", "the quick brown fox jumps over the lazy dog")]
        rep = corpus_bleu(hyp, [hyp])
        assert rep.bleu == pytest.approx(100.0)
        assert rep.brevity_penalty == 1.0
        assert rep.precisions == (1.0, 1.0, 1.0, 1.0)

    def test_short_identical_uses_effective_order(self):
        """Orders with no possible n-grams anywhere drop out of the mean
        instead of zeroing it."""
        hyp = [doc("d0", "a b")]
        rep = corpus_bleu(hyp, [hyp])
        assert rep.bleu == pytest.approx(100.0)
        assert rep.possible_counts[2] == 0 and rep.possible_counts[3] == 0
        assert rep.precisions[2] == 1.0 and rep.precisions[3] == 1.0

    def test_brevity_penalty_hand_value(self):
        """3-token hypothesis, 4-token reference, all 1..3-gram precisions 1:
        BLEU = 100 * exp(1 - 4/3)."""
        rep = corpus_bleu([doc("d", "the cat sat")], [[doc("d", "the cat sat down")]])
        assert rep.precisions[:3] == (1.0, 1.0, 1.0)
        assert rep.brevity_penalty == pytest.approx(math.exp(1.0 - 4.0 / 3.0))
        assert rep.bleu == pytest.approx(100.0 * math.exp(-1.0 / 3.0))
        assert rep.bleu == pytest.approx(71.65313105737893)

    def test_zero_unigram_overlap_is_zero(self):
        rep = corpus_bleu([doc("d", "a b c d e")], [[doc("d", "v w x y z")]])
        assert rep.bleu == 0.0

    def test_zero_fourgram_overlap_forces_zero(self):
        """Shared lower-order n-grams cannot rescue a zero 4-gram count when
        smoothing is off."""
        rep = corpus_bleu([doc("d", "a b c d e")], [[doc("d", "b c d a e")]])
        assert rep.precisions[0] > 0 and rep.precisions[1] > 0
        assert rep.match_counts[3] == 0
        assert rep.bleu == 0.0

    def test_clipping_against_best_reference(self):
        """The classic all-the hypothesis: clip count for 'the' is the max
        reference count (2), so p1 = 2/7."""
        hyp = [doc("d", "the the the the the the the")]
        refs = [
            [doc("d", "the cat is on the mat")],
            [doc("d", "there is a cat on the mat")],
        ]
        rep = corpus_bleu(hyp, refs)
        assert rep.match_counts[0] == 2
        assert rep.possible_counts[0] == 7
        assert rep.precisions[0] == pytest.approx(2.0 / 7.0)

    def test_closest_reference_length_ties_to_earliest(self):
        """5-token hypothesis against 4- and 6-token references: both are one
        token away, so whichever reference corpus comes first sets the
        brevity penalty."""
        hyp = [doc("d", "a b c d e")]
        short = [doc("d", "a b c d")]
        long = [doc("d", "a b c d e f")]
        rep_sl = corpus_bleu(hyp, [short, long])
        rep_ls = corpus_bleu(hyp, [long, short])
        assert rep_sl.ref_length == 4
        assert rep_sl.brevity_penalty == 1.0
        assert rep_ls.ref_length == 6
        assert rep_ls.brevity_penalty == pytest.approx(math.exp(1.0 - 6.0 / 5.0))

    def test_counts_pool_across_sentences(self):
        hyp = [doc("d", "a b", "c d")]
        ref = [doc("d", "a b", "c x")]
        rep = corpus_bleu(hyp, [ref])
        assert rep.match_counts[0] == 3
        assert rep.possible_counts[0] == 4
        assert rep.precisions[0] == pytest.approx(0.75)

    def test_smoothing_hand_value(self):
        """hyp 'a b' vs ref 'a c': p1 = 1/2 raw, p2 = (0+1)/(1+1) smoothed,
        orders 3 and 4 excluded, BP 1: BLEU = 100 * sqrt(1/4) = 50."""
        rep = corpus_bleu([doc("d", "a b")], [[doc("d", "a c")]], smooth=True)
        assert rep.precisions[:2] == (0.5, 0.5)
        assert rep.bleu == pytest.approx(50.0)
        unsmoothed = corpus_bleu([doc("d", "a b")], [[doc("d", "a c")]])
        assert unsmoothed.bleu == 0.0

    def test_smoothing_never_touches_unigrams(self):
        rep = corpus_bleu([doc("d", "a b c")], [[doc("d", "x y z")]], smooth=True)
        assert rep.precisions[0] == 0.0
        assert rep.bleu == 0.0

    def test_report_recomputable(self):
        hyps = [doc("d0", "the black cat sat on the mat", "a dog barked"),
                doc("d1", "it rained all day")]
        refs = [[doc("d0", "the black cat sat on a mat", "the dog barked loudly"),
                 doc("d1", "it rained all day long")]]
        rep = corpus_bleu(hyps, refs, smooth=True)
        included = [n for n in range(4) if rep.possible_counts[n] > 0]
        log_mean = sum(math.log(rep.precisions[n]) for n in included) / len(included)
        assert rep.bleu == pytest.approx(100.0 * rep.brevity_penalty * math.exp(log_mean),
                                         abs=1e-9)

    def test_document_order_invariance(self):
        h0 = doc("d0", "the cat sat on the mat today")
        h1 = doc("d1", "dogs bark at night sometimes")
        r0 = doc("d0", "the cat sat on a mat today")
        r1 = doc("d1", "dogs bark at night often")
        a = corpus_bleu([h0, h1], [[r0, r1]])
        b = corpus_bleu([h1, h0], [[r1, r0]])
        assert a.bleu == pytest.approx(b.bleu)
        assert a.match_counts == b.match_counts

    def test_lowercase_flag_matches_prelowered(self):
        hyp = [doc("d", "The Cat SAT on the MAT today")]
        ref = [[doc("d", "the cat sat on a mat today")]]
        lowered_hyp = [doc("d", "the cat sat on the mat today")]
        a = corpus_bleu(hyp, ref, lowercase=True)
        b = corpus_bleu(lowered_hyp, ref, lowercase=False)
        assert a == b

    def test_misaligned_document_counts(self):
        with pytest.raises(DataError):
            corpus_bleu([doc("d", "a b")], [[doc("d", "a b"), doc("e", "c")]])

    def test_misaligned_sentence_counts(self):
        with pytest.raises(DataError):
            corpus_bleu([doc("d", "a b", "c")], [[doc("d", "a b")]])

    def test_requires_references(self):
        with pytest.raises(DataError):
            corpus_bleu([doc("d", "a b")], [])

    def test_requires_hypotheses(self):
        with pytest.raises(DataError):
            corpus_bleu([], [[]])


class TestPairwiseBleu:

    POOL = (
        ("the", "black", "cat", "sat", "on", "the", "mat"),
        ("the", "black", "cat", "sat", "on", "a", "mat"),
        ("the", "black", "dog", "sat", "on", "the", "mat"),
    )

    def test_identical_pool_is_100(self):
        pool = [("the", "same", "sentence", "every", "time")] * 3
        assert pairwise_bleu(pool) == pytest.approx(100.0)

    def test_disjoint_pool_is_0(self):
        assert pairwise_bleu([("a", "b"), ("c", "d"), ("e", "f")]) == 0.0

    def test_mean_of_ordered_pairs(self):
        docs = [Document(f"c{i}", (s,)) for i, s in enumerate(self.POOL)]
        values = []
        for i, h in enumerate(docs):
            for j, r in enumerate(docs):
                if i != j:
                    values.append(corpus_bleu([h], [[r]]).bleu)
        want = sum(values) / len(values)
        assert pairwise_bleu(self.POOL) == pytest.approx(want)
        assert 0.0 < want < 100.0

    def test_order_invariant(self):
        a = pairwise_bleu(self.POOL)
        b = pairwise_bleu(self.POOL[::-1])
        assert a == pytest.approx(b)

    def test_accepts_candidates(self):
        pool = [Candidate(s, -1.0) for s in self.POOL]
        assert pairwise_bleu(pool) == pytest.approx(pairwise_bleu(self.POOL))

    def test_rejects_small_pool(self):
        with pytest.raises(ValueError):
            pairwise_bleu([("a", "b")])

    def test_rejects_mismatched_documents(self):
        with pytest.raises(DataError):
            pairwise_bleu([doc("a", "x y", "z w"), doc("b", "x y")])


def ref_lattice(doc_id, n_slots, k, rng):
    """A lattice whose slot j contains the reference sentence ('ref', 'j')
    plus k-1 distractors; returns (lattice, reference document, ref indices)."""
    src = Document(doc_id, tuple((f"s{j}",) for j in range(n_slots)))
    ref_sents = []
    slots = []
    ref_idx = []
    for j in range(n_slots):
        ref_sent = ("ref", str(j))
        cands = [Candidate(ref_sent, 0.0)]
        for k_i in range(k - 1):
            cands.append(Candidate((f"alt{k_i}", str(j)), 0.0))
        slot = normalize_slot(cands)
        slots.append(slot)
        ref_sents.append(ref_sent)
        ref_idx.append(next(i for i, c in enumerate(slot) if c.tokens == ref_sent))
    return (Lattice(doc_id, src, tuple(slots)),
            Document(doc_id, tuple(ref_sents)), ref_idx)


class TestOraclePickRatio:

    def test_always_reference_is_one(self):
        rng = random.Random(0)
        lat, ref, ref_idx = ref_lattice("d0", 6, 4, rng)
        assert oracle_pick_ratio([lat], [ref_idx], [ref]) == 1.0

    def test_never_reference_is_zero(self):
        rng = random.Random(0)
        lat, ref, ref_idx = ref_lattice("d0", 6, 4, rng)
        wrong = [(ref_idx[j] + 1) % 4 for j in range(6)]
        assert oracle_pick_ratio([lat], [wrong], [ref]) == 0.0

    def test_uniform_random_near_one_over_k(self):
        """1000 slots with K=5 and one reference each: a uniform picker lands
        near 0.2."""
        rng = random.Random(1234)
        lat, ref, _ = ref_lattice("d0", 1000, 5, rng)
        choices = [rng.randrange(5) for _ in range(1000)]
        ratio = oracle_pick_ratio([lat], [choices], [ref])
        assert 0.15 <= ratio <= 0.25

    def test_fractional_value(self):
        rng = random.Random(0)
        lat, ref, ref_idx = ref_lattice("d0", 4, 3, rng)
        picks = list(ref_idx)
        picks[0] = (ref_idx[0] + 1) % 3
        assert oracle_pick_ratio([lat], [picks], [ref]) == pytest.approx(0.75)

    def test_missing_reference_in_slot(self):
        rng = random.Random(0)
        lat, ref, ref_idx = ref_lattice("d0", 3, 3, rng)
        other = Document("d0", (("not", "there"),) + tuple(ref.sentences[1:]))
        with pytest.raises(DataError):
            oracle_pick_ratio([lat], [ref_idx], [other])

    def test_empty_input(self):
        with pytest.raises(DataError):
            oracle_pick_ratio([], [], [])

    def test_misaligned_inputs(self):
        rng = random.Random(0)
        lat, ref, ref_idx = ref_lattice("d0", 3, 3, rng)
        with pytest.raises(DataError):
            oracle_pick_ratio([lat], [ref_idx], [ref, ref])
        with pytest.raises(DataError):
            oracle_pick_ratio([lat], [ref_idx[:-1]], [ref])

    def test_choice_out_of_range(self):
        rng = random.Random(0)
        lat, ref, ref_idx = ref_lattice("d0", 3, 3, rng)
        bad = list(ref_idx)
        bad[1] = 99
        with pytest.raises(DataError):
            oracle_pick_ratio([lat], [bad], [ref])


class TestConsistencyAccuracy:

    OUT = [
        Document("d0", (("le", "chat", "noir"), ("il", "dort", "bien"))),
        Document("d1", (("les", "chats",), ("ils", "dorment"))),
    ]

    def test_all_consistent(self):
        anns = [
            Ann("d0", 0, 1, "chat", "chats"),
            Ann("d1", 1, 0, "ils", "il"),
        ]
        assert consistency_accuracy(self.OUT, anns) == 1.0

    def test_all_inconsistent(self):
        anns = [
            Ann("d0", 0, 1, "chats", "chat"),
            Ann("d1", 1, 0, "il", "ils"),
        ]
        assert consistency_accuracy(self.OUT, anns) == 0.0

    def test_three_of_four(self):
        anns = [
            Ann("d0", 0, 1, "chat", "chats"),
            Ann("d0", 1, 1, "dort", "dorment"),
            Ann("d1", 0, 0, "les", "le"),
            Ann("d1", 1, 1, "dort", "dorment"),
        ]
        assert consistency_accuracy(self.OUT, anns) == pytest.approx(0.75)

    def test_empty_annotations_vacuously_consistent(self):
        assert consistency_accuracy(self.OUT, []) == 1.0

    def test_unknown_document(self):
        with pytest.raises(DataError):
            consistency_accuracy(self.OUT, [Ann("nope", 0, 0, "x", "y")])

    def test_missing_sentence(self):
        with pytest.raises(DataError):
            consistency_accuracy(self.OUT, [Ann("d0", 5, 0, "x", "y")])

    def test_missing_token(self):
        with pytest.raises(DataError):
            consistency_accuracy(self.OUT, [Ann("d0", 0, 10, "x", "y")])

    def test_duplicate_output_doc(self):
        dup = [self.OUT[0], self.OUT[0]]
        with pytest.raises(DataError):
            consistency_accuracy(dup, [Ann("d0", 0, 0, "le", "la")])


class TestReportSerialization:

    def test_round_trip_fields(self, tmp_path):
        rep = corpus_bleu([doc("d", "the cat sat")], [[doc("d", "the cat sat down")]])
        path = tmp_path / "bleu.json"
        save_bleu_report(rep, path)
        data = json.loads(path.read_text())
        assert data["bleu"] == rep.bleu
        assert data["brevity_penalty"] == rep.brevity_penalty
        assert tuple(data["precisions"]) == rep.precisions
        assert tuple(data["match_counts"]) == rep.match_counts
        assert tuple(data["possible_counts"]) == rep.possible_counts
        assert data["hyp_length"] == rep.hyp_length
        assert data["ref_length"] == rep.ref_length

    def test_dict_has_every_field(self):
        rep = corpus_bleu([doc("d", "a b c d")], [[doc("d", "a b c d")]])
        assert set(bleu_report_dict(rep)) == {
            "bleu", "precisions", "brevity_penalty", "hyp_length",
            "ref_length", "match_counts", "possible_counts",
        }
