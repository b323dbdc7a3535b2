"""The compiled kernels and the pure-Python twin must produce bit-identical
numbers, and DOCRERANK_BACKEND must select between them at import time."""

import os
import subprocess
import sys

import pytest

from docrerank import kernels
from docrerank.channel import train_ibm1
from docrerank.decoder import Weights, doc_decode
from docrerank.lm import perplexity_per_word, train_ngram_lm
from docrerank.synth import SynthConfig, generate_corpus, make_ambiguous_lattice

needs_compiled = pytest.mark.skipif(
    not kernels.compiled_available(),
    reason="compiled extension not built",
)


def probe_subprocess(env_value):
    """Import the package in a fresh interpreter and report the backend."""
    env = {k: v for k, v in os.environ.items() if k != "DOCRERANK_BACKEND"}
    if env_value is not None:
        env["DOCRERANK_BACKEND"] = env_value
    return subprocess.run(
        [sys.executable, "-c",
         "from docrerank import kernels; print(kernels.backend_name())"],
        capture_output=True, text=True, env=env,
    )


@pytest.fixture(scope="module")
def data():
    corpus, annotations = generate_corpus(
        SynthConfig(num_docs=10, sentences_per_doc=4,
                    ambiguity_rate=0.5, seed=3)
    )
    targets = [t for _, t in corpus.docs]
    by_doc = {}
    for a in annotations:
        by_doc.setdefault(a.doc_id, []).append(a)
    lattices = [
        make_ambiguous_lattice(pair, by_doc.get(pair[1].doc_id, ()),
                               K=4, seed=9)
        for pair in corpus.docs[:4]
    ]
    return corpus, targets, lattices


@pytest.fixture
def backend():
    """Hand the test a backend switch and restore the original afterwards."""
    prev = kernels.backend_name()
    yield kernels.set_backend
    kernels.set_backend(prev)


class TestSelection:
    def test_pure_backend_always_importable(self, backend):
        backend("python")
        assert kernels.backend_name() == "python"

    def test_set_backend_rejects_unknown_name(self):
        with pytest.raises(ValueError):
            kernels.set_backend("fortran")

    def test_default_backend(self):
        proc = probe_subprocess(None)
        assert proc.returncode == 0, proc.stderr
        expected = "compiled" if kernels.compiled_available() else "python"
        assert proc.stdout.strip() == expected

    def test_env_var_forces_python(self):
        proc = probe_subprocess("python")
        assert proc.returncode == 0, proc.stderr
        assert proc.stdout.strip() == "python"

    @needs_compiled
    def test_env_var_forces_compiled(self):
        proc = probe_subprocess("compiled")
        assert proc.returncode == 0, proc.stderr
        assert proc.stdout.strip() == "compiled"

    def test_env_var_rejects_unknown_name(self):
        proc = probe_subprocess("fortran")
        assert proc.returncode != 0
        assert "DOCRERANK_BACKEND" in proc.stderr


@needs_compiled
class TestParity:
    def lm_trace(self, lm, targets):
        """Every per-sentence score, stop score, and the perplexity."""
        trace = []
        for doc in targets:
            state = lm.initial_state()
            for sent in doc.sentences:
                lp, state = lm.score_sentence(state, sent)
                trace.append(lp)
            trace.append(lm.stop_logprob(state))
            lp, _ = lm.score_sentence(state, ("zzz", "unseen.tok", "zzz"))
            trace.append(lp)
        trace.append(perplexity_per_word(lm, targets))
        return trace

    def test_lm_scores_bitwise_equal(self, data, backend):
        _, targets, _ = data
        lm = train_ngram_lm(targets, order=4)
        backend("python")
        py = self.lm_trace(lm, targets)
        backend("compiled")
        cc = self.lm_trace(lm, targets)
        assert py == cc

    def test_channel_training_bitwise_equal(self, data, backend, tmp_path):
        from docrerank.channel import save_channel

        corpus, _, _ = data
        pairs = corpus.sentence_pairs()
        backend("python")
        model_py = train_ibm1(pairs, iterations=6)
        backend("compiled")
        model_cc = train_ibm1(pairs, iterations=6)
        assert model_py.train_loglik == model_cc.train_loglik
        save_channel(model_py, tmp_path / "py.tsv")
        save_channel(model_cc, tmp_path / "cc.tsv")
        assert (tmp_path / "py.tsv").read_bytes() == (tmp_path / "cc.tsv").read_bytes()

    def test_channel_scores_bitwise_equal(self, data, backend):
        corpus, _, _ = data
        pairs = corpus.sentence_pairs()
        model = train_ibm1(pairs, iterations=4)
        queries = list(pairs.pairs[:40])
        queries.append((("qqq", "zzz"), pairs.pairs[0][1]))
        queries.append((pairs.pairs[0][0], ("qqq", "zzz")))
        backend("python")
        py = [model.logprob(x, y) for x, y in queries]
        backend("compiled")
        cc = [model.logprob(x, y) for x, y in queries]
        assert py == cc

    def test_doc_decode_bitwise_equal(self, data, backend):
        corpus, targets, lattices = data
        lm = train_ngram_lm(targets, order=3)
        model = train_ibm1(corpus.sentence_pairs(), iterations=4)
        weights = Weights(1.0, 1.0, 0.1)

        def decode_all():
            return [doc_decode(lat, lm, model, weights, B=4)
                    for lat in lattices]

        backend("python")
        py = decode_all()
        backend("compiled")
        cc = decode_all()
        for a, b in zip(py, cc):
            assert a.final_score == b.final_score
            assert a.chosen == b.chosen
            assert a.output == b.output
            assert a.breakdowns == b.breakdowns
