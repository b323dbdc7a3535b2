"""Tokenized documents, parallel corpora, and their text I/O.

Corpus text format: one sentence per line, tokens separated by spaces,
documents separated by a single blank line. A line starting with `# ` names
the document that follows; unnamed documents get ids "doc0", "doc1", ...
in file order.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import DataError

Sentence = tuple[str, ...]


def make_sentence(tokens: Iterable[str]) -> Sentence:
    toks = tuple(tokens)
    if not toks:
        raise DataError("empty sentence")
    for t in toks:
        if not t or any(c.isspace() for c in t):
            raise DataError(f"bad token {t!r}: tokens are non-empty and contain no whitespace")
    return toks


@dataclass(frozen=True)
class Document:
    doc_id: str
    sentences: tuple[Sentence, ...]

    def __post_init__(self):
        if not self.sentences:
            raise DataError(f"document {self.doc_id!r} has no sentences")

    def __len__(self) -> int:
        return len(self.sentences)


@dataclass(frozen=True)
class ParallelSentenceCorpus:
    pairs: tuple[tuple[Sentence, Sentence], ...]

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class ParallelDocumentCorpus:
    docs: tuple[tuple[Document, Document], ...] = field(default_factory=tuple)

    def __post_init__(self):
        for src, tgt in self.docs:
            if len(src.sentences) != len(tgt.sentences):
                raise DataError(
                    f"sentence count mismatch in document pair "
                    f"({src.doc_id!r}: {len(src.sentences)} vs {tgt.doc_id!r}: {len(tgt.sentences)})"
                )

    def __len__(self) -> int:
        return len(self.docs)

    def sentence_pairs(self) -> ParallelSentenceCorpus:
        """Flatten to sentence pairs (channel-model training data)."""
        pairs = []
        for src, tgt in self.docs:
            pairs.extend(zip(src.sentences, tgt.sentences))
        return ParallelSentenceCorpus(tuple(pairs))


def load_document_corpus(path: str | os.PathLike) -> list[Document]:
    docs: list[Document] = []
    seen_ids: set[str] = set()
    cur_id: str | None = None
    cur_sents: list[Sentence] = []
    started = False  # a header or sentence opened the current document

    def flush(line_no: int):
        nonlocal cur_id, cur_sents, started
        if not started:
            return
        if not cur_sents:
            raise DataError(f"{path}:{line_no}: empty document")
        doc_id = cur_id if cur_id is not None else f"doc{len(docs)}"
        if doc_id in seen_ids:
            raise DataError(f"{path}:{line_no}: duplicate doc_id {doc_id!r}")
        seen_ids.add(doc_id)
        docs.append(Document(doc_id, tuple(cur_sents)))
        cur_id, cur_sents, started = None, [], False

    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read corpus file {path}: {e}") from e
    with fh:
        line_no = 0
        for line_no, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if line.strip() == "":
                if not started:
                    raise DataError(f"{path}:{line_no}: empty document")
                flush(line_no)
            elif line.startswith("#"):
                if started:
                    raise DataError(f"{path}:{line_no}: doc header inside a document")
                cur_id = line[1:].strip()
                if not cur_id:
                    raise DataError(f"{path}:{line_no}: empty doc_id header")
                started = True
            else:
                started = True
                try:
                    cur_sents.append(make_sentence(line.split()))
                except DataError as e:
                    raise DataError(f"{path}:{line_no}: {e}") from e
        flush(line_no + 1)
    return docs


def save_document_corpus(docs: Sequence[Document], path: str | os.PathLike, headers: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, doc in enumerate(docs):
            if i:
                fh.write("\n")
            if headers:
                fh.write(f"# {doc.doc_id}\n")
            for sent in doc.sentences:
                fh.write(" ".join(sent) + "\n")


def _load_sentence_lines(path: str | os.PathLike) -> list[Sentence]:
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read file {path}: {e}") from e
    with fh:
        sents = []
        for line_no, raw in enumerate(fh, 1):
            toks = raw.split()
            if not toks:
                raise DataError(f"{path}:{line_no}: empty sentence")
            sents.append(make_sentence(toks))
    return sents


def load_parallel_sentences(src_path: str | os.PathLike, tgt_path: str | os.PathLike) -> ParallelSentenceCorpus:
    src = _load_sentence_lines(src_path)
    tgt = _load_sentence_lines(tgt_path)
    if len(src) != len(tgt):
        raise DataError(f"line count mismatch: {src_path} has {len(src)}, {tgt_path} has {len(tgt)}")
    return ParallelSentenceCorpus(tuple(zip(src, tgt)))


def zip_parallel_documents(src: Sequence[Document], tgt: Sequence[Document]) -> ParallelDocumentCorpus:
    if len(src) != len(tgt):
        raise DataError(f"document count mismatch: {len(src)} vs {len(tgt)}")
    return ParallelDocumentCorpus(tuple(zip(src, tgt)))
