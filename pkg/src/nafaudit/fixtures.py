"""Small, fully specified instances used by the tests, the demos and the acceptance suite."""

from __future__ import annotations

import numpy as np

from .core import Vocabulary
from .models import Corpus, SafeModelSet, TableModel
from .protect import CPDeltaModel

WORKED_P = (0.5, 0.5)
WORKED_Q = (0.25, 0.75)


def worked_pair() -> tuple[TableModel, TableModel]:
    """The two-token i.i.d. pair ``[0.5, 0.5]`` / ``[0.25, 0.75]`` on a shared toy vocabulary."""
    a = TableModel.iid(WORKED_P)
    return a, TableModel.iid(WORKED_Q, a.vocab)


def kappa_fixture() -> tuple[TableModel, SafeModelSet]:
    """Next-token instance where shrinking the threshold raises the exact max divergence.

    The safe models favour different tokens and the audited model splits its
    mass between them.  At ``kappa = 1`` only the rare third token passes the
    ratio test, so the output is a point mass that both safe models find
    unlikely (``k_x = log 20``); at ``kappa >= 3`` everything passes and
    ``k_x = log 9``.
    """
    vocab = Vocabulary.toy(3)
    p = TableModel.iid([0.45, 0.45, 0.10], vocab)
    q1 = TableModel.iid([0.90, 0.05, 0.05], vocab)
    q2 = TableModel.iid([0.05, 0.90, 0.05], vocab)
    return p, SafeModelSet.of(q1, q2)


def random_table_model(rng: np.random.Generator, vocab: Vocabulary, n_tokens: int, order: int = 1,
                       concentration: float = 1.0) -> TableModel:
    """Dirichlet-random full-support model over the first ``n_tokens`` ids, every context listed."""
    k = len(vocab)

    def draw():
        d = np.zeros(k)
        d[:n_tokens] = rng.dirichlet(np.full(n_tokens, concentration))
        return d

    if order == 0:
        return TableModel(vocab, 0, {}, draw())
    contexts = [()]
    for _ in range(order):
        contexts = [c + (t,) for c in contexts for t in [*range(n_tokens), vocab.bos]]
    return TableModel(vocab, order, {c: draw() for c in contexts}, draw())


def temperature_fixture(seed: int = 5, n_tokens: int = 4):
    """Two order-1 safe models and their min-ensemble, for temperature sweeps."""
    rng = np.random.default_rng(seed)
    vocab = Vocabulary.toy(n_tokens)
    q1 = random_table_model(rng, vocab, n_tokens, order=1)
    q2 = random_table_model(rng, vocab, n_tokens, order=1)
    return CPDeltaModel(q1, q2, "max"), SafeModelSet.of(q1, q2)


def duplication_fixture(
    seed: int,
    vocab_size: int = 200,
    n_docs: int = 200,
    n_units: int = 20,
    min_len: int = 30,
    max_len: int = 40,
) -> tuple[Corpus, list[int]]:
    """Synthetic corpus for the memorization experiment.

    Background documents follow a sparse first-order Markov chain (each
    word has four favoured successors).  ``n_units`` randomly chosen
    documents are replaced by uniformly random word strings: distinctive
    text that a model which never saw it has no reason to produce.
    Returns the corpus and the sorted unit indices.
    """
    rng = np.random.default_rng(seed)
    v = vocab_size
    trans = np.full((v, v), 0.02)
    for i in range(v):
        trans[i, rng.choice(v, 4, replace=False)] += np.array([8.0, 4.0, 2.0, 1.0])
    trans /= trans.sum(axis=1, keepdims=True)
    docs = []
    for _ in range(n_docs):
        length = int(rng.integers(min_len, max_len + 1))
        w = int(rng.integers(v))
        doc = [w]
        for _ in range(length - 1):
            w = int(rng.choice(v, p=trans[w]))
            doc.append(w)
        docs.append(doc)
    units = sorted(int(u) for u in rng.choice(n_docs, n_units, replace=False))
    for u in units:
        docs[u] = [int(x) for x in rng.integers(v, size=len(docs[u]))]
    vocab = Vocabulary.build(f"w{i}" for i in range(v))
    return Corpus(vocab, [tuple(d) for d in docs]), units
