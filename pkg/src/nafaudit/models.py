"""Autoregressive models over a fixed vocabulary, n-gram training and decoding wrappers.

A model maps a context (prompt followed by the tokens generated so far) to a
next-token distribution.  Models look only at their last ``context_order``
tokens, left-padded with ``<bos>``, and memoize per context key, so they
must be treated as immutable once built.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    RESERVED,
    RandomSource,
    TokenSequence,
    ValidationError,
    Vocabulary,
    as_distribution,
    is_distribution,
    normalize,
    safe_log,
    sample_token,
)

MODEL_FORMAT = "naf-table-model/1"
TOP_P_TOL = 1e-12


class FormatError(ValidationError):
    """A model or corpus file does not conform to its format."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.field = field


class EmptyCorpus(ValidationError):
    pass


class GenerativeModel:
    """Base class: subclasses set ``vocab`` and ``context_order`` and implement ``_compute``."""

    vocab: Vocabulary
    context_order: int

    def __init__(self):
        self._cache: dict[TokenSequence, np.ndarray] = {}

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def context_key(self, context: Sequence[int]) -> TokenSequence:
        k = self.context_order
        if k == 0:
            return ()
        ctx = tuple(context[-k:])
        if len(ctx) < k:
            ctx = (self.vocab.bos,) * (k - len(ctx)) + ctx
        return ctx

    def next_distribution(self, context: Sequence[int]) -> np.ndarray:
        key = self.context_key(tuple(context))
        d = self._cache.get(key)
        if d is None:
            d = self._compute(key)
            self._cache[key] = d
        return d

    def _compute(self, key: TokenSequence) -> np.ndarray:
        raise NotImplementedError


class TableModel(GenerativeModel):
    """Lookup-table model: context key -> distribution, with a backoff for unseen keys.

    ``table`` is keyed by token-id tuples of length ``order``; the file
    format uses the space-joined token strings instead.
    """

    def __init__(self, vocab: Vocabulary, order: int, table: dict, backoff):
        super().__init__()
        if order < 0:
            raise ValidationError("order must be >= 0")
        self.vocab = vocab
        self.order = self.context_order = order
        self.backoff = _checked(backoff, len(vocab), "backoff")
        self.table: dict[TokenSequence, np.ndarray] = {}
        for key, probs in table.items():
            key = tuple(key)
            if len(key) != order:
                raise ValidationError(f"context key {key} does not have length {order}")
            self.table[key] = _checked(probs, len(vocab), f"table[{key}]")

    @classmethod
    def iid(cls, probs, vocab: Vocabulary | None = None) -> "TableModel":
        """Model emitting i.i.d. tokens from ``probs`` at every step.

        With ``vocab=None`` a toy vocabulary is built whose first
        ``len(probs)`` ids are the ordinary tokens; the reserved markers get
        probability zero.
        """
        probs = np.asarray(probs, dtype=np.float64)
        if vocab is None:
            vocab = Vocabulary.toy(len(probs))
        full = np.zeros(len(vocab))
        full[: len(probs)] = probs
        return cls(vocab, 0, {}, full)

    def _compute(self, key):
        return self.table.get(key, self.backoff)

    def __eq__(self, other):
        if not isinstance(other, TableModel):
            return NotImplemented
        return (
            self.vocab == other.vocab
            and self.order == other.order
            and np.array_equal(self.backoff, other.backoff)
            and self.table.keys() == other.table.keys()
            and all(np.array_equal(v, other.table[k]) for k, v in self.table.items())
        )

    __hash__ = None

    def __repr__(self):
        return f"TableModel(K={len(self.vocab)}, order={self.order}, contexts={len(self.table)})"


def _checked(probs, k: int, name: str) -> np.ndarray:
    d = as_distribution(probs)
    if len(d) != k:
        raise ValidationError(f"{name} has {len(d)} entries, vocabulary has {k}")
    return d


# ---------------------------------------------------------------------------
# Token-level transforms
# ---------------------------------------------------------------------------

def apply_temperature(probs, tau: float) -> np.ndarray:
    """``probs ** (1/tau)`` renormalized; zero entries stay zero."""
    if not tau > 0:
        raise ValidationError("temperature must be > 0")
    p = np.asarray(probs, dtype=np.float64)
    if tau == 1.0:
        return p
    logp = safe_log(p)
    top = logp.max()
    # shift by the max log-prob so large 1/tau cannot underflow the whole vector
    w = np.exp((logp - top) / tau)
    return normalize(w)


def apply_top_p(probs, top_p: float) -> np.ndarray:
    """Keep the smallest most-probable prefix with mass >= ``top_p`` and renormalize.

    Tokens are ranked by probability, ties broken by ascending id; the
    cumulative-mass comparison allows a slack of ``TOP_P_TOL``.
    """
    if not 0 < top_p <= 1:
        raise ValidationError("top-p must lie in (0, 1]")
    p = np.asarray(probs, dtype=np.float64)
    order = np.lexsort((np.arange(len(p)), -p))
    cum = np.cumsum(p[order])
    keep = int(np.searchsorted(cum, top_p - TOP_P_TOL, side="left")) + 1
    out = np.zeros_like(p)
    kept = order[: min(keep, len(p))]
    out[kept] = p[kept]
    return normalize(out)


def randomized_response(probs, lam: float) -> np.ndarray:
    """Mix with the uniform distribution: ``(1 - lam) * probs + lam / K``."""
    if not 0 <= lam <= 1:
        raise ValidationError("randomized-response weight must lie in [0, 1]")
    p = np.asarray(probs, dtype=np.float64)
    out = (1.0 - lam) * p + lam / len(p)
    out.flags.writeable = False
    return out


class _Wrapper(GenerativeModel):
    def __init__(self, base: GenerativeModel):
        super().__init__()
        self.base = base
        self.vocab = base.vocab
        self.context_order = base.context_order

    def _compute(self, key):
        return self._transform(self.base.next_distribution(key))


class TemperatureModel(_Wrapper):
    def __init__(self, base: GenerativeModel, tau: float):
        if not tau > 0:
            raise ValidationError("temperature must be > 0")
        super().__init__(base)
        self.tau = tau

    def _transform(self, d):
        return apply_temperature(d, self.tau)


class TopPModel(_Wrapper):
    def __init__(self, base: GenerativeModel, top_p: float):
        if not 0 < top_p <= 1:
            raise ValidationError("top-p must lie in (0, 1]")
        super().__init__(base)
        self.top_p = top_p

    def _transform(self, d):
        return apply_top_p(d, self.top_p)


class RandomizedResponseModel(_Wrapper):
    def __init__(self, base: GenerativeModel, lam: float):
        if not 0 <= lam <= 1:
            raise ValidationError("randomized-response weight must lie in [0, 1]")
        super().__init__(base)
        self.lam = lam

    def _transform(self, d):
        return randomized_response(d, self.lam)


class SafeModelSet:
    """Ordered, uniquely identified safe models sharing one vocabulary."""

    def __init__(self, members):
        if isinstance(members, dict):
            members = list(members.items())
        members = [(str(i), m) for i, m in members]
        if not members:
            raise ValidationError("a safe model set needs at least one member")
        ids = [i for i, _ in members]
        if len(set(ids)) != len(ids):
            raise ValidationError("safe model ids must be unique")
        vocab = members[0][1].vocab
        if any(m.vocab != vocab for _, m in members):
            raise ValidationError("safe models must share one vocabulary")
        self.members = members
        self.vocab = vocab

    @classmethod
    def of(cls, *models: GenerativeModel) -> "SafeModelSet":
        """Members named ``q1 .. qm`` in argument order."""
        return cls([(f"q{j + 1}", m) for j, m in enumerate(models)])

    @property
    def m(self) -> int:
        return len(self.members)

    @property
    def ids(self) -> list[str]:
        return [i for i, _ in self.members]

    @property
    def models(self) -> list[GenerativeModel]:
        return [m for _, m in self.members]

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def map(self, fn) -> "SafeModelSet":
        """Apply a model transform (e.g. a temperature wrapper) to every member."""
        return SafeModelSet([(i, fn(m)) for i, m in self.members])


def temperature_wrap(m: GenerativeModel, tau: float) -> GenerativeModel:
    return TemperatureModel(m, tau)


def top_p_wrap(m: GenerativeModel, top_p: float) -> GenerativeModel:
    return TopPModel(m, top_p)


def randomized_response_wrap(m: GenerativeModel, lam: float) -> GenerativeModel:
    return RandomizedResponseModel(m, lam)


# ---------------------------------------------------------------------------
# Corpora and n-gram training
# ---------------------------------------------------------------------------

@dataclass
class Corpus:
    """Documents as token-id tuples plus a provenance id per document."""

    vocab: Vocabulary
    documents: list[TokenSequence]
    provenance: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.documents:
            raise EmptyCorpus("corpus has no documents")
        if not self.provenance:
            self.provenance = [f"doc{i}" for i in range(len(self.documents))]
        if len(self.provenance) != len(self.documents):
            raise ValidationError("one provenance id per document is required")

    def __len__(self):
        return len(self.documents)

    @classmethod
    def from_lines(cls, lines: Sequence[str], vocab: Vocabulary | None = None) -> "Corpus":
        """Whitespace-tokenize one document per line; blank lines are skipped."""
        docs = []
        prov = []
        for lineno, line in enumerate(lines, start=1):
            words = line.split()
            if not words:
                continue
            for w in words:
                if w in RESERVED:
                    raise FormatError(f"reserved marker {w!r} inside a document", line=lineno)
            docs.append(words)
            prov.append(f"line{lineno}")
        if not docs:
            raise EmptyCorpus("corpus has no documents")
        if vocab is None:
            vocab = Vocabulary.build(w for d in docs for w in d)
        return cls(vocab, [vocab.encode(d) for d in docs], prov)


def read_corpus(path, vocab: Vocabulary | None = None) -> Corpus:
    text = Path(path).read_text(encoding="utf-8")
    return Corpus.from_lines(text.splitlines(), vocab)


def train_ngram(corpus: Corpus, order: int, smoothing: float = 1.0) -> TableModel:
    """Add-``smoothing`` n-gram model of the given order.

    Each document is framed as ``<bos>*order + doc + <eos>``.  For every
    observed context ``P(t|ctx) = (count + s) / (total + s * K_pred)`` over
    the predictable tokens (all but ``<bos>`` and ``<unk>``); unseen
    contexts fall back to the smoothed unigram distribution.
    """
    if order < 1:
        raise ValidationError("n-gram order must be >= 1")
    if smoothing < 0:
        raise ValidationError("smoothing must be >= 0")
    if not corpus.documents:
        raise EmptyCorpus("corpus has no documents")
    vocab = corpus.vocab
    k = len(vocab)
    predictable = vocab.predictable
    k_pred = int(predictable.sum())

    counts: dict[TokenSequence, Counter] = defaultdict(Counter)
    unigram: Counter = Counter()
    for doc in corpus.documents:
        if any(t >= k for t in doc):
            raise ValidationError("corpus token id outside the vocabulary")
        framed = (vocab.bos,) * order + tuple(doc) + (vocab.eos,)
        for i in range(order, len(framed)):
            tok = framed[i]
            counts[framed[i - order:i]][tok] += 1
            unigram[tok] += 1

    def smoothed(counter: Counter) -> np.ndarray:
        c = np.zeros(k)
        for tok, n in counter.items():
            c[tok] = n
        w = np.where(predictable, c + smoothing, 0.0)
        return normalize(w)

    table = {ctx: smoothed(c) for ctx, c in counts.items()}
    return TableModel(vocab, order, table, smoothed(unigram))


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------

def sample_sequence(
    m: GenerativeModel,
    prompt: Sequence[int],
    length: int,
    r: RandomSource,
    stop_at_eos: bool = False,
) -> tuple[TokenSequence, float]:
    """Sample ``length`` tokens autoregressively; returns the tokens and their log-probability.

    One uniform draw per token.  With ``stop_at_eos`` generation ends right
    after the first ``<eos>``.
    """
    context = list(prompt)
    out = []
    logprob = 0.0
    for _ in range(length):
        d = m.next_distribution(tuple(context))
        tok = sample_token(d, r)
        logprob += math.log(d[tok])
        out.append(tok)
        context.append(tok)
        if stop_at_eos and tok == m.vocab.eos:
            break
    return tuple(out), logprob


def greedy_sequence(
    m: GenerativeModel, prompt: Sequence[int], length: int, stop_at_eos: bool = False
) -> TokenSequence:
    """Argmax decoding, ties resolved toward the lowest token id."""
    context = list(prompt)
    out = []
    for _ in range(length):
        tok = int(np.argmax(m.next_distribution(tuple(context))))
        out.append(tok)
        context.append(tok)
        if stop_at_eos and tok == m.vocab.eos:
            break
    return tuple(out)


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

def _floats(d) -> str:
    return "[" + ", ".join(repr(float(x)) for x in d) + "]"


def dumps_model(m: TableModel) -> str:
    lines = [
        "{",
        f'  "format": {json.dumps(MODEL_FORMAT)},',
        f'  "vocab": {json.dumps(list(m.vocab.tokens), ensure_ascii=False)},',
        f'  "order": {m.order},',
        f'  "backoff": {_floats(m.backoff)},',
    ]
    entries = sorted((" ".join(m.vocab.decode(k)), v) for k, v in m.table.items())
    if entries:
        lines.append('  "table": {')
        body = [f"    {json.dumps(k, ensure_ascii=False)}: {_floats(v)}" for k, v in entries]
        lines.append(",\n".join(body))
        lines.append("  }")
    else:
        lines.append('  "table": {}')
    lines.append("}")
    return "\n".join(lines) + "\n"


def save_model(m: TableModel, path) -> None:
    Path(path).write_text(dumps_model(m), encoding="utf-8")


def _line_of(text: str, needle: str, after: str | None = None) -> int | None:
    start = text.find(after) if after else 0
    pos = text.find(needle, max(start, 0))
    return None if pos < 0 else text.count("\n", 0, pos) + 1


def loads_model(text: str) -> TableModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(e.msg, line=e.lineno) from None
    if not isinstance(doc, dict):
        raise FormatError("top level must be an object")
    for key in ("format", "vocab", "order", "backoff", "table"):
        if key not in doc:
            raise FormatError("missing field", field=key)
    if doc["format"] != MODEL_FORMAT:
        raise FormatError(f"unsupported format {doc['format']!r}", line=_line_of(text, '"format"'), field="format")
    try:
        vocab = Vocabulary(doc["vocab"])
    except ValidationError as e:
        raise FormatError(str(e), line=_line_of(text, '"vocab"'), field="vocab") from None
    order = doc["order"]
    if not isinstance(order, int) or order < 0:
        raise FormatError("order must be a non-negative integer", line=_line_of(text, '"order"'), field="order")
    k = len(vocab)

    def dist(values, name, needle, after=None):
        line = _line_of(text, needle, after)
        if not isinstance(values, list) or len(values) != k or not all(isinstance(v, (int, float)) for v in values):
            raise FormatError(f"expected {k} numbers", line=line, field=name)
        if not is_distribution(values):
            raise FormatError(f"not a probability distribution (sum={sum(values)!r})", line=line, field=name)
        return values

    backoff = dist(doc["backoff"], "backoff", '"backoff"')
    if not isinstance(doc["table"], dict):
        raise FormatError("table must be an object", field="table")
    table = {}
    for key, values in doc["table"].items():
        name = f"table[{key!r}]"
        words = key.split(" ") if key else []
        needle = json.dumps(key, ensure_ascii=False) + ":"
        if len(words) != order or any(w not in vocab for w in words):
            raise FormatError("context key must be `order` vocabulary tokens", line=_line_of(text, needle, '"table"'), field=name)
        table[tuple(vocab.id(w) for w in words)] = dist(values, name, needle, '"table"')
    return TableModel(vocab, order, table, backoff)


def load_model(path) -> TableModel:
    return loads_model(Path(path).read_text(encoding="utf-8"))
