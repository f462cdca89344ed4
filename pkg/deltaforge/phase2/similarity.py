"""
TF-IDF vectors and the cosine score s(A, B) every checker relies on.

Fitting is delegated to scikit-learn's ``TfidfVectorizer`` (raw term counts,
smoothed idf ``ln((1 + N) / (1 + df)) + 1``, L2 norm). The fitted vocabulary
and idf weights are then frozen into a ``TfidfIndex`` that vectorizes with
numpy, serializes to JSON and can be shared between threads.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from sklearn.feature_extraction.text import TfidfVectorizer

from deltaforge.errors import EmptyCorpus

logger = logging.getLogger(__name__)

TOKEN_PATTERN = r"(?u)\b\w\w+\b"

StopWords = Optional[Union[str, Sequence[str]]]


def _analyzer(stop_words: StopWords = None) -> Callable[[str], List[str]]:
    if isinstance(stop_words, (list, tuple)):
        stop_words = list(stop_words)
    return TfidfVectorizer(token_pattern=TOKEN_PATTERN, lowercase=True, stop_words=stop_words).build_analyzer()


_DEFAULT_ANALYZER = _analyzer()


def tokenize(text: str) -> List[str]:
    """Lowercased word tokens of length >= 2, in order."""
    return _DEFAULT_ANALYZER(text or "")


@dataclass(frozen=True, eq=False)
class TfidfIndex:
    vocabulary: Dict[str, int]
    idf: np.ndarray
    doc_count: int
    stop_words: StopWords = None
    _analyze: Callable[[str], List[str]] = field(default=_DEFAULT_ANALYZER, repr=False, compare=False)

    def __post_init__(self):
        if self.stop_words is not None:
            object.__setattr__(self, "_analyze", _analyzer(self.stop_words))

    def vectorize(self, text: str) -> np.ndarray:
        """L2-normalized TF-IDF vector; out-of-vocabulary tokens are ignored."""
        vec = np.zeros(len(self.vocabulary), dtype=np.float64)
        for token, count in Counter(self._analyze(text or "")).items():
            dim = self.vocabulary.get(token)
            if dim is not None:
                vec[dim] = count * self.idf[dim]
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec

    def cosine(self, a: str, b: str) -> float:
        return cosine(self, a, b)

    def to_dict(self) -> Dict:
        stop_words = list(self.stop_words) if isinstance(self.stop_words, (list, tuple)) else self.stop_words
        return {
            "vocabulary": dict(sorted(self.vocabulary.items(), key=lambda kv: kv[1])),
            "idf": [float(w) for w in self.idf],
            "doc_count": self.doc_count,
            "stop_words": stop_words,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "TfidfIndex":
        stop_words = data.get("stop_words")
        if isinstance(stop_words, list):
            stop_words = tuple(stop_words)
        return cls(
            vocabulary={k: int(v) for k, v in data["vocabulary"].items()},
            idf=np.asarray(data["idf"], dtype=np.float64),
            doc_count=int(data["doc_count"]),
            stop_words=stop_words,
        )


def fit(corpus: Sequence[str], stop_words: StopWords = None) -> TfidfIndex:
    """Fits vocabulary and smoothed idf weights on ``corpus``."""
    if not corpus:
        raise EmptyCorpus("cannot fit TF-IDF on an empty corpus")
    if isinstance(stop_words, list):
        stop_words = tuple(stop_words)
    vectorizer = TfidfVectorizer(
        token_pattern=TOKEN_PATTERN,
        lowercase=True,
        stop_words=list(stop_words) if isinstance(stop_words, tuple) else stop_words,
        smooth_idf=True,
        sublinear_tf=False,
        norm="l2",
    )
    try:
        vectorizer.fit(list(corpus))
    except ValueError as e:
        # sklearn refuses a corpus whose documents are all empty after tokenization
        raise EmptyCorpus(f"no tokens in corpus: {e}") from e
    vocabulary = {term: int(dim) for term, dim in vectorizer.vocabulary_.items()}
    index = TfidfIndex(vocabulary, np.asarray(vectorizer.idf_, dtype=np.float64), len(corpus), stop_words)
    logger.debug("fitted TF-IDF on %d documents, %d terms", len(corpus), len(vocabulary))
    return index


def cosine(index: TfidfIndex, a: str, b: str) -> float:
    """Cosine of the two TF-IDF vectors, 0 when either is all-zero."""
    va = index.vectorize(a)
    vb = index.vectorize(b)
    if not va.any() or not vb.any():
        return 0.0
    score = float(np.dot(va, vb))
    return min(1.0, max(0.0, score))
