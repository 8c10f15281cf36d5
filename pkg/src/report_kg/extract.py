"""Deterministic dictionary-based concept extraction.

Sentences split on '.', '!', '?' and blank lines; tokens are lowercased runs
of word characters (punctuation dropped).  Matching is greedy
leftmost-longest over token n-grams up to five tokens, consuming matched
tokens so spans never overlap.  Negation is not interpreted: "no edema"
still yields the edema concept.
"""

import re
from dataclasses import dataclass

from .errors import DataError
from .ontology import MAX_PHRASE_TOKENS, Ontology

N_LABELS = 14

_SENTENCE_BREAK = re.compile(r"[.!?]+|\n\s*\n")
_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)


@dataclass(frozen=True)
class Report:
    id: str
    language: str
    text: str
    labels: tuple | None = None  # 14 ints in {0, 1}

    def __post_init__(self):
        if self.labels is not None:
            if len(self.labels) != N_LABELS:
                raise DataError(f"report {self.id}: expected {N_LABELS} labels, "
                                f"got {len(self.labels)}")
            if any(v not in (0, 1) for v in self.labels):
                raise DataError(f"report {self.id}: labels must be 0/1")


@dataclass(frozen=True)
class Mention:
    concept: str
    sentence_index: int
    token_span: tuple  # (start, end), end exclusive


def split_sentences(text: str) -> list:
    """Token lists per sentence; empty sentences are dropped."""
    sentences = []
    for chunk in _SENTENCE_BREAK.split(text):
        tokens = [t.lower() for t in _TOKEN.findall(chunk)]
        if tokens:
            sentences.append(tokens)
    return sentences


def extract_concepts(ontology: Ontology, report: Report) -> list:
    """Per-sentence greedy leftmost-longest dictionary matches, in order."""
    if report.language not in ontology.languages():
        raise DataError(f"report {report.id}: unknown language "
                        f"{report.language!r}")
    index = ontology.phrase_index
    lang = report.language
    mentions = []
    for s_idx, tokens in enumerate(split_sentences(report.text)):
        i = 0
        n_tokens = len(tokens)
        while i < n_tokens:
            matched = False
            for n in range(min(MAX_PHRASE_TOKENS, n_tokens - i), 0, -1):
                cui = index.get((lang, " ".join(tokens[i:i + n])))
                if cui is not None:
                    mentions.append(Mention(cui, s_idx, (i, i + n)))
                    i += n
                    matched = True
                    break
            if not matched:
                i += 1
    return mentions
