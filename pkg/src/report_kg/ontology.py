"""A miniature multilingual concept ontology with relations.

The on-disk format is UTF-8 text, one record per line, two record kinds:

    C <tab> <cui> <tab> <snomed_id> <tab> <lang>:<phrase>|<phrase>... [<tab> <lang>:...]
    R <tab> <cui_a> <tab> <cui_b> <tab> <label>

Lines starting with ``#`` are comments.  Phrases are 1-5 lowercase tokens;
the first phrase listed for a language is that language's preferred label.
Relations are undirected for querying, whatever order the file states them in.
"""

import re
from dataclasses import dataclass, field
from importlib import resources

from .errors import OntologyError

CUI_PATTERN = re.compile(r"^C\d{7}$")
MAX_PHRASE_TOKENS = 5


@dataclass(frozen=True)
class Concept:
    cui: str
    snomed_id: str
    terms: dict  # lang -> tuple of phrases
    preferred_label: dict  # lang -> phrase


@dataclass(frozen=True)
class Relation:
    a: str
    b: str
    label: str


@dataclass
class Ontology:
    """Immutable after load; safe for concurrent reads."""

    concepts: dict = field(default_factory=dict)  # cui -> Concept
    relations: set = field(default_factory=set)  # Relation, a < b canonical
    phrase_index: dict = field(default_factory=dict)  # (lang, phrase) -> cui
    _pairs: set = field(default_factory=set, repr=False, compare=False)

    def __post_init__(self):
        self._pairs = {frozenset((r.a, r.b)) for r in self.relations}

    def __eq__(self, other):
        if not isinstance(other, Ontology):
            return NotImplemented
        return (self.concepts == other.concepts
                and self.relations == other.relations
                and self.phrase_index == other.phrase_index)

    def languages(self) -> set:
        return {lang for c in self.concepts.values() for lang in c.terms}

    def related(self, a: str, b: str) -> bool:
        """True iff some relation connects {a, b}; a concept is never related to itself."""
        for cui in (a, b):
            if cui not in self.concepts:
                raise OntologyError(f"unknown concept id {cui!r}")
        if a == b:
            return False
        return frozenset((a, b)) in self._pairs

    def related_pairs(self, cuis) -> list:
        """Unordered related pairs within ``cuis``, sorted for determinism."""
        cuis = sorted(set(cuis))
        return [(x, y) for i, x in enumerate(cuis) for y in cuis[i + 1:]
                if self.related(x, y)]


def _normalise_phrase(raw: str, lineno: int) -> str:
    tokens = raw.strip().lower().split()
    if not tokens:
        raise OntologyError(f"line {lineno}: empty phrase")
    if len(tokens) > MAX_PHRASE_TOKENS:
        raise OntologyError(
            f"line {lineno}: phrase {raw!r} exceeds {MAX_PHRASE_TOKENS} tokens")
    return " ".join(tokens)


def parse_ontology(text: str) -> Ontology:
    concepts = {}
    phrase_index = {}
    relation_rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        kind = fields[0]
        if kind == "C":
            if len(fields) < 4:
                raise OntologyError(f"line {lineno}: concept record needs cui, "
                                    f"snomed id and at least one language block")
            cui, snomed_id = fields[1], fields[2]
            if not CUI_PATTERN.match(cui):
                raise OntologyError(f"line {lineno}: bad concept id {cui!r}")
            if cui in concepts:
                raise OntologyError(f"line {lineno}: duplicate concept id {cui}")
            terms, preferred = {}, {}
            for block in fields[3:]:
                if ":" not in block:
                    raise OntologyError(f"line {lineno}: bad language block {block!r}")
                lang, joined = block.split(":", 1)
                lang = lang.strip()
                if not lang:
                    raise OntologyError(f"line {lineno}: empty language code")
                phrases = tuple(_normalise_phrase(p, lineno)
                                for p in joined.split("|"))
                if lang in terms:
                    raise OntologyError(f"line {lineno}: language {lang} repeated")
                terms[lang] = phrases
                preferred[lang] = phrases[0]
                for phrase in phrases:
                    key = (lang, phrase)
                    if key in phrase_index:
                        raise OntologyError(
                            f"line {lineno}: duplicate phrase {phrase!r} for "
                            f"language {lang} ({phrase_index[key]} vs {cui})")
                    phrase_index[key] = cui
            concepts[cui] = Concept(cui, snomed_id, terms, preferred)
        elif kind == "R":
            if len(fields) != 4:
                raise OntologyError(f"line {lineno}: relation record needs "
                                    f"two concept ids and a label")
            relation_rows.append((lineno, fields[1], fields[2], fields[3]))
        else:
            raise OntologyError(f"line {lineno}: unknown record kind {kind!r}")

    relations = set()
    for lineno, a, b, label in relation_rows:
        for cui in (a, b):
            if cui not in concepts:
                raise OntologyError(f"line {lineno}: unknown endpoint {cui}")
        if a == b:
            raise OntologyError(f"line {lineno}: self-relation on {a}")
        lo, hi = sorted((a, b))
        relations.add(Relation(lo, hi, label))
    return Ontology(concepts=concepts, relations=relations,
                    phrase_index=phrase_index)


def load_ontology(path) -> Ontology:
    with open(path, encoding="utf-8") as fh:
        return parse_ontology(fh.read())


def dump_ontology(o: Ontology) -> str:
    """Serialise back to the line format; reparses to an equal ontology."""
    lines = []
    for cui in sorted(o.concepts):
        c = o.concepts[cui]
        blocks = "\t".join(f"{lang}:{'|'.join(c.terms[lang])}"
                           for lang in sorted(c.terms))
        lines.append(f"C\t{cui}\t{c.snomed_id}\t{blocks}")
    for rel in sorted(o.relations, key=lambda r: (r.a, r.b, r.label)):
        lines.append(f"R\t{rel.a}\t{rel.b}\t{rel.label}")
    return "\n".join(lines) + "\n"


def bundled_ontology_path():
    """Path to the chest-radiology sample ontology shipped with the package."""
    return resources.files("report_kg").joinpath("data", "mini_ontology.tsv")


def load_bundled_ontology() -> Ontology:
    return parse_ontology(bundled_ontology_path().read_text(encoding="utf-8"))
