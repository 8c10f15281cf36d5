"""Corpus files, deterministic splits, and the synthetic report generator.

Corpus file format: UTF-8, one report per line, tab-separated fields
``id <tab> lang <tab> text [<tab> labels]`` where labels are 14
comma-separated 0/1 digits.  Lines starting with ``#`` are comments.

The generator renders reports whose labels are a deterministic function of
the concepts mentioned: a rule fires when all of its concepts appear in the
report, contributing its label indices.  With two languages configured, the
same underlying content is rendered once per language under aligned ids, so
cross-language behaviour can be tested pairwise.
"""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CorpusError
from .extract import N_LABELS, Report, extract_concepts, split_sentences
from .ontology import Ontology
from .rng import derive_rng


@dataclass(frozen=True)
class Corpus:
    reports: tuple

    def __len__(self):
        return len(self.reports)

    def __iter__(self):
        return iter(self.reports)

    def ids(self):
        return [r.id for r in self.reports]

    def by_id(self, report_id: str) -> Report:
        for r in self.reports:
            if r.id == report_id:
                return r
        raise CorpusError(f"no report with id {report_id!r}")

    def label_matrix(self) -> np.ndarray:
        missing = [r.id for r in self.reports if r.labels is None]
        if missing:
            raise CorpusError(f"reports without labels: {missing[:3]}...")
        return np.array([r.labels for r in self.reports], dtype=np.float64)


def read_corpus(path) -> Corpus:
    reports = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) not in (3, 4):
                raise CorpusError(f"{path}:{lineno}: expected 3 or 4 tab-separated "
                                  f"fields, got {len(fields)}")
            labels = None
            if len(fields) == 4:
                parts = fields[3].split(",")
                if len(parts) != N_LABELS or any(p not in ("0", "1") for p in parts):
                    raise CorpusError(f"{path}:{lineno}: labels must be "
                                      f"{N_LABELS} comma-separated 0/1 values")
                labels = tuple(int(p) for p in parts)
            reports.append(Report(id=fields[0], language=fields[1],
                                  text=fields[2], labels=labels))
    return Corpus(reports=tuple(reports))


def write_corpus(corpus: Corpus, path):
    with open(path, "w", encoding="utf-8") as fh:
        for r in corpus:
            if "\t" in r.text or "\n" in r.text:
                raise CorpusError(f"report {r.id}: text contains tab or newline")
            line = f"{r.id}\t{r.language}\t{r.text}"
            if r.labels is not None:
                line += "\t" + ",".join(str(v) for v in r.labels)
            fh.write(line + "\n")


def split_corpus(corpus: Corpus, ratios=(0.7, 0.1, 0.2), seed: int = 0):
    """Disjoint (train, val, test) partition, hash-ordered by report id.

    Sizes are floor(n * ratio) for val and test with the remainder going to
    train.  A split whose ratio is positive but whose size comes out empty is
    an error.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise CorpusError(f"split ratios must sum to 1, got {ratios}")
    n = len(corpus)
    n_val = int(n * ratios[1])
    n_test = int(n * ratios[2])
    n_train = n - n_val - n_test
    for name, ratio, size in (("train", ratios[0], n_train),
                              ("val", ratios[1], n_val),
                              ("test", ratios[2], n_test)):
        if ratio > 0 and size == 0:
            raise CorpusError(f"{name} split is empty: corpus of {n} reports "
                              f"is too small for ratios {ratios}")
    order = sorted(corpus, key=lambda r: (_split_hash(seed, r.id), r.id))
    return (Corpus(tuple(order[:n_train])),
            Corpus(tuple(order[n_train:n_train + n_val])),
            Corpus(tuple(order[n_train + n_val:])))


def _split_hash(seed: int, report_id: str) -> int:
    digest = hashlib.sha256(f"{seed}:{report_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


# -- synthetic generation ----------------------------------------------------


@dataclass(frozen=True)
class Rule:
    concepts: frozenset  # all must be mentioned for the rule to fire
    labels: frozenset  # label indices contributed


@dataclass(frozen=True)
class GeneratorSpec:
    n_reports: int
    rules: tuple  # Rule; labels are always derived from all of these
    languages: tuple = ("en",)
    distractors: tuple = ()  # concepts mentioned without label effect
    sentences_per_report: tuple = (2, 5)
    noise: float = 0.3  # probability weight of filler sentences
    label_noise: float = 0.0  # per-bit flip probability
    seed: int = 0
    sample_rules: tuple | None = None  # rules rendered into reports; None = all
    rules_per_report: tuple = (1, 3)
    distractors_per_report: tuple = (0, 3)


def validate_spec(spec: GeneratorSpec, ontology: Ontology):
    known = ontology.concepts.keys()
    langs = ontology.languages()
    for lang in spec.languages:
        if lang not in langs:
            raise CorpusError(f"generator language {lang!r} not in ontology")
    reachable = set()
    for rule in spec.rules:
        for cui in rule.concepts:
            if cui not in known:
                raise CorpusError(f"rule references unknown concept {cui}")
        for idx in rule.labels:
            if not 0 <= idx < N_LABELS:
                raise CorpusError(f"rule label index {idx} out of range")
        reachable |= rule.labels
    missing = set(range(N_LABELS)) - reachable
    if missing:
        raise CorpusError(f"label indices unreachable by any rule: "
                          f"{sorted(missing)}")
    for cui in spec.distractors:
        if cui not in known:
            raise CorpusError(f"distractor references unknown concept {cui}")
    if spec.sample_rules is not None:
        extra = set(spec.sample_rules) - set(spec.rules)
        if extra:
            raise CorpusError("sample_rules must be a subset of rules")
        if not spec.sample_rules:
            raise CorpusError("sample_rules must not be empty")
    lo, hi = spec.sentences_per_report
    if not 1 <= lo <= hi:
        raise CorpusError(f"bad sentences_per_report range {spec.sentences_per_report}")
    lo, hi = spec.rules_per_report
    if not 1 <= lo <= hi:
        raise CorpusError(f"bad rules_per_report range {spec.rules_per_report}")
    lo, hi = spec.distractors_per_report
    if not 0 <= lo <= hi:
        raise CorpusError(f"bad distractors_per_report range "
                          f"{spec.distractors_per_report}")


def _rules_from_json(items) -> tuple:
    return tuple(Rule(frozenset(r["concepts"]), frozenset(r["labels"]))
                 for r in items)


def spec_from_json(text: str) -> GeneratorSpec:
    raw = json.loads(text)
    return GeneratorSpec(
        n_reports=int(raw["n_reports"]),
        rules=_rules_from_json(raw["rules"]),
        languages=tuple(raw.get("languages", ["en"])),
        distractors=tuple(raw.get("distractors", [])),
        sentences_per_report=tuple(raw.get("sentences_per_report", [2, 5])),
        noise=float(raw.get("noise", 0.3)),
        label_noise=float(raw.get("label_noise", 0.0)),
        seed=int(raw.get("seed", 0)),
        sample_rules=(_rules_from_json(raw["sample_rules"])
                      if "sample_rules" in raw else None),
        rules_per_report=tuple(raw.get("rules_per_report", [1, 3])),
        distractors_per_report=tuple(raw.get("distractors_per_report", [0, 3])))


def spec_to_json(spec: GeneratorSpec) -> str:
    def encode(rules):
        return [{"concepts": sorted(r.concepts), "labels": sorted(r.labels)}
                for r in rules]

    payload = {
        "n_reports": spec.n_reports,
        "languages": list(spec.languages),
        "rules": encode(spec.rules),
        "distractors": list(spec.distractors),
        "sentences_per_report": list(spec.sentences_per_report),
        "noise": spec.noise,
        "label_noise": spec.label_noise,
        "seed": spec.seed,
        "rules_per_report": list(spec.rules_per_report),
        "distractors_per_report": list(spec.distractors_per_report),
    }
    if spec.sample_rules is not None:
        payload["sample_rules"] = encode(spec.sample_rules)
    return json.dumps(payload, indent=1, sort_keys=True)


_FILLERS = {
    "en": (
        "no interval change since the prior examination",
        "the examination is technically adequate",
        "comparison was made with the previous imaging",
        "stable appearance since the last visit",
        "clinical correlation is recommended",
        "the patient was positioned upright",
    ),
    "es": (
        "sin cambios de intervalo respecto al estudio previo",
        "el examen es técnicamente adecuado",
        "se realizó comparación con las imágenes previas",
        "aspecto estable desde la última visita",
        "se recomienda correlación clínica",
        "el paciente fue posicionado en bipedestación",
    ),
}

_PREFIXES = {
    "en": ("there is", "imaging shows", "the study demonstrates",
           "findings include", "we again see"),
    "es": ("se observa", "la imagen muestra", "el estudio demuestra",
           "los hallazgos incluyen", "nuevamente se aprecia"),
}

_JOINERS = {
    "en": ("and", "with", "as well as"),
    "es": ("y", "junto con", "así como"),
}


def _render_sentence(ontology, cuis, lang, rng):
    prefix = _PREFIXES[lang][rng.integers(len(_PREFIXES[lang]))]
    words = [prefix]
    for i, cui in enumerate(cuis):
        if i > 0:
            words.append(_JOINERS[lang][rng.integers(len(_JOINERS[lang]))])
        terms = ontology.concepts[cui].terms[lang]
        words.append(terms[rng.integers(len(terms))])
    return " ".join(words)


def generate_corpus(ontology: Ontology, spec: GeneratorSpec) -> Corpus:
    """Deterministic synthetic corpus; one report per language per item.

    Reports are planned from ``sample_rules`` (all rules by default) but
    labelled against the full rule list, so labels stay faithful even when a
    distractor happens to complete an unsampled rule."""
    validate_spec(spec, ontology)
    rules = sorted(spec.rules, key=lambda r: (sorted(r.concepts), sorted(r.labels)))
    sampled = sorted(spec.sample_rules if spec.sample_rules is not None
                     else spec.rules,
                     key=lambda r: (sorted(r.concepts), sorted(r.labels)))
    distractors = sorted(spec.distractors)
    paired = len(spec.languages) > 1
    reports = []
    r_lo, r_hi = spec.rules_per_report
    d_lo, d_hi = spec.distractors_per_report
    for i in range(spec.n_reports):
        rng = derive_rng(spec.seed, "plan", i)
        n_fire = int(rng.integers(r_lo, r_hi + 1))
        fired = [sampled[j] for j in
                 sorted(rng.choice(len(sampled), size=min(n_fire, len(sampled)),
                                   replace=False))]
        concepts = set()
        for rule in fired:
            concepts |= rule.concepts
        if distractors and d_hi > 0:
            n_extra = int(rng.integers(d_lo, d_hi + 1))
            for j in rng.choice(len(distractors), size=min(n_extra, len(distractors)),
                                replace=False):
                concepts.add(distractors[j])

        lo, hi = spec.sentences_per_report
        n_sentences = int(rng.integers(lo, hi + 1))
        slots = [[] for _ in range(n_sentences)]
        for cui in sorted(concepts):
            slots[int(rng.integers(n_sentences))].append(cui)
        n_filler = int(rng.binomial(2, spec.noise))
        for _ in range(n_filler):
            slots.insert(int(rng.integers(len(slots) + 1)), None)

        labels = np.zeros(N_LABELS, dtype=int)
        for rule in rules:
            if rule.concepts <= concepts:
                for idx in rule.labels:
                    labels[idx] = 1
        if spec.label_noise > 0.0:
            flips = rng.random(N_LABELS) < spec.label_noise
            labels[flips] = 1 - labels[flips]

        for lang in spec.languages:
            render_rng = derive_rng(spec.seed, "render", i, lang)
            sentences = []
            for slot in slots:
                if slot is None:
                    fillers = _FILLERS[lang]
                    sentences.append(fillers[render_rng.integers(len(fillers))])
                elif slot:
                    sentences.append(_render_sentence(ontology, slot, lang,
                                                      render_rng))
                else:
                    fillers = _FILLERS[lang]
                    sentences.append(fillers[render_rng.integers(len(fillers))])
            text = ". ".join(sentences) + "."
            rid = f"r{i:05d}-{lang}" if paired else f"r{i:05d}"
            report = Report(id=rid, language=lang, text=text,
                            labels=tuple(int(v) for v in labels))
            _check_faithful(ontology, report, concepts)
            reports.append(report)
    return Corpus(reports=tuple(reports))


def _check_faithful(ontology, report, intended):
    found = {m.concept for m in extract_concepts(ontology, report)}
    if found != intended:
        raise CorpusError(
            f"report {report.id}: rendered concepts {sorted(found)} != "
            f"planned {sorted(intended)}; a template collides with the ontology")


# -- benchmark presets -------------------------------------------------------


def single_concept_spec(n_reports: int, languages=("en",), seed: int = 0,
                        noise: float = 0.3) -> GeneratorSpec:
    """Each finding concept maps directly to one label index."""
    rules = (
        Rule(frozenset({"C0000001"}), frozenset({0})),
        Rule(frozenset({"C0000002"}), frozenset({1})),
        Rule(frozenset({"C0000003"}), frozenset({2})),
        Rule(frozenset({"C0000004"}), frozenset({3})),
        Rule(frozenset({"C0000005"}), frozenset({4})),
        Rule(frozenset({"C0000006"}), frozenset({5})),
        Rule(frozenset({"C0000007"}), frozenset({6})),
        Rule(frozenset({"C0000008"}), frozenset({7})),
        Rule(frozenset({"C0000009"}), frozenset({8})),
        Rule(frozenset({"C0000010"}), frozenset({9})),
        Rule(frozenset({"C0000011"}), frozenset({10})),
        Rule(frozenset({"C0000012"}), frozenset({11})),
        Rule(frozenset({"C0000013"}), frozenset({12})),
        Rule(frozenset({"C0000014"}), frozenset({13})),
        Rule(frozenset({"C0000015"}), frozenset({13})),
    )
    distractors = ("C0000018", "C0000019", "C0000020", "C0000022", "C0000023",
                   "C0000027", "C0000029", "C0000030", "C0000031", "C0000032",
                   "C0000045", "C0000046", "C0000060")
    return GeneratorSpec(n_reports=n_reports, rules=rules, languages=languages,
                         distractors=distractors, sentences_per_report=(2, 5),
                         noise=noise, seed=seed)


RELATIONAL_LABELS = (3, 5, 7)

_RELATIONAL_SINGLES = (
    ("C0000001", 0), ("C0000002", 1), ("C0000003", 2), ("C0000005", 4),
    ("C0000007", 6), ("C0000009", 8), ("C0000010", 9), ("C0000011", 10),
    ("C0000012", 11), ("C0000013", 12), ("C0000014", 13),
)


def relational_spec(n_reports: int, languages=("en",), seed: int = 0,
                    noise: float = 0.3,
                    ontology: Ontology | None = None) -> GeneratorSpec:
    """Labels that hinge on concept *relatedness*, not concept identity.

    Every ontology relation contributes a pair rule; pairs are spread over
    three shared label indices by hashing, so neither the identity of any
    single concept nor the anatomical/finding composition of a pair carries
    class information.  The signal lives in the relations themselves.  A few
    single-concept rules keep the remaining label indices reachable."""
    if ontology is None:
        from .ontology import load_bundled_ontology
        ontology = load_bundled_ontology()
    rules = [Rule(frozenset({cui}), frozenset({idx}))
             for cui, idx in _RELATIONAL_SINGLES]
    participants = set()
    for rel in sorted(ontology.relations, key=lambda r: (r.a, r.b, r.label)):
        klass = _split_hash(0, f"label:{rel.a}:{rel.b}") % len(RELATIONAL_LABELS)
        rules.append(Rule(frozenset({rel.a, rel.b}),
                          frozenset({RELATIONAL_LABELS[klass]})))
        participants |= {rel.a, rel.b}
    return GeneratorSpec(n_reports=n_reports, rules=tuple(rules),
                         languages=languages,
                         distractors=tuple(sorted(participants)),
                         sentences_per_report=(2, 5), noise=noise, seed=seed)


def _decoy_pairs(ontology: Ontology, pair_rules, seed: int, tag: str) -> tuple:
    """Unrelated pairs whose concept frequencies match the given pair rules.

    Partners are reshuffled from the degree-weighted endpoint pool, so the
    presence of any single concept carries no label information; only the
    pairing itself does."""
    pool = sorted(c for r in pair_rules for c in r.concepts)
    rng = derive_rng(seed, "decoys", tag)
    decoys, used = [], set()
    attempts = 0
    while len(decoys) < len(pair_rules) and attempts < 10_000:
        attempts += 1
        a = pool[int(rng.integers(len(pool)))]
        b = pool[int(rng.integers(len(pool)))]
        key = frozenset((a, b))
        if a == b or key in used or ontology.related(a, b):
            continue
        used.add(key)
        decoys.append(Rule(key, frozenset()))
    return tuple(decoys)


def relational_split_specs(n_train: int, n_eval: int, seed: int = 0,
                           holdout_fraction: float = 0.3,
                           languages=("en",), noise: float = 0.3,
                           ontology: Ontology | None = None) -> tuple:
    """Train/eval generator specs for relational generalisation.

    The ontology's pair rules are partitioned by hash: the training spec
    renders only the seen pairs, the evaluation spec only the held-out
    pairs.  Each side also renders frequency-matched unrelated decoy pairs,
    so relatedness cannot be read off concept marginals.  Both specs label
    against the full rule set, which makes the evaluation corpus a probe for
    recognising relations that were never rendered during training."""
    if ontology is None:
        from .ontology import load_bundled_ontology
        ontology = load_bundled_ontology()
    base = relational_spec(n_train, languages=languages, seed=seed,
                           noise=noise, ontology=ontology)
    singles = tuple(r for r in base.rules if len(r.concepts) == 1)
    pairs = sorted((r for r in base.rules if len(r.concepts) == 2),
                   key=lambda r: sorted(r.concepts))
    order = sorted(pairs, key=lambda r: _split_hash(seed, "-".join(sorted(r.concepts))))
    n_holdout = max(1, int(len(pairs) * holdout_fraction))
    held_out, seen = tuple(order[:n_holdout]), tuple(order[n_holdout:])
    seen_decoys = _decoy_pairs(ontology, seen, seed, "train")
    held_decoys = _decoy_pairs(ontology, held_out, seed, "eval")
    from dataclasses import replace
    all_rules = base.rules + seen_decoys + held_decoys
    # one rendered unit per report and no distractors, so a report's label
    # depends only on the deliberately rendered pair or single concept
    train_spec = replace(base, rules=all_rules,
                         sample_rules=singles + seen + seen_decoys,
                         rules_per_report=(1, 1), distractors_per_report=(0, 0))
    eval_spec = replace(base, rules=all_rules, n_reports=n_eval, seed=seed + 1,
                        sample_rules=singles + held_out + held_decoys,
                        rules_per_report=(1, 1), distractors_per_report=(0, 0))
    return train_spec, eval_spec


PRESETS = {
    "single-concept": single_concept_spec,
    "relational": relational_spec,
}
