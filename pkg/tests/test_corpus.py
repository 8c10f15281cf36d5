import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from report_kg.corpus import (Corpus, GeneratorSpec, Rule, generate_corpus,
                              read_corpus, relational_spec, single_concept_spec,
                              spec_from_json, spec_to_json, split_corpus,
                              validate_spec, write_corpus)
from report_kg.errors import CorpusError
from report_kg.extract import Report, extract_concepts
from report_kg.ontology import load_bundled_ontology

ONTO = load_bundled_ontology()


def test_corpus_file_round_trip(tmp_path):
    reports = (
        Report("a", "en", "edema is seen.", tuple([0] * 13 + [1])),
        Report("b", "es", "se observa edema.", None),
    )
    path = tmp_path / "corpus.tsv"
    write_corpus(Corpus(reports), path)
    back = read_corpus(path)
    assert back.reports == reports


def test_read_corpus_rejects_bad_labels(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("a\ten\ttext\t0,1\n", encoding="utf-8")
    with pytest.raises(CorpusError, match="labels"):
        read_corpus(path)


def test_read_corpus_rejects_wrong_field_count(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("a\ten\n", encoding="utf-8")
    with pytest.raises(CorpusError, match="fields"):
        read_corpus(path)


def test_split_sizes_floor_with_remainder_to_train():
    corpus = Corpus(tuple(Report(f"r{i}", "en", "x") for i in range(10)))
    train, val, test = split_corpus(corpus, (0.7, 0.1, 0.2), seed=3)
    assert (len(train), len(val), len(test)) == (7, 1, 2)


def test_split_is_deterministic_and_partitions():
    corpus = Corpus(tuple(Report(f"r{i}", "en", "x") for i in range(37)))
    a = split_corpus(corpus, seed=11)
    b = split_corpus(corpus, seed=11)
    assert [c.ids() for c in a] == [c.ids() for c in b]
    all_ids = set()
    for part in a:
        ids = set(part.ids())
        assert not ids & all_ids
        all_ids |= ids
    assert all_ids == set(corpus.ids())


def test_split_changes_with_seed():
    corpus = Corpus(tuple(Report(f"r{i}", "en", "x") for i in range(50)))
    a = split_corpus(corpus, seed=1)
    b = split_corpus(corpus, seed=2)
    assert a[0].ids() != b[0].ids()


def test_split_too_small_corpus_rejected():
    corpus = Corpus(tuple(Report(f"r{i}", "en", "x") for i in range(3)))
    with pytest.raises(CorpusError, match="empty"):
        split_corpus(corpus, (0.7, 0.1, 0.2), seed=0)


def test_split_ratio_sum_validated():
    corpus = Corpus(tuple(Report(f"r{i}", "en", "x") for i in range(10)))
    with pytest.raises(CorpusError, match="sum to 1"):
        split_corpus(corpus, (0.5, 0.2, 0.2), seed=0)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(min_value=10, max_value=60),
       seed=st.integers(min_value=0, max_value=10_000))
def test_split_partition_property(n, seed):
    corpus = Corpus(tuple(Report(f"r{i}", "en", "x") for i in range(n)))
    train, val, test = split_corpus(corpus, (0.7, 0.1, 0.2), seed=seed)
    ids = train.ids() + val.ids() + test.ids()
    assert sorted(ids) == sorted(corpus.ids())
    assert len(val) == int(0.1 * n)
    assert len(test) == int(0.2 * n)


def test_generate_is_deterministic():
    spec = single_concept_spec(25, seed=9)
    a = generate_corpus(ONTO, spec)
    b = generate_corpus(ONTO, spec)
    assert a.reports == b.reports


def test_generated_labels_follow_rules():
    spec = single_concept_spec(100, seed=4)
    rules = list(spec.rules)
    corpus = generate_corpus(ONTO, spec)
    for report in corpus:
        concepts = {m.concept for m in extract_concepts(ONTO, report)}
        expected = np.zeros(14, dtype=int)
        for rule in rules:
            if rule.concepts <= concepts:
                for idx in rule.labels:
                    expected[idx] = 1
        assert tuple(expected) == report.labels


def test_unreachable_label_index_rejected():
    spec = GeneratorSpec(n_reports=5, rules=(
        Rule(frozenset({"C0000006"}), frozenset({5})),))
    with pytest.raises(CorpusError, match="unreachable"):
        validate_spec(spec, ONTO)


def test_unknown_rule_concept_rejected():
    spec = GeneratorSpec(n_reports=5, rules=(
        Rule(frozenset({"C9999999"}), frozenset(range(14))),))
    with pytest.raises(CorpusError, match="unknown concept"):
        validate_spec(spec, ONTO)


def test_parallel_languages_share_content():
    spec = single_concept_spec(30, languages=("en", "es"), seed=21)
    corpus = generate_corpus(ONTO, spec)
    assert len(corpus) == 60
    by_id = {r.id: r for r in corpus}
    for i in range(30):
        en = by_id[f"r{i:05d}-en"]
        es = by_id[f"r{i:05d}-es"]
        assert en.labels == es.labels
        men = extract_concepts(ONTO, en)
        mes = extract_concepts(ONTO, es)
        key = lambda ms: sorted((m.concept, m.sentence_index) for m in ms)
        assert key(men) == key(mes)


def test_label_noise_flips_bits():
    clean = single_concept_spec(60, seed=5)
    noisy = GeneratorSpec(n_reports=60, rules=clean.rules,
                          distractors=clean.distractors, label_noise=0.3,
                          seed=5)
    a = generate_corpus(ONTO, clean)
    b = generate_corpus(ONTO, noisy)
    diffs = sum(ra.labels != rb.labels for ra, rb in zip(a, b))
    assert diffs > 0


def test_spec_json_round_trip():
    spec = relational_spec(40, languages=("en", "es"), seed=13)
    again = spec_from_json(spec_to_json(spec))
    assert again == spec


def test_relational_spec_pairs_are_ontology_relations():
    spec = relational_spec(50, seed=2, ontology=ONTO)
    validate_spec(spec, ONTO)
    pair_rules = [r for r in spec.rules if len(r.concepts) == 2]
    assert len(pair_rules) == len(ONTO.relations)
    for rule in pair_rules:
        a, b = sorted(rule.concepts)
        assert ONTO.related(a, b), f"{a} and {b} must be ontology-related"
    # several relations share each relational label index
    from collections import Counter
    counts = Counter(idx for r in pair_rules for idx in r.labels)
    assert all(v >= 4 for v in counts.values())
