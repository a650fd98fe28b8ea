import pytest
from hypothesis import given, settings, strategies as st

from oascope import corpus
from oascope.corpus import (AUGMENT_TOKEN, CorpusFormatError, RawSentence, Negation,
                            ScopeSample, explode, explode_all, fit_window, kfold_split,
                            parse_bioscope_xml, parse_sem_conll, preprocess, read_jsonl,
                            sherlock_split, strip_augment, synthetic_corpus, write_jsonl)


def conll_line(word, *neg_cells):
    return "\t".join(["doc", "0", "0", word, word.lower(), "NN", "*", *neg_cells])


# ---------------------------------------------------------------------------
# CoNLL-style parser


def test_conll_no_negation_marker():
    text = "\n".join([conll_line("Nothing", "***"), conll_line("here", "***")]) + "\n"
    parsed = parse_sem_conll(text)
    assert len(parsed) == 1
    assert parsed[0].words == ["Nothing", "here"]
    assert parsed[0].negations == []


def test_conll_underscore_triple_means_no_negation():
    text = "\n".join([conll_line("Quiet", "_", "_", "_")])
    parsed = parse_sem_conll(text)
    assert parsed[0].negations == []


def test_conll_golden_single_negation():
    text = "\n".join([
        conll_line("I", "_", "_", "_"),
        conll_line("not", "not", "_", "_"),
        conll_line("happy", "_", "happy", "_"),
    ])
    parsed = parse_sem_conll(text)
    assert len(parsed) == 1
    (neg,) = parsed[0].negations
    assert neg.cue_positions == [1]
    assert neg.scope_positions == [2]
    assert neg.cue_affixes == {}


def test_conll_golden_two_negations_independent():
    text = "\n".join([
        conll_line("never", "never", "_", "_", "_", "_", "_"),
        conll_line("say", "_", "say", "_", "_", "say", "_"),
        conll_line("no", "_", "_", "_", "no", "_", "_"),
    ])
    (raw,) = parse_sem_conll(text)
    assert len(raw.negations) == 2
    first, second = raw.negations
    assert first.cue_positions == [0] and first.scope_positions == [1]
    assert second.cue_positions == [2] and second.scope_positions == [1]


def test_conll_affix_cue_recorded_with_substring():
    text = "\n".join([
        conll_line("This", "_", "_", "_"),
        conll_line("impossible", "im", "possible", "_"),
    ])
    (raw,) = parse_sem_conll(text)
    (neg,) = raw.negations
    assert neg.cue_positions == [1]
    assert neg.cue_affixes == {1: "im"}


def test_conll_multiword_cue():
    text = "\n".join([
        conll_line("neither", "neither", "_", "_"),
        conll_line("one", "_", "one", "_"),
        conll_line("nor", "nor", "_", "_"),
        conll_line("two", "_", "two", "_"),
    ])
    (raw,) = parse_sem_conll(text)
    (neg,) = raw.negations
    assert neg.cue_positions == [0, 2]
    assert neg.scope_positions == [1, 3]


def test_conll_ragged_columns_rejected():
    text = conll_line("ok", "***") + "\n" + conll_line("bad", "_", "_", "_")
    with pytest.raises(CorpusFormatError, match="inconsistent"):
        parse_sem_conll(text)


def test_conll_too_few_columns_rejected():
    with pytest.raises(CorpusFormatError, match="columns"):
        parse_sem_conll("just three words\n")


def test_conll_blank_line_separates_sentences():
    text = conll_line("One", "***") + "\n\n" + conll_line("Two", "***") + "\n"
    assert len(parse_sem_conll(text)) == 2


# ---------------------------------------------------------------------------
# BioScope-style XML parser


def test_bioscope_golden_three_word_scope():
    xml = ("<doc><sentence>We can "
           "<xcope id='X1'><cue type='negation' ref='X1'>not</cue> do this</xcope>"
           " today .</sentence></doc>")
    (raw,) = parse_bioscope_xml(xml)
    assert raw.words == ["We", "can", "not", "do", "this", "today", "."]
    (neg,) = raw.negations
    assert neg.cue_positions == [2]
    assert neg.scope_positions == [2, 3, 4]  # cue word sits inside its scope span


def test_bioscope_speculation_cue_ignored():
    xml = ("<doc><sentence><xcope id='X1'>"
           "<cue type='speculation' ref='X1'>might</cue> happen</xcope></sentence></doc>")
    (raw,) = parse_bioscope_xml(xml)
    assert raw.negations == []


def test_bioscope_nested_scopes_map_to_own_spans():
    xml = ("<doc><sentence>A "
           "<xcope id='X1'><cue type='negation' ref='X1'>not</cue> B "
           "<xcope id='X2'><cue type='negation' ref='X2'>never</cue> C</xcope>"
           "</xcope> D</sentence></doc>")
    (raw,) = parse_bioscope_xml(xml)
    assert raw.words == ["A", "not", "B", "never", "C", "D"]
    assert len(raw.negations) == 2
    outer, inner = raw.negations
    assert outer.cue_positions == [1] and outer.scope_positions == [1, 2, 3, 4]
    assert inner.cue_positions == [3] and inner.scope_positions == [3, 4]


def test_bioscope_cue_without_ref_uses_enclosing_scope():
    xml = ("<doc><sentence><xcope id='X9'>"
           "<cue type='negation'>no</cue> sign</xcope> found</sentence></doc>")
    (raw,) = parse_bioscope_xml(xml)
    (neg,) = raw.negations
    assert neg.cue_positions == [0]
    assert neg.scope_positions == [0, 1]


def test_bioscope_tail_text_outside_scope():
    xml = ("<doc><sentence>Start <xcope id='X1'>"
           "<cue type='negation' ref='X1'>not</cue> inside</xcope> outside .</sentence></doc>")
    (raw,) = parse_bioscope_xml(xml)
    (neg,) = raw.negations
    assert raw.words == ["Start", "not", "inside", "outside", "."]
    assert neg.scope_positions == [1, 2]


def test_bioscope_malformed_rejected():
    with pytest.raises(CorpusFormatError, match="XML"):
        parse_bioscope_xml("<doc><sentence>unclosed</doc>")


# ---------------------------------------------------------------------------
# explode


def test_explode_two_cues_two_samples():
    raw = RawSentence(words=["a", "b", "c"],
                      negations=[Negation([0], [1]), Negation([2], [1])])
    samples = explode(raw)
    assert len(samples) == 2
    assert samples[0].words == samples[1].words == ["a", "b", "c"]
    assert samples[0].cue_mask == [True, False, False]
    assert samples[1].cue_mask == [False, False, True]


def test_explode_multiword_cue_marks_every_token():
    words = "I am neither a saint nor a sinner".split()
    raw = RawSentence(words=words, negations=[Negation([2, 5], [3, 4, 6, 7])])
    (sample,) = explode(raw)
    assert [words[i] for i, c in enumerate(sample.cue_mask) if c] == ["neither", "nor"]
    assert [words[i] for i, s in enumerate(sample.scope_labels) if s] == \
        ["a", "saint", "a", "sinner"]


def test_explode_no_negations_empty_list():
    assert explode(RawSentence(words=["x"], negations=[])) == []


def test_explode_empty_cue_rejected():
    raw = RawSentence(words=["x"], negations=[Negation([], [0])])
    with pytest.raises(CorpusFormatError, match="empty cue"):
        explode(raw)


def test_explode_preserves_words_and_counts_stats():
    raws = [RawSentence(words=["a", "b"], negations=[Negation([0], [1])]),
            RawSentence(words=["c"], negations=[])]
    samples, stats = explode_all(raws, source="unit")
    assert stats.sentences == 2
    assert stats.sentences_with_negation == 1
    assert stats.samples == 1
    assert samples[0].words == ["a", "b"]


# ---------------------------------------------------------------------------
# preprocessing


def golden_sample():
    words = "I do not know the answer .".split()
    return ScopeSample(sample_id=0, words=words,
                       cue_mask=[w == "not" for w in words],
                       scope_labels=[w in ("know", "the", "answer") for w in words])


def test_preprocess_normal_identity():
    prep = preprocess(golden_sample(), "normal")
    assert prep.sequence.words == "I do not know the answer .".split()
    assert prep.sequence.cue_ids == [2]
    assert prep.score_mask.all()
    assert list(prep.labels) == [0, 0, 0, 1, 1, 1, 0]


def test_preprocess_augment_golden():
    prep = preprocess(golden_sample(), "augment")
    assert prep.sequence.words == ["I", "do", AUGMENT_TOKEN, "not", "know", "the",
                                   "answer", "."]
    assert prep.sequence.cue_ids == [3]  # cue word itself, after the insertion
    assert list(prep.labels) == [0, 0, 0, 0, 1, 1, 1, 0]
    assert list(prep.score_mask) == [True, True, False, True, True, True, True, True]
    assert strip_augment(prep.sequence.words) == golden_sample().words


def test_preprocess_two_word_cue_index_shift_oracle():
    words = "I am neither a saint nor a sinner".split()
    sample = ScopeSample(sample_id=1, words=words,
                         cue_mask=[w in ("neither", "nor") for w in words],
                         scope_labels=[False, False, False, True, True, False, True, True])
    prep = preprocess(sample, "augment")

    # loop oracle: walk the source words, inserting one marker before each cue
    expect_words, expect_labels = [], []
    for w, cue, lab in zip(words, sample.cue_mask, sample.scope_labels):
        if cue:
            expect_words.append(AUGMENT_TOKEN)
            expect_labels.append(0)
        expect_words.append(w)
        expect_labels.append(int(lab))
    assert prep.sequence.words == expect_words
    assert list(prep.labels) == expect_labels
    assert [prep.sequence.words[i] for i in prep.sequence.cue_ids] == ["neither", "nor"]
    assert (~prep.score_mask).sum() == 2
    assert strip_augment(prep.sequence.words) == words


def test_preprocess_rejects_unknown_mode():
    with pytest.raises(ValueError):
        preprocess(golden_sample(), "other")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.sampled_from(["normal", "augment"]))
def test_preprocess_round_trip_property(seed, mode):
    (sample,) = synthetic_corpus(1, seed)
    prep = preprocess(sample, mode)
    assert strip_augment(prep.sequence.words) == sample.words
    # scoring mask keeps exactly the original tokens
    kept = [w for w, keep in zip(prep.sequence.words, prep.score_mask) if keep]
    assert kept == sample.words
    # labels at unmasked positions equal the source scope labels
    unmasked = [int(l) for l, keep in zip(prep.labels, prep.score_mask) if keep]
    assert unmasked == [int(x) for x in sample.scope_labels]


def test_fit_window_noop_and_centering():
    (sample,) = synthetic_corpus(1, 5)
    prep = preprocess(sample, "normal")
    assert fit_window(prep, 128) is prep
    # long sequence: window keeps the cue
    words = ["w"] * 50 + ["not"] + ["w"] * 50
    long = ScopeSample(sample_id=0, words=words,
                       cue_mask=[w == "not" for w in words],
                       scope_labels=[False] * len(words))
    clipped = fit_window(preprocess(long, "normal"), 16)
    assert len(clipped.sequence) == 16
    assert clipped.sequence.words[clipped.sequence.cue_ids[0]] == "not"


def test_fit_window_unfittable_cues():
    words = ["not"] + ["w"] * 30 + ["never"]
    s = ScopeSample(sample_id=0, words=words,
                    cue_mask=[True] + [False] * 30 + [True],
                    scope_labels=[False] * 32)
    assert fit_window(preprocess(s, "normal"), 16) is None


# ---------------------------------------------------------------------------
# JSONL round trip


def test_jsonl_round_trip(tmp_path):
    samples = synthetic_corpus(10, 3)
    path = tmp_path / "c.jsonl"
    write_jsonl(path, samples)
    loaded = read_jsonl(path)
    assert loaded == samples
    write_jsonl(tmp_path / "c2.jsonl", loaded)
    assert (tmp_path / "c.jsonl").read_text() == (tmp_path / "c2.jsonl").read_text()


def test_jsonl_bad_line_rejected(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"nope": 1}\n')
    with pytest.raises(CorpusFormatError):
        read_jsonl(path)


# ---------------------------------------------------------------------------
# splits


def test_kfold_protocol_100_samples():
    splits = kfold_split(100, 10, seed=7)
    assert len(splits) == 10
    all_test = []
    for train, val, test in splits:
        assert len(test) == 10 and len(val) == 10 and len(train) == 80
        assert not set(train) & set(val)
        assert not set(train) & set(test)
        assert not set(val) & set(test)
        all_test.extend(test)
    assert sorted(all_test) == list(range(100))


def test_kfold_deterministic():
    assert kfold_split(50, 5, seed=3) == kfold_split(50, 5, seed=3)
    assert kfold_split(50, 5, seed=3) != kfold_split(50, 5, seed=4)


def test_kfold_rejects_small_corpus():
    with pytest.raises(ValueError):
        kfold_split(15, 10, seed=0)


def test_sherlock_split_by_tag():
    samples = []
    for i, split in enumerate(["train"] * 5 + ["dev"] * 2 + ["test"] * 3):
        samples.append(ScopeSample(sample_id=i, words=["not", "x"],
                                   cue_mask=[True, False],
                                   scope_labels=[False, True], split=split))
    train, dev, test = sherlock_split(samples)
    assert (len(train), len(dev), len(test)) == (5, 2, 3)


def test_sherlock_split_missing_portion():
    samples = [ScopeSample(sample_id=0, words=["not"], cue_mask=[True],
                           scope_labels=[False], split="train")]
    with pytest.raises(CorpusFormatError):
        sherlock_split(samples)


# ---------------------------------------------------------------------------
# synthetic corpus


def test_synthetic_rule_scope_cue_to_punctuation():
    for sample in synthetic_corpus(40, seed=11):
        cue = sample.cue_positions[0]
        expect = [False] * len(sample.words)
        for j in range(cue + 1, len(sample.words)):
            if sample.words[j] in (".", "!"):
                break
            expect[j] = True
        assert sample.scope_labels == expect
        assert sum(sample.cue_mask) == 1


def test_synthetic_deterministic():
    assert synthetic_corpus(8, seed=2) == synthetic_corpus(8, seed=2)
    assert synthetic_corpus(8, seed=2) != synthetic_corpus(8, seed=3)
