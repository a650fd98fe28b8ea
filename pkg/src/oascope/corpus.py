"""Corpus ingestion and sample preparation.

Two on-disk dialects are read: CoNLL-style columnar files (seven metadata
columns, then cue/scope/event column triples per annotated negation) and
BioScope-style XML (sentence elements containing scope elements and typed
cue elements). Both are normalized to a canonical JSONL record, one record
per (sentence, negation cue) pair, which every downstream stage consumes.
"""

from __future__ import annotations

import io
import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, asdict

import numpy as np

from .backbone import TokenSequence, hash_token

AUGMENT_TOKEN = "tok[0]"

CONLL_META_COLUMNS = 7
WORD_COLUMN = 3
NO_NEGATION_MARKER = "***"
EMPTY_CELL = "_"


class CorpusFormatError(ValueError):
    """Input file violates the expected corpus layout."""


@dataclass
class Negation:
    cue_positions: list
    scope_positions: list
    cue_affixes: dict = field(default_factory=dict)  # position -> affix substring


@dataclass
class RawSentence:
    words: list
    negations: list


@dataclass
class ScopeSample:
    """Canonical record: one sentence paired with exactly one negation cue."""

    sample_id: int
    words: list
    cue_mask: list
    scope_labels: list
    source: str = ""
    split: str = ""

    def __post_init__(self):
        if not (len(self.words) == len(self.cue_mask) == len(self.scope_labels)):
            raise CorpusFormatError("words, cue_mask and scope_labels lengths differ")
        if not any(self.cue_mask):
            raise CorpusFormatError(f"sample {self.sample_id} has an empty cue mask")

    @property
    def cue_positions(self):
        return [i for i, c in enumerate(self.cue_mask) if c]


@dataclass
class PreparedSample:
    """Model-ready view of a ScopeSample after a preprocessing mode."""

    sequence: TokenSequence
    labels: np.ndarray      # per-token {0, 1}
    score_mask: np.ndarray  # False for inserted special tokens
    source_sample: ScopeSample
    mode: str


@dataclass
class DatasetStats:
    sentences: int
    sentences_with_negation: int
    samples: int


# ---------------------------------------------------------------------------
# CoNLL-style columnar parser


def parse_sem_conll(text: str) -> list[RawSentence]:
    """Parse blank-line-delimited sentences with per-negation column triples.

    Columns 0-6 are token metadata (the word sits in column 3). Column 7 is
    the no-negation marker, or the start of (cue, scope, event) triples.
    """
    sentences = []
    block: list[list[str]] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            if block:
                sentences.append(_parse_conll_block(block))
                block = []
            continue
        cells = line.split("\t") if "\t" in line else line.split()
        if len(cells) < CONLL_META_COLUMNS + 1:
            raise CorpusFormatError(
                f"line {lineno}: expected at least {CONLL_META_COLUMNS + 1} columns, "
                f"got {len(cells)}")
        block.append(cells)
    if block:
        sentences.append(_parse_conll_block(block))
    return sentences


def _parse_conll_block(block: list[list[str]]) -> RawSentence:
    widths = {len(row) for row in block}
    if len(widths) != 1:
        raise CorpusFormatError(
            f"inconsistent column counts within a sentence: {sorted(widths)}")
    width = widths.pop()
    words = [row[WORD_COLUMN] for row in block]
    if width == CONLL_META_COLUMNS + 1:
        # single trailing column: the no-negation marker
        return RawSentence(words=words, negations=[])
    if (width - CONLL_META_COLUMNS) % 3 != 0:
        raise CorpusFormatError(
            f"negation columns not in triples: width {width}")
    n_neg = (width - CONLL_META_COLUMNS) // 3
    negations = []
    for k in range(n_neg):
        cue_col = CONLL_META_COLUMNS + 3 * k
        scope_col = cue_col + 1
        cue_positions, scope_positions, affixes = [], [], {}
        for pos, row in enumerate(block):
            cue_cell = row[cue_col]
            if cue_cell not in (EMPTY_CELL, NO_NEGATION_MARKER):
                cue_positions.append(pos)
                if cue_cell != words[pos]:
                    affixes[pos] = cue_cell
            if row[scope_col] not in (EMPTY_CELL, NO_NEGATION_MARKER):
                scope_positions.append(pos)
        if cue_positions:
            negations.append(Negation(cue_positions, scope_positions, affixes))
    return RawSentence(words=words, negations=negations)


# ---------------------------------------------------------------------------
# BioScope-style XML parser


def parse_bioscope_xml(text: str) -> list[RawSentence]:
    """Parse sentence elements with nested scope elements and typed cues.

    Scope elements are matched to their negation cues through the cue's ref
    attribute when present, falling back to the nearest enclosing scope.
    Cues of other types (speculation) are ignored.
    """
    try:
        root = ET.parse(io.StringIO(text)).getroot()
    except ET.ParseError as e:
        raise CorpusFormatError(f"XML parse failure: {e}") from None
    sentences = []
    for sent in root.iter("sentence"):
        sentences.append(_parse_bioscope_sentence(sent))
    return sentences


def _walk_element(elem, tokens, spans, scope_stack, cues):
    """Accumulate whitespace tokens in document order. Records the token span
    of every scope element and the token positions of negation cues; an
    element's tail text is emitted by its parent, outside the element's span."""
    is_scope = elem.tag in ("xcope", "scope")
    start = len(tokens)
    if is_scope:
        scope_stack.append(elem.get("id"))
    if elem.text:
        tokens.extend(elem.text.split())
    for child in elem:
        _walk_element(child, tokens, spans, scope_stack, cues)
        if child.tail:
            tokens.extend(child.tail.split())
    if is_scope:
        spans[scope_stack.pop()] = (start, len(tokens))
    if elem.tag == "cue" and elem.get("type", "").lower() == "negation":
        cues.append({
            "positions": list(range(start, len(tokens))),
            "ref": elem.get("ref"),
            "enclosing": list(scope_stack),
        })


def _parse_bioscope_sentence(sent) -> RawSentence:
    tokens: list[str] = []
    spans: dict = {}
    cues: list[dict] = []
    scope_stack: list = []
    if sent.text:
        tokens.extend(sent.text.split())
    for child in sent:
        _walk_element(child, tokens, spans, scope_stack, cues)
        if child.tail:
            tokens.extend(child.tail.split())

    negations = []
    for cue in cues:
        if not cue["positions"]:
            continue
        span = None
        if cue["ref"] and cue["ref"] in spans:
            span = spans[cue["ref"]]
        elif cue["enclosing"]:
            span = spans.get(cue["enclosing"][-1])
        scope_positions = list(range(span[0], span[1])) if span else []
        negations.append(Negation(cue["positions"], scope_positions))
    return RawSentence(words=tokens, negations=negations)


# ---------------------------------------------------------------------------
# canonical samples


def explode(raw: RawSentence, source: str = "", split: str = "",
            start_id: int = 0) -> list[ScopeSample]:
    """One canonical sample per negation; multi-word cues mark every token."""
    samples = []
    for k, neg in enumerate(raw.negations):
        if not neg.cue_positions:
            raise CorpusFormatError("negation with empty cue")
        cue_mask = [False] * len(raw.words)
        scope_labels = [False] * len(raw.words)
        for pos in neg.cue_positions:
            cue_mask[pos] = True
        for pos in neg.scope_positions:
            scope_labels[pos] = True
        samples.append(ScopeSample(
            sample_id=start_id + k, words=list(raw.words),
            cue_mask=cue_mask, scope_labels=scope_labels,
            source=source, split=split))
    return samples


def explode_all(raw_sentences, source: str = "", split: str = ""):
    samples = []
    for raw in raw_sentences:
        samples.extend(explode(raw, source, split, start_id=len(samples)))
    stats = DatasetStats(
        sentences=len(raw_sentences),
        sentences_with_negation=sum(1 for r in raw_sentences if r.negations),
        samples=len(samples))
    return samples, stats


def write_jsonl(path, samples) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(asdict(s), ensure_ascii=False) + "\n")


def read_jsonl(path) -> list[ScopeSample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusFormatError(f"{path}:{lineno}: invalid JSON: {e}") from None
            try:
                samples.append(ScopeSample(**obj))
            except TypeError as e:
                raise CorpusFormatError(f"{path}:{lineno}: bad record fields: {e}") from None
    return samples


# ---------------------------------------------------------------------------
# preprocessing


def preprocess(sample: ScopeSample, mode: str, vocab_size: int = 8192) -> PreparedSample:
    """Build the model input for one canonical sample.

    normal: words pass through unchanged. augment: a reserved token is
    inserted immediately before every cue word; inserted tokens are labeled
    out-of-scope, excluded from scoring, and cue_ids keep pointing at the
    cue words themselves.
    """
    if mode not in ("normal", "augment"):
        raise ValueError(f"preprocessing mode must be normal or augment, got {mode!r}")
    if mode == "normal":
        words = list(sample.words)
        labels = [int(x) for x in sample.scope_labels]
        score_mask = [True] * len(words)
        cue_ids = sample.cue_positions
    else:
        words, labels, score_mask, cue_ids = [], [], [], []
        for i, w in enumerate(sample.words):
            if sample.cue_mask[i]:
                words.append(AUGMENT_TOKEN)
                labels.append(0)
                score_mask.append(False)
                cue_ids.append(len(words))  # the cue word lands right after
            words.append(w)
            labels.append(int(sample.scope_labels[i]))
            score_mask.append(True)
    seq = TokenSequence(
        token_ids=[hash_token(w, vocab_size) for w in words],
        words=words, cue_ids=cue_ids, sample_id=sample.sample_id)
    return PreparedSample(sequence=seq, labels=np.asarray(labels),
                          score_mask=np.asarray(score_mask, dtype=bool),
                          source_sample=sample, mode=mode)


def strip_augment(words) -> list:
    """Remove inserted reserved tokens, recovering the normal token list."""
    return [w for w in words if w != AUGMENT_TOKEN]


def fit_window(prepared: PreparedSample, max_len: int) -> PreparedSample | None:
    """Clamp long sequences to a window centered on the first cue token.

    Returns None when the cue tokens cannot all fit in one window; callers
    skip such samples with a warning.
    """
    seq = prepared.sequence
    m = len(seq)
    if m <= max_len:
        return prepared
    first, last = seq.cue_ids[0], seq.cue_ids[-1]
    if last - first + 1 > max_len:
        return None
    start = max(0, min(first - (max_len - (last - first + 1)) // 2, m - max_len))
    if last >= start + max_len:
        start = last - max_len + 1
    end = start + max_len
    new_seq = TokenSequence(
        token_ids=seq.token_ids[start:end], words=seq.words[start:end],
        cue_ids=[c - start for c in seq.cue_ids], sample_id=seq.sample_id)
    return PreparedSample(sequence=new_seq, labels=prepared.labels[start:end],
                          score_mask=prepared.score_mask[start:end],
                          source_sample=prepared.source_sample, mode=prepared.mode)


# ---------------------------------------------------------------------------
# splits


def kfold_split(n_samples: int, k: int, seed: int) -> list[tuple]:
    """Disjoint exhaustive test folds; per fold, a validation set of the same
    size as the test fold is drawn from the remaining training indices."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if n_samples < 2 * k:
        raise ValueError(f"need at least 2k={2 * k} samples, got {n_samples}")
    largest_fold = -(-n_samples // k)
    if n_samples - 2 * largest_fold < 1:
        raise ValueError(
            f"k={k} leaves no training data after a test fold and an "
            f"equal-sized validation set ({n_samples} samples)")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF01D]))
    order = rng.permutation(n_samples)
    folds = np.array_split(order, k)
    splits = []
    for i, test in enumerate(folds):
        rest = np.concatenate([f for j, f in enumerate(folds) if j != i])
        val = rng.choice(rest, size=len(test), replace=False)
        val_set = set(val.tolist())
        train = np.array([x for x in rest if x not in val_set])
        splits.append((train.tolist(), sorted(val.tolist()), sorted(test.tolist())))
    return splits


def sherlock_split(samples) -> tuple:
    """Partition canonical samples by their recorded split tag."""
    groups = {"train": [], "dev": [], "test": []}
    for i, s in enumerate(samples):
        if s.split not in groups:
            raise CorpusFormatError(
                f"sample {s.sample_id} has split {s.split!r}; expected train/dev/test")
        groups[s.split].append(i)
    for name, idx in groups.items():
        if not idx:
            raise CorpusFormatError(f"fixed split is missing a {name} portion")
    return groups["train"], groups["dev"], groups["test"]


# ---------------------------------------------------------------------------
# bundled synthetic corpus


SYNTH_VOCAB = [
    "the", "a", "dog", "cat", "bird", "house", "tree", "man", "woman", "child",
    "sees", "finds", "likes", "holds", "wants", "big", "small", "red", "blue",
    "old", "new", "here", "there", "today", "really", "quite", "very", "some",
]
SYNTH_CUES = ["not", "never", "no"]
SYNTH_FINAL_PUNCT = [".", "!"]


def synthetic_corpus(n: int, seed: int, min_len: int = 4, max_len: int = 8,
                     mid_punct_p: float = 0.0,
                     source: str = "synthetic") -> list[ScopeSample]:
    """Generate sentences where the scope runs from just after the cue up to
    the next sentence-final punctuation token (both exclusive).

    mid_punct_p controls how often a clause break lands between the cue and
    the end of the sentence, cutting the scope short.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5E17]))
    samples = []
    for i in range(n):
        body_len = int(rng.integers(min_len, max_len + 1))
        words = [SYNTH_VOCAB[j] for j in rng.integers(0, len(SYNTH_VOCAB), body_len)]
        cue_pos = int(rng.integers(0, body_len - 1))
        words.insert(cue_pos, SYNTH_CUES[int(rng.integers(0, len(SYNTH_CUES)))])
        if rng.random() < mid_punct_p and cue_pos + 2 < len(words):
            words.insert(int(rng.integers(cue_pos + 2, len(words) + 1)),
                         SYNTH_FINAL_PUNCT[int(rng.integers(0, 2))])
        words.append(SYNTH_FINAL_PUNCT[int(rng.integers(0, 2))])
        cue_mask = [False] * len(words)
        cue_mask[cue_pos] = True
        scope = [False] * len(words)
        for j in range(cue_pos + 1, len(words)):
            if words[j] in SYNTH_FINAL_PUNCT:
                break
            scope[j] = True
        samples.append(ScopeSample(sample_id=i, words=words, cue_mask=cue_mask,
                                   scope_labels=scope, source=source))
    return samples
