"""Caption cleaning, vocabulary construction, split generation, target
encoding, and the two baseline generators (random words, random input).

Record captions are keyword-style text; cleaning lowercases, strips
punctuation, collapses adjacent repeats of the same form, and keeps only
words found in a supplied dictionary word list.  Splits are drawn so that
no test caption (as a cleaned token sequence) occurs in train or
validation.
"""

from __future__ import annotations

import csv
import json
import string
from collections import Counter
from dataclasses import dataclass
from collections.abc import Iterable, Mapping, Sequence

import numpy as np

EOS_TOKEN = "<EOS>"
MAX_CAPTION_WORDS = 10
TARGET_LENGTH = MAX_CAPTION_WORDS + 1

__all__ = [
    "EOS_TOKEN",
    "MAX_CAPTION_WORDS",
    "TARGET_LENGTH",
    "EmptyCaptionError",
    "SplitError",
    "VocabularyError",
    "normalize_caption",
    "Vocabulary",
    "build_vocabulary",
    "SplitSet",
    "generate_split_candidates",
    "encode_caption",
    "random_caption_baseline",
    "feature_column_stats",
    "random_input_baseline",
    "ManifestRow",
    "read_manifest",
    "write_manifest",
    "load_word_list",
    "CaptionRecord",
]


class EmptyCaptionError(ValueError):
    """Caption has no usable words; the record should be excluded."""


class SplitError(RuntimeError):
    """No split satisfying the test-caption disjointness constraint exists."""


class VocabularyError(ValueError):
    """Vocabulary construction failed (nothing qualified, or a bad file)."""


_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def _collapse_runs(tokens: list[str]) -> list[str]:
    out: list[str] = []
    for token in tokens:
        if not out or out[-1] != token:
            out.append(token)
    return out


def normalize_caption(raw: str, dictionary) -> list[str]:
    """Lowercase, delete punctuation characters, split on whitespace,
    collapse runs of identical adjacent tokens, drop tokens missing from
    the dictionary.  Runs the collapse again after the dictionary filter
    (dropping a word can make two identical neighbors adjacent), which
    keeps the operation idempotent.  An empty result is valid; callers
    exclude such records."""
    tokens = raw.lower().translate(_PUNCT_TABLE).split()
    tokens = _collapse_runs(tokens)
    tokens = [t for t in tokens if t in dictionary]
    return _collapse_runs(tokens)


class Vocabulary:
    """Word/index bijection with the end-of-sentence token fixed at index 0."""

    def __init__(self, words: Iterable[str]):
        ordered = [EOS_TOKEN, *words]
        if len(set(ordered)) != len(ordered):
            raise VocabularyError("vocabulary contains duplicate words")
        self._words = ordered
        self._index = {w: i for i, w in enumerate(ordered)}

    @property
    def eos_index(self) -> int:
        return 0

    def __len__(self) -> int:
        return len(self._words)

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._words == other._words

    def word(self, index: int) -> str:
        return self._words[index]

    def index(self, word: str) -> int:
        return self._index[word]

    def content_words(self) -> list[str]:
        """All words except the end token."""
        return self._words[1:]

    def save(self, path) -> None:
        """One word per line; the line number is the index, EOS on line 0."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self._words) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            lines = [line.strip() for line in fh if line.strip()]
        if not lines or lines[0] != EOS_TOKEN:
            raise VocabularyError(f"{path}: vocabulary file must start with {EOS_TOKEN}")
        return cls(lines[1:])


def build_vocabulary(records: Mapping[str, Sequence[str]], splits: "SplitSet",
                     min_count: int = 5) -> Vocabulary:
    """Words occurring at least ``min_count`` times in each of the three
    splits, ordered by descending total count then alphabetically."""
    counters = []
    for ids in (splits.train, splits.val, splits.test):
        counter: Counter[str] = Counter()
        for record_id in ids:
            counter.update(records[record_id])
        counters.append(counter)
    total: Counter[str] = Counter()
    for counter in counters:
        total.update(counter)
    words = [w for w in total if all(c[w] >= min_count for c in counters)]
    if not words:
        raise VocabularyError(f"no word occurs {min_count}+ times in every split")
    words.sort(key=lambda w: (-total[w], w))
    return Vocabulary(words)


@dataclass(frozen=True)
class SplitSet:
    """Disjoint train/validation/test record ids plus the generation seed."""

    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "val", tuple(self.val))
        object.__setattr__(self, "test", tuple(self.test))

    def save(self, path) -> None:
        payload = {"seed": self.seed, "train": list(self.train),
                   "val": list(self.val), "test": list(self.test)}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "SplitSet":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        return cls(train=tuple(payload["train"]), val=tuple(payload["val"]),
                   test=tuple(payload["test"]), seed=int(payload["seed"]))


def generate_split_candidates(records: Mapping[str, Sequence[str]],
                              n_candidates: int = 1000, seed: int = 0,
                              train_frac: float = 0.6, val_frac: float = 0.2,
                              min_count: int = 5) -> SplitSet:
    """Best of ``n_candidates`` random ~60/20/20 partitions.

    Records with identical cleaned captions are grouped and assigned to the
    test split as whole blocks, so no test caption ever appears in train or
    validation; train and validation split the remaining records freely.
    A candidate's score is the number of words occurring ``min_count``+
    times in every split; the highest scorer wins and ties go to the lowest
    candidate index.  Candidate k is drawn from a (seed, k) generator, so
    candidates are independent and could be evaluated in parallel.
    """
    ids = sorted(records)
    if len(ids) < 3:
        raise SplitError("need at least three records to split")
    groups: dict[tuple[str, ...], list[str]] = {}
    for record_id in ids:
        groups.setdefault(tuple(records[record_id]), []).append(record_id)
    group_list = [groups[key] for key in sorted(groups)]
    if len(group_list) < 2:
        raise SplitError("all captions are identical; the test split cannot be caption-disjoint")

    n = len(ids)
    test_target = round(n * (1.0 - train_frac - val_frac))
    val_target = round(n * val_frac)
    best_score = -1
    best: SplitSet | None = None
    for k in range(n_candidates):
        rng = np.random.default_rng([seed, k])
        candidate = _split_candidate(group_list, rng, test_target, val_target)
        if candidate is None:
            continue
        score = _split_score(records, candidate, min_count)
        if score > best_score:
            best_score = score
            best = SplitSet(train=candidate[0], val=candidate[1], test=candidate[2], seed=seed)
    if best is None:
        raise SplitError("no candidate produced three nonempty caption-disjoint splits")
    return best


def _split_candidate(group_list, rng, test_target, val_target):
    """One random partition (train, val, test) id tuples; None if any split
    would be empty.  Groups fill the test quota greedily in shuffled order,
    skipping any group that would overshoot it."""
    order = rng.permutation(len(group_list))
    quota = test_target
    test_ids: list[str] = []
    rest: list[str] = []
    for group_index in order:
        group = group_list[group_index]
        if 0 < len(group) <= quota:
            test_ids.extend(group)
            quota -= len(group)
        else:
            rest.extend(group)
    rest = [rest[i] for i in rng.permutation(len(rest))]
    val_ids = rest[:val_target]
    train_ids = rest[val_target:]
    if not test_ids or not val_ids or not train_ids:
        return None
    return tuple(train_ids), tuple(val_ids), tuple(test_ids)


def _split_score(records, candidate, min_count):
    counters = [Counter(tok for rid in ids for tok in records[rid]) for ids in candidate]
    return sum(1 for w in counters[0] if all(c[w] >= min_count for c in counters))


def encode_caption(tokens: Sequence[str], vocab: Vocabulary,
                   max_words: int = MAX_CAPTION_WORDS) -> np.ndarray:
    """Fixed-length target indices: the first ``max_words`` in-vocabulary
    words, then the end token, padded with it to ``max_words + 1``.

    Out-of-vocabulary tokens are dropped first; a caption with nothing left
    raises EmptyCaptionError so the caller can exclude the record.
    """
    kept = [t for t in tokens if t in vocab]
    if not kept:
        raise EmptyCaptionError("caption has no in-vocabulary words")
    indices = [vocab.index(t) for t in kept[:max_words]]
    indices.extend([vocab.eos_index] * (max_words + 1 - len(indices)))
    return np.asarray(indices, dtype=np.intp)


def random_caption_baseline(vocab: Vocabulary, rng) -> list[str]:
    """Caption of one to ten words drawn uniformly (with replacement) from
    the vocabulary, end token excluded."""
    if len(vocab) < 2:
        raise ValueError("vocabulary has no content words")
    length = int(rng.integers(1, MAX_CAPTION_WORDS + 1))
    picks = rng.integers(1, len(vocab), size=length)
    return [vocab.word(int(i)) for i in picks]


def feature_column_stats(feature_matrices) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and standard deviation pooled over all rows of all
    the given matrices."""
    matrices = [np.asarray(m, dtype=np.float64) for m in feature_matrices]
    if not matrices:
        raise ValueError("no feature matrices given")
    stacked = np.concatenate(matrices, axis=0)
    return stacked.mean(axis=0), stacked.std(axis=0)


def random_input_baseline(feature_matrices, rng) -> np.ndarray:
    """A feature-shaped matrix whose column j is drawn from a Gaussian fit
    to column j of the given (training-split) matrices."""
    matrices = [np.asarray(m, dtype=np.float64) for m in feature_matrices]
    mean, std = feature_column_stats(matrices)
    rows = matrices[0].shape[0]
    return mean + std * rng.standard_normal((rows, mean.size))


@dataclass(frozen=True)
class ManifestRow:
    record_id: str
    audio_path: str
    caption: str


def read_manifest(path) -> list[ManifestRow]:
    """Records manifest: CSV with header columns id, audio_path, caption."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"id", "audio_path", "caption"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"{path}: manifest needs columns id, audio_path, caption")
        return [ManifestRow(row["id"], row["audio_path"], row["caption"]) for row in reader]


def write_manifest(rows: Iterable[ManifestRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "audio_path", "caption"])
        for row in rows:
            writer.writerow([row.record_id, row.audio_path, row.caption])


def load_word_list(path) -> frozenset[str]:
    """Dictionary file: one lowercase word per line."""
    with open(path, encoding="utf-8") as fh:
        return frozenset(line.strip().lower() for line in fh if line.strip())


@dataclass
class CaptionRecord:
    """A recording id with its raw caption, cleaned tokens and, once a
    vocabulary exists, the fixed-length target indices."""

    record_id: str
    raw_caption: str
    tokens: list[str]
    targets: np.ndarray | None = None
