"""Caption cleaning, vocabulary, splits, encoding, and baselines."""

from collections import Counter

import numpy as np
import pytest

from audiocap import data_prep as dp
from audiocap.data_prep import (
    EOS_TOKEN,
    EmptyCaptionError,
    SplitError,
    SplitSet,
    Vocabulary,
    VocabularyError,
)

DICTIONARY = frozenset(
    "bird dog cat barking rain wind door close slide field dark deep hum "
    "water engine forest quiet loud distant running".split()
)


class TestNormalizeCaption:
    def test_adjacent_repeats_collapse(self):
        assert dp.normalize_caption("bird bird", DICTIONARY) == ["bird"]

    def test_punctuation_stripped(self):
        assert dp.normalize_caption("Dog, barking!", DICTIONARY) == ["dog", "barking"]

    def test_unknown_words_dropped(self):
        assert dp.normalize_caption("xqzt dog", frozenset({"dog", "barking"})) == ["dog"]

    def test_filter_can_expose_new_repeats(self):
        # dropping the middle word leaves two identical neighbors; they collapse
        assert dp.normalize_caption("bird xqzt bird", DICTIONARY) == ["bird"]

    def test_case_folding(self):
        assert dp.normalize_caption("RAIN Rain rain", DICTIONARY) == ["rain"]

    def test_idempotent(self, rng):
        words = list(DICTIONARY) + ["zzyx", "qwert"]
        for _ in range(200):
            n = int(rng.integers(1, 8))
            raw = " ".join(words[int(i)] for i in rng.integers(0, len(words), size=n))
            once = dp.normalize_caption(raw, DICTIONARY)
            twice = dp.normalize_caption(" ".join(once), DICTIONARY)
            assert once == twice

    def test_empty_result_is_valid(self):
        assert dp.normalize_caption("xqzt, zzz!", DICTIONARY) == []


class TestVocabulary:
    def test_eos_reserved_at_zero(self):
        vocab = Vocabulary(["dog", "bird"])
        assert vocab.eos_index == 0
        assert vocab.word(0) == EOS_TOKEN
        assert len(vocab) == 3

    def test_round_trip_bijection(self):
        vocab = Vocabulary(["dog", "bird", "rain"])
        for i in range(len(vocab)):
            assert vocab.index(vocab.word(i)) == i

    def test_duplicate_rejected(self):
        with pytest.raises(VocabularyError):
            Vocabulary(["dog", "dog"])

    def test_save_load(self, tmp_path):
        vocab = Vocabulary(["dog", "bird", "rain"])
        path = tmp_path / "vocab.txt"
        vocab.save(path)
        assert path.read_text().splitlines()[0] == EOS_TOKEN
        assert Vocabulary.load(path) == vocab

    def test_load_requires_eos_first(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("dog\nbird\n")
        with pytest.raises(VocabularyError):
            Vocabulary.load(path)


class TestBuildVocabulary:
    def _records(self):
        records = {}
        # "dog": 5 occurrences in each split; "cat": plenty in train/val but 4 in test
        for split, start in (("tr", 0), ("va", 100), ("te", 200)):
            for i in range(5):
                records[f"{split}{start + i}"] = ["dog", "cat"]
        for i in range(5):
            records["te204"] = ["dog", "cat"]
        records["te204"] = ["dog"]  # test split has only 4 cats
        splits = SplitSet(
            train=[f"tr{i}" for i in range(5)],
            val=[f"va{100 + i}" for i in range(5)],
            test=[f"te{200 + i}" for i in range(4)] + ["te204"],
            seed=0,
        )
        return records, splits

    def test_threshold_in_every_split(self):
        records, splits = self._records()
        vocab = dp.build_vocabulary(records, splits, min_count=5)
        assert "dog" in vocab
        assert "cat" not in vocab

    def test_high_counts_elsewhere_do_not_rescue(self):
        records = {"a": ["dog"] * 100, "b": ["dog"] * 100, "c": ["dog"] * 4}
        splits = SplitSet(train=["a"], val=["b"], test=["c"], seed=0)
        with pytest.raises(VocabularyError):
            dp.build_vocabulary(records, splits, min_count=5)

    def test_matches_counting_oracle(self, rng):
        # 30 synthetic records scored against a brute-force counter
        words = ["dog", "bird", "rain", "wind", "cat", "door"]
        records = {
            f"r{i}": [words[int(j)] for j in rng.integers(0, len(words), size=6)]
            for i in range(30)
        }
        ids = sorted(records)
        splits = SplitSet(train=ids[:18], val=ids[18:24], test=ids[24:], seed=0)

        counters = {
            name: Counter(t for rid in ids_ for t in records[rid])
            for name, ids_ in (("train", splits.train), ("val", splits.val), ("test", splits.test))
        }
        expected = {
            w
            for w in set(w for toks in records.values() for w in toks)
            if all(counters[s][w] >= 2 for s in counters)
        }
        vocab = dp.build_vocabulary(records, splits, min_count=2)
        assert set(vocab.content_words()) == expected

    def test_ordering_by_total_count_then_alphabetical(self):
        records = {
            "a": ["dog", "dog", "bird", "ant"],
            "b": ["dog", "bird", "ant"],
            "c": ["dog", "dog", "bird", "ant"],
        }
        splits = SplitSet(train=["a"], val=["b"], test=["c"], seed=0)
        vocab = dp.build_vocabulary(records, splits, min_count=1)
        assert vocab.content_words() == ["dog", "ant", "bird"]  # 5 dogs; ant < bird at 3


def synthetic_corpus(n, rng, n_words=30, dup_fraction=0.3):
    """Records with some exactly duplicated captions."""
    words = [f"w{i}" for i in range(n_words)]
    records = {}
    captions = []
    for i in range(n):
        if captions and rng.random() < dup_fraction:
            caption = captions[int(rng.integers(0, len(captions)))]
        else:
            caption = [words[int(j)] for j in rng.integers(0, n_words, size=int(rng.integers(2, 6)))]
            captions.append(caption)
        records[f"rec{i:04d}"] = caption
    return records


class TestSplits:
    def test_proportions_within_one_record(self, rng):
        records = synthetic_corpus(100, rng)
        splits = dp.generate_split_candidates(records, n_candidates=20, seed=1)
        assert abs(len(splits.test) - 20) <= 1
        assert abs(len(splits.val) - 20) <= 1
        assert abs(len(splits.train) - 60) <= 1

    def test_partition_is_exact(self, rng):
        records = synthetic_corpus(80, rng)
        splits = dp.generate_split_candidates(records, n_candidates=10, seed=2)
        all_ids = set(splits.train) | set(splits.val) | set(splits.test)
        assert all_ids == set(records)
        assert not set(splits.train) & set(splits.val)
        assert not set(splits.train) & set(splits.test)
        assert not set(splits.val) & set(splits.test)

    def test_no_test_caption_in_train_or_val(self, rng):
        records = synthetic_corpus(120, rng, dup_fraction=0.5)
        splits = dp.generate_split_candidates(records, n_candidates=25, seed=3)
        seen = {tuple(records[rid]) for rid in splits.train + splits.val}
        for rid in splits.test:
            assert tuple(records[rid]) not in seen

    def test_selected_candidate_matches_brute_force_scorer(self, rng):
        # enumerate the candidate partitions and score them independently
        records = synthetic_corpus(50, rng)
        n_candidates, seed, min_count = 3, 7, 2

        groups: dict = {}
        for rid in sorted(records):
            groups.setdefault(tuple(records[rid]), []).append(rid)
        group_list = [groups[k] for k in sorted(groups)]

        best_score, best_k = -1, None
        candidates = {}
        for k in range(n_candidates):
            cand_rng = np.random.default_rng([seed, k])
            candidate = dp._split_candidate(group_list, cand_rng, round(0.2 * 50), round(0.2 * 50))
            if candidate is None:
                continue
            candidates[k] = candidate
            counts = [Counter(t for rid in ids for t in records[rid]) for ids in candidate]
            score = sum(1 for w in counts[0] if all(c[w] >= min_count for c in counts))
            if score > best_score:
                best_score, best_k = score, k

        splits = dp.generate_split_candidates(records, n_candidates=n_candidates,
                                              seed=seed, min_count=min_count)
        assert (splits.train, splits.val, splits.test) == candidates[best_k]

    def test_deterministic_across_runs(self, rng):
        records = synthetic_corpus(60, rng)
        a = dp.generate_split_candidates(records, n_candidates=15, seed=11)
        b = dp.generate_split_candidates(records, n_candidates=15, seed=11)
        assert a == b

    def test_identical_captions_unsplittable(self):
        records = {f"r{i}": ["dog", "barking"] for i in range(10)}
        with pytest.raises(SplitError):
            dp.generate_split_candidates(records, n_candidates=5, seed=0)

    def test_save_load(self, tmp_path, rng):
        records = synthetic_corpus(40, rng)
        splits = dp.generate_split_candidates(records, n_candidates=5, seed=4)
        path = tmp_path / "splits.json"
        splits.save(path)
        assert SplitSet.load(path) == splits


class TestEncodeCaption:
    VOCAB = Vocabulary(["door", "close", "slide", "dog", "bird"])

    def test_short_caption_padded(self):
        encoded = dp.encode_caption(["door", "close", "slide"], self.VOCAB)
        assert encoded.tolist() == [1, 2, 3] + [0] * 8

    def test_long_caption_trimmed(self):
        tokens = ["door", "close", "slide", "dog", "bird"] * 3  # 15 tokens
        encoded = dp.encode_caption(tokens, self.VOCAB)
        assert len(encoded) == 11
        assert encoded.tolist()[:10] == [1, 2, 3, 4, 5, 1, 2, 3, 4, 5]
        assert encoded.tolist()[10] == 0

    def test_empty_caption_is_excluded_record(self):
        with pytest.raises(EmptyCaptionError):
            dp.encode_caption([], self.VOCAB)

    def test_oov_dropped_first(self):
        encoded = dp.encode_caption(["xqzt", "door"], self.VOCAB)
        assert encoded.tolist() == [1] + [0] * 10
        with pytest.raises(EmptyCaptionError):
            dp.encode_caption(["xqzt"], self.VOCAB)

    def test_length_always_eleven(self, rng):
        words = self.VOCAB.content_words()
        for _ in range(50):
            n = int(rng.integers(1, 30))
            tokens = [words[int(i)] for i in rng.integers(0, len(words), size=n)]
            assert len(dp.encode_caption(tokens, self.VOCAB)) == 11


class TestRandomCaptionBaseline:
    VOCAB = Vocabulary([f"w{i}" for i in range(20)])

    def test_lengths_in_range(self, rng):
        lengths = {len(dp.random_caption_baseline(self.VOCAB, rng)) for _ in range(10_000)}
        assert lengths == set(range(1, 11))

    def test_never_emits_eos(self, rng):
        for _ in range(500):
            assert EOS_TOKEN not in dp.random_caption_baseline(self.VOCAB, rng)

    def test_singleton_vocabulary(self, rng):
        vocab = Vocabulary(["dog"])
        for _ in range(20):
            caption = dp.random_caption_baseline(vocab, rng)
            assert set(caption) == {"dog"}

    def test_length_histogram_uniform(self, rng):
        counts = Counter(len(dp.random_caption_baseline(self.VOCAB, rng)) for _ in range(100_000))
        for length in range(1, 11):
            assert abs(counts[length] / 100_000 - 0.1) < 0.005  # 5% of the 0.1 target


class TestRandomInputBaseline:
    def test_output_shape_matches_input_features(self, rng):
        feats = [rng.standard_normal((1289, 64)) for _ in range(3)]
        sample = dp.random_input_baseline(feats, rng)
        assert sample.shape == (1289, 64)

    def test_column_means_within_three_standard_errors(self, rng):
        base = rng.standard_normal((200, 6)) * np.array([1, 2, 3, 4, 5, 6.0]) + 10.0
        feats = [base[:100], base[100:]]
        mean, std = dp.feature_column_stats(feats)
        draws = [dp.random_input_baseline(feats, rng) for _ in range(100)]
        pooled = np.concatenate(draws, axis=0)
        stderr = std / np.sqrt(pooled.shape[0])
        assert np.all(np.abs(pooled.mean(axis=0) - mean) < 3 * stderr + 1e-12)

    def test_zero_variance_column_constant(self, rng):
        feats = [np.column_stack([np.full(50, 2.5), rng.standard_normal(50)])]
        sample = dp.random_input_baseline(feats, rng)
        assert np.all(sample[:, 0] == 2.5)

    def test_no_features_rejected(self, rng):
        with pytest.raises(ValueError):
            dp.random_input_baseline([], rng)


class TestManifest:
    def test_round_trip(self, tmp_path):
        rows = [
            dp.ManifestRow("r1", "/audio/a.wav", "dog barking"),
            dp.ManifestRow("r2", "/audio/b.wav", "rain, heavy!"),
        ]
        path = tmp_path / "manifest.csv"
        dp.write_manifest(rows, path)
        assert dp.read_manifest(path) == rows

    def test_missing_columns_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,caption\nr1,dog\n")
        with pytest.raises(ValueError):
            dp.read_manifest(path)

    def test_word_list(self, tmp_path):
        path = tmp_path / "dict.txt"
        path.write_text("Dog\nbird\n\nrain\n")
        assert dp.load_word_list(path) == {"dog", "bird", "rain"}
