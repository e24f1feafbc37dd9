"""Corpus-level caption metrics: BLEU 1-4, ROUGE-L, METEOR, CIDEr-D.

Candidates and references are plain token sequences; every metric scores
the same tokenization.  BLEU pools clipped n-gram counts over the corpus
(its original corpus-level definition); ROUGE-L, METEOR and CIDEr-D are
per-pair scores averaged over the corpus.

METEOR here matches unigrams exactly and by stem; richer stages (synonyms,
paraphrases) need external linguistic data and can be plugged in as extra
matcher callables.  Reports carry a note to that effect.

Per-pair computations are pure and independent; only CIDEr-D's document
frequencies are a serial pre-pass over the references.
"""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .stem import porter_stem

__all__ = [
    "EmptyCorpusError",
    "EvalPair",
    "make_pairs",
    "bleu_statistics",
    "bleu_n",
    "rouge_l",
    "meteor",
    "cider_d",
    "evaluate_corpus",
    "per_pair_scores",
    "MetricReport",
    "METRIC_NAMES",
]


class EmptyCorpusError(ValueError):
    """A metric was asked to score zero pairs."""


@dataclass(frozen=True)
class EvalPair:
    """One candidate caption with one or more reference captions."""

    candidate: tuple[str, ...]
    references: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "candidate", tuple(self.candidate))
        object.__setattr__(self, "references", tuple(tuple(r) for r in self.references))
        if not self.references:
            raise ValueError("every pair needs at least one reference")


def make_pairs(candidates, references) -> list[EvalPair]:
    """Zip aligned candidate and single-reference token lists into pairs."""
    candidates = list(candidates)
    references = list(references)
    if len(candidates) != len(references):
        raise ValueError(
            f"{len(candidates)} candidates vs {len(references)} references"
        )
    return [EvalPair(tuple(c), (tuple(r),)) for c, r in zip(candidates, references)]


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


# ---------------------------------------------------------------- BLEU


def _effective_ref_len(cand_len: int, references) -> int:
    """Reference length closest to the candidate's; ties go to the shorter."""
    return min((abs(len(r) - cand_len), len(r)) for r in references)[1]


def bleu_statistics(pairs, max_n: int = 4):
    """Corpus-pooled (clipped, total) k-gram counts for k = 1..max_n, plus
    the total candidate length and total effective reference length."""
    clipped = [0] * max_n
    totals = [0] * max_n
    cand_len = 0
    ref_len = 0
    for pair in pairs:
        cand = pair.candidate
        cand_len += len(cand)
        ref_len += _effective_ref_len(len(cand), pair.references)
        for k in range(1, max_n + 1):
            counts = _ngram_counts(cand, k)
            if not counts:
                continue
            ceiling: Counter = Counter()
            for ref in pair.references:
                for gram, count in _ngram_counts(ref, k).items():
                    if count > ceiling[gram]:
                        ceiling[gram] = count
            for gram, count in counts.items():
                clipped[k - 1] += min(count, ceiling[gram])
                totals[k - 1] += count
    return clipped, totals, cand_len, ref_len


def bleu_n(pairs, n: int) -> float:
    """Corpus BLEU with uniform 1/n weights.

    score = BP * exp(sum_k ln(p_k) / n) over the pooled clipped precisions
    p_k; BP = 1 if the candidate corpus is longer than the effective
    reference corpus, else exp(1 - r/c).  Any p_k = 0 gives score 0.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyCorpusError("BLEU of an empty corpus")
    if n not in (1, 2, 3, 4):
        raise ValueError(f"BLEU order must be 1..4, got {n}")
    clipped, totals, cand_len, ref_len = bleu_statistics(pairs, max_n=n)
    if any(c == 0 or t == 0 for c, t in zip(clipped, totals)):
        return 0.0
    log_precision = sum(math.log(c / t) for c, t in zip(clipped, totals)) / n
    brevity = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return brevity * math.exp(log_precision)


# ---------------------------------------------------------------- ROUGE-L


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[-1]))
        prev = cur
    return prev[-1]


def rouge_l(pairs, beta: float = 1.2) -> float:
    """Mean over pairs of the LCS F-measure.

    Per pair: R = LCS/|ref|, P = LCS/|cand|,
    F = (1 + beta^2) R P / (R + beta^2 P) (0 when R + P = 0); the best
    reference counts.  beta = 1.2 weights recall over precision.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyCorpusError("ROUGE-L of an empty corpus")
    beta2 = beta * beta
    scores = []
    for pair in pairs:
        best = 0.0
        for ref in pair.references:
            lcs = _lcs_length(pair.candidate, ref)
            if lcs == 0:
                continue
            recall = lcs / len(ref)
            precision = lcs / len(pair.candidate)
            f = (1.0 + beta2) * recall * precision / (recall + beta2 * precision)
            best = max(best, f)
        scores.append(best)
    return float(np.mean(scores))


# ---------------------------------------------------------------- METEOR

_METEOR_ALPHA = 0.9
_METEOR_GAMMA = 0.5
_METEOR_BETA = 3.0
_ALIGN_BUDGET = 200_000


def _exact_match(c: str, r: str) -> bool:
    return c == r


def _stem_match(c: str, r: str) -> bool:
    return porter_stem(c) == porter_stem(r)


_MATCHERS: dict[str, Callable[[str, str], bool]] = {
    "exact": _exact_match,
    "stem": _stem_match,
}


def meteor(pairs, matchers: Sequence = ("exact", "stem")) -> float:
    """Mean over pairs of the METEOR score under the given match stages.

    Unigrams align one-to-one, maximizing matches m and then minimizing the
    number of contiguous aligned chunks ch.  With P = m/|cand| and
    R = m/|ref|: score = Fmean * (1 - penalty) where
    Fmean = P R / (0.9 P + 0.1 R) and penalty = 0.5 (ch/m)^3.
    Each pair takes its best reference.  Matchers are names ("exact",
    "stem") or callables (cand_word, ref_word) -> bool.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyCorpusError("METEOR of an empty corpus")
    fns = [_MATCHERS[m] if isinstance(m, str) else m for m in matchers]
    scores = [
        max(_meteor_single(pair.candidate, ref, fns) for ref in pair.references)
        for pair in pairs
    ]
    return float(np.mean(scores))


def _meteor_single(cand, ref, fns) -> float:
    if not cand or not ref:
        return 0.0
    matches, chunks = _align(cand, ref, fns)
    if matches == 0:
        return 0.0
    precision = matches / len(cand)
    recall = matches / len(ref)
    fmean = precision * recall / (_METEOR_ALPHA * precision + (1.0 - _METEOR_ALPHA) * recall)
    penalty = _METEOR_GAMMA * (chunks / matches) ** _METEOR_BETA
    return fmean * (1.0 - penalty)


def _align(cand, ref, fns) -> tuple[int, int]:
    """(max matches, min chunks among maximum alignments).

    Exact search over injective alignments with branch-and-bound, visiting
    ref positions that continue the current chunk first.  Past a fixed node
    budget (never reached by caption-length inputs) a deterministic greedy
    alignment stands in.
    """
    allowed = [[j for j, r in enumerate(ref) if any(fn(c, r) for fn in fns)] for c in cand]
    target = _max_matching(allowed, len(ref))
    if target == 0:
        return 0, 0
    n = len(cand)
    remaining = [0] * (n + 1)  # candidate positions >= i with any option
    for i in range(n - 1, -1, -1):
        remaining[i] = remaining[i + 1] + (1 if allowed[i] else 0)
    used = [False] * len(ref)
    state = {"best": n + 1, "visits": 0}

    def search(i: int, count: int, chunks: int, prev_i: int, prev_j: int) -> None:
        if state["visits"] >= _ALIGN_BUDGET or chunks >= state["best"]:
            return
        if count == target:
            state["best"] = chunks
            return
        if i == n or count + min(remaining[i], used.count(False)) < target:
            return
        state["visits"] += 1
        options = allowed[i]
        follow = prev_j + 1 if prev_i == i - 1 else -1
        if follow in options:
            options = [follow] + [j for j in options if j != follow]
        for j in options:
            if not used[j]:
                used[j] = True
                extends = prev_i == i - 1 and j == prev_j + 1
                search(i + 1, count + 1, chunks if extends else chunks + 1, i, j)
                used[j] = False
        search(i + 1, count, chunks, prev_i, prev_j)

    search(0, 0, 0, -2, -2)
    if state["best"] > n:
        return _greedy_align(allowed, len(ref))
    return target, state["best"]


def _max_matching(allowed, n_ref: int) -> int:
    """Maximum bipartite matching size (augmenting paths)."""
    owner = [-1] * n_ref

    def assign(i: int, seen: list[bool]) -> bool:
        for j in allowed[i]:
            if not seen[j]:
                seen[j] = True
                if owner[j] == -1 or assign(owner[j], seen):
                    owner[j] = i
                    return True
        return False

    return sum(1 for i in range(len(allowed)) if assign(i, [False] * n_ref))


def _greedy_align(allowed, n_ref: int) -> tuple[int, int]:
    used = [False] * n_ref
    aligned: list[tuple[int, int]] = []
    for i, options in enumerate(allowed):
        pick = -1
        if aligned and aligned[-1][0] == i - 1 and aligned[-1][1] + 1 in options \
                and not used[aligned[-1][1] + 1]:
            pick = aligned[-1][1] + 1
        else:
            pick = next((j for j in options if not used[j]), -1)
        if pick >= 0:
            used[pick] = True
            aligned.append((i, pick))
    chunks = 0
    for k, (i, j) in enumerate(aligned):
        if k == 0 or aligned[k - 1][0] != i - 1 or aligned[k - 1][1] != j - 1:
            chunks += 1
    return len(aligned), chunks


# ---------------------------------------------------------------- CIDEr-D

_CIDER_SIGMA = 6.0
_CIDER_MAX_N = 4


def cider_d(pairs, sigma: float = _CIDER_SIGMA) -> float:
    """CIDEr-D over the corpus.

    Each pair's reference set is one IDF document; IDF(g) = ln(N / df(g))
    with df floored at 1.  Per n in 1..4 the candidate and reference TF-IDF
    vectors meet in a clipped cosine (numerator min(h_g, r_g) * r_g), scaled
    by a Gaussian penalty exp(-(|c|-|r|)^2 / (2 sigma^2)) on the length
    difference.  Per pair: mean over references, then over n, times 10;
    the corpus score is the mean over pairs.  0/0 cosines are 0, so a
    single-document corpus scores 0 (all IDFs vanish).
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyCorpusError("CIDEr-D of an empty corpus")
    n_docs = len(pairs)
    doc_freq: list[Counter] = [Counter() for _ in range(_CIDER_MAX_N)]
    for pair in pairs:
        for k in range(1, _CIDER_MAX_N + 1):
            grams: set = set()
            for ref in pair.references:
                grams.update(_ngram_counts(ref, k))
            doc_freq[k - 1].update(grams)

    scores = []
    for pair in pairs:
        cand = pair.candidate
        per_n = np.zeros(_CIDER_MAX_N)
        for ref in pair.references:
            delta = len(cand) - len(ref)
            length_penalty = math.exp(-(delta * delta) / (2.0 * sigma * sigma))
            for k in range(1, _CIDER_MAX_N + 1):
                cosine = _clipped_cosine(
                    _ngram_counts(cand, k), _ngram_counts(ref, k), doc_freq[k - 1], n_docs
                )
                per_n[k - 1] += length_penalty * cosine
        per_n /= len(pair.references)
        scores.append(10.0 * float(per_n.mean()))
    return float(np.mean(scores))


def _clipped_cosine(cand_counts, ref_counts, doc_freq, n_docs) -> float:
    if not cand_counts or not ref_counts:
        return 0.0

    def idf(gram):
        return math.log(n_docs / max(doc_freq.get(gram, 0), 1))

    cand_vec = {g: c * idf(g) for g, c in cand_counts.items()}
    ref_vec = {g: c * idf(g) for g, c in ref_counts.items()}
    norm_c = math.sqrt(sum(v * v for v in cand_vec.values()))
    norm_r = math.sqrt(sum(v * v for v in ref_vec.values()))
    if norm_c == 0.0 or norm_r == 0.0:
        return 0.0
    dot = sum(min(v, ref_vec[g]) * ref_vec[g] for g, v in cand_vec.items() if g in ref_vec)
    return dot / (norm_c * norm_r)


# ---------------------------------------------------------------- reports

METRIC_NAMES = ("bleu_1", "bleu_2", "bleu_3", "bleu_4", "rouge_l", "meteor", "cider_d")

_METRIC_FUNCTIONS: dict[str, Callable] = {
    "bleu_1": lambda pairs: bleu_n(pairs, 1),
    "bleu_2": lambda pairs: bleu_n(pairs, 2),
    "bleu_3": lambda pairs: bleu_n(pairs, 3),
    "bleu_4": lambda pairs: bleu_n(pairs, 4),
    "rouge_l": rouge_l,
    "meteor": meteor,
    "cider_d": cider_d,
}


def evaluate_corpus(pairs, metrics: Iterable[str] = METRIC_NAMES) -> dict[str, float]:
    """Score one corpus with the selected metrics: {name: score}."""
    pairs = list(pairs)
    if not pairs:
        raise EmptyCorpusError("cannot evaluate an empty corpus")
    return {name: float(_METRIC_FUNCTIONS[name](pairs)) for name in metrics}


def per_pair_scores(pairs, metrics: Iterable[str] = METRIC_NAMES) -> list[dict[str, float]]:
    """Each pair scored as its own single-pair corpus (diagnostics; note
    that single-document CIDEr-D is 0 by construction)."""
    return [evaluate_corpus([pair], metrics) for pair in pairs]


@dataclass
class MetricReport:
    """Per-metric mean and standard deviation across one or more runs."""

    metrics: dict[str, dict[str, float]]
    runs: int
    notes: dict = field(default_factory=dict)

    @classmethod
    def from_runs(cls, run_scores, notes: dict | None = None) -> "MetricReport":
        runs = list(run_scores)
        if not runs:
            raise EmptyCorpusError("no runs to aggregate")
        stats: dict[str, dict[str, float]] = {}
        for name in runs[0]:
            values = np.array([r[name] for r in runs], dtype=np.float64)
            stats[name] = {"mean": float(values.mean()), "std": float(values.std())}
        header = {
            "meteor_matchers": ["exact", "stem"],
            "meteor_note": "unigram matching uses exact and stem stages only; "
                           "synonym/paraphrase stages are pluggable, not built in",
        }
        if notes:
            header.update(notes)
        return cls(metrics=stats, runs=len(runs), notes=header)

    def to_dict(self) -> dict:
        return {"runs": self.runs, "metrics": self.metrics, "notes": self.notes}
