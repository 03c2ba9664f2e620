"""Token-generic corpus caption metrics.

Every metric consumes plain token tuples, so the same code scores words,
characters and discrete speech units. Corpus means use ``math.fsum`` so the
result does not depend on instance order.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Sequence

from .errors import EmptyCorpus, SegcapError
from .parallel import parallel_map

MAX_N = 4


@dataclass(frozen=True)
class EvalInstance:
    image_id: str
    candidate: tuple
    references: tuple

    def __post_init__(self):
        object.__setattr__(self, "candidate", tuple(self.candidate))
        object.__setattr__(self, "references", tuple(tuple(r) for r in self.references))
        if not self.references:
            raise SegcapError(f"image {self.image_id!r} has no references")


@dataclass(frozen=True)
class MetricReport:
    bleu4: float
    meteor: float
    rouge_l: float
    cider: float

    def as_dict(self):
        return {"bleu4": self.bleu4, "meteor": self.meteor,
                "rouge_l": self.rouge_l, "cider": self.cider}


def ngram_profile(tokens: Sequence, max_n: int = MAX_N) -> dict[int, Counter]:
    """Counts of every n-gram (as a tuple) for n = 1..max_n."""
    tokens = tuple(tokens)
    return {
        n: Counter(tokens[i:i + n] for i in range(len(tokens) - n + 1))
        for n in range(1, max_n + 1)
    }


def _check(instances) -> list:
    instances = list(instances)
    if not instances:
        raise EmptyCorpus("metric needs at least one instance")
    return instances


# BLEU ----------------------------------------------------------------------

def _closest_ref_len(cand_len: int, refs) -> int:
    return min((abs(len(r) - cand_len), len(r)) for r in refs)[1]


def _bleu_stats(inst: EvalInstance):
    cand = ngram_profile(inst.candidate)
    refs = [ngram_profile(r) for r in inst.references]
    matches, totals = [], []
    for n in range(1, MAX_N + 1):
        max_ref = Counter()
        for rp in refs:
            max_ref |= rp[n]
        matches.append(sum(min(c, max_ref[g]) for g, c in cand[n].items()))
        totals.append(max(len(inst.candidate) - n + 1, 0))
    return matches, totals, len(inst.candidate), _closest_ref_len(len(inst.candidate), inst.references)


def bleu4(instances: Iterable[EvalInstance], threads: int = 1) -> float:
    """Unsmoothed corpus BLEU-4 with closest-reference brevity penalty."""
    stats = parallel_map(_bleu_stats, _check(instances), threads)
    matches = [sum(s[0][k] for s in stats) for k in range(MAX_N)]
    totals = [sum(s[1][k] for s in stats) for k in range(MAX_N)]
    c = sum(s[2] for s in stats)
    r = sum(s[3] for s in stats)
    if c == 0 or any(m == 0 for m in matches):
        return 0.0
    log_p = math.fsum(math.log(m / t) for m, t in zip(matches, totals)) / MAX_N
    bp = min(0.0, 1.0 - r / c)
    return math.exp(log_p + bp)


# ROUGE-L -------------------------------------------------------------------

def lcs_length(a: Sequence, b: Sequence) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def _rouge_one(cand, ref, beta: float) -> float:
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    return (1 + beta ** 2) * p * r / (r + beta ** 2 * p)


def rouge_l(instances: Iterable[EvalInstance], beta: float = 1.2, threads: int = 1) -> float:
    def score(inst):
        return max(_rouge_one(inst.candidate, ref, beta) for ref in inst.references)

    instances = _check(instances)
    return math.fsum(parallel_map(score, instances, threads)) / len(instances)


# CIDEr ---------------------------------------------------------------------

def document_frequency(instances: Sequence[EvalInstance]) -> Counter:
    """Number of images whose reference set contains each n-gram."""
    df = Counter()
    for inst in instances:
        seen = set()
        for ref in inst.references:
            for grams in ngram_profile(ref).values():
                seen.update(grams)
        df.update(seen)
    return df


def _tfidf(profile: dict, df: Counter, log_n: float) -> list[dict]:
    return [
        {g: c * (log_n - math.log(max(1.0, df[g]))) for g, c in profile[n].items()}
        for n in range(1, MAX_N + 1)
    ]


def _cosine(u: dict, v: dict) -> float:
    nu = math.sqrt(math.fsum(x * x for x in u.values()))
    nv = math.sqrt(math.fsum(x * x for x in v.values()))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    dot = math.fsum(x * v[g] for g, x in u.items() if g in v)
    return dot / (nu * nv)


def cider(instances: Iterable[EvalInstance], threads: int = 1) -> float:
    """Plain CIDEr (no length penalty, no clipping), unscaled.

    Document frequencies are taken over reference sets, one document per
    image; a zero TF-IDF vector has cosine 0 against anything.
    """
    instances = _check(instances)
    df = document_frequency(instances)
    log_n = math.log(len(instances))

    def score(inst):
        cand = _tfidf(ngram_profile(inst.candidate), df, log_n)
        per_ref = []
        for ref in inst.references:
            rv = _tfidf(ngram_profile(ref), df, log_n)
            per_ref.append(math.fsum(_cosine(cand[k], rv[k]) for k in range(MAX_N)) / MAX_N)
        return math.fsum(per_ref) / len(per_ref)

    return math.fsum(parallel_map(score, instances, threads)) / len(instances)


# METEOR (exact matching only) ------------------------------------------------

ALIGN_STATE_LIMIT = 200_000


class _SearchBudgetExceeded(Exception):
    pass


def _exact_alignment(cand: Sequence, ref: Sequence) -> tuple[int, int]:
    """Return (matches, chunks) of a max-match, min-chunk unigram alignment.

    Exhaustive memoized search; falls back to greedy longest-chunk-first
    alignment when the reachable reference masks or the visited states
    exceed ``ALIGN_STATE_LIMIT``.
    """
    cc, rc = Counter(cand), Counter(ref)
    quota = {w: min(cc[w], rc[w]) for w in cc}
    total = sum(quota.values())
    if total == 0:
        return 0, 0
    # distinct reference masks the search could visit; skip it when hopeless
    masks = 1
    for w, q in quota.items():
        masks *= sum(math.comb(rc[w], k) for k in range(q + 1))
    if masks > ALIGN_STATE_LIMIT:
        return total, _greedy_chunks(cand, ref)
    relevant = [j for j, w in enumerate(ref) if quota.get(w, 0) > 0]
    bit = {j: 1 << k for k, j in enumerate(relevant)}
    ref_pos = {}
    for j in relevant:
        ref_pos.setdefault(ref[j], []).append(j)
    remaining = [0] * len(cand)
    seen = Counter()
    for i in range(len(cand) - 1, -1, -1):
        seen[cand[i]] += 1
        remaining[i] = seen[cand[i]]

    NEG = -1
    states = 0

    @lru_cache(maxsize=None)
    def best(i: int, mask: int, prev: int) -> int:
        nonlocal states
        states += 1
        if states > ALIGN_STATE_LIMIT:
            raise _SearchBudgetExceeded
        if i == len(cand):
            return 0
        w = cand[i]
        q = quota.get(w, 0)
        used = sum(1 for j in ref_pos.get(w, ()) if mask & bit[j])
        need = q - used
        result = NEG
        if remaining[i] - 1 >= need:
            sub = best(i + 1, mask, -1)
            result = max(result, sub)
        if need > 0:
            for j in ref_pos[w]:
                if mask & bit[j]:
                    continue
                sub = best(i + 1, mask | bit[j], j)
                if sub != NEG:
                    result = max(result, sub + (1 if prev >= 0 and j == prev + 1 else 0))
        return result

    try:
        cont = best(0, 0, -1)
    except _SearchBudgetExceeded:
        return total, _greedy_chunks(cand, ref)
    finally:
        best.cache_clear()
    return total, total - cont


def _greedy_chunks(cand: Sequence, ref: Sequence) -> int:
    free_c = [True] * len(cand)
    free_r = [True] * len(ref)
    chunks = 0
    while True:
        best_len, best_at = 0, None
        for i in range(len(cand)):
            if not free_c[i]:
                continue
            for j in range(len(ref)):
                k = 0
                while (i + k < len(cand) and j + k < len(ref) and free_c[i + k]
                       and free_r[j + k] and cand[i + k] == ref[j + k]):
                    k += 1
                if k > best_len:
                    best_len, best_at = k, (i, j)
        if best_len == 0:
            return chunks
        i, j = best_at
        for k in range(best_len):
            free_c[i + k] = free_r[j + k] = False
        chunks += 1


def meteor_exact_sentence(cand: Sequence, ref: Sequence, alpha: float = 0.9,
                          beta_frag: float = 3.0, gamma: float = 0.5) -> float:
    matches, chunks = _exact_alignment(tuple(cand), tuple(ref))
    if matches == 0:
        return 0.0
    p, r = matches / len(cand), matches / len(ref)
    f_mean = p * r / (alpha * p + (1 - alpha) * r)
    penalty = gamma * (chunks / matches) ** beta_frag
    return f_mean * (1 - penalty)


def meteor_exact(instances: Iterable[EvalInstance], alpha: float = 0.9,
                 beta_frag: float = 3.0, gamma: float = 0.5, threads: int = 1) -> float:
    def score(inst):
        return max(meteor_exact_sentence(inst.candidate, r, alpha, beta_frag, gamma)
                   for r in inst.references)

    instances = _check(instances)
    return math.fsum(parallel_map(score, instances, threads)) / len(instances)


METRICS: dict[str, Callable] = {
    "bleu4": bleu4,
    "meteor": meteor_exact,
    "rouge": rouge_l,
    "cider": cider,
}


def evaluate(instances: Iterable[EvalInstance], metrics: Sequence[str] = tuple(METRICS),
             threads: int = 1) -> dict[str, float]:
    instances = _check(instances)
    unknown = [m for m in metrics if m not in METRICS]
    if unknown:
        raise SegcapError(f"unknown metric(s): {', '.join(unknown)}")
    return {m: METRICS[m](instances, threads=threads) for m in metrics}


def metric_report(instances: Iterable[EvalInstance], threads: int = 1) -> MetricReport:
    s = evaluate(instances, threads=threads)
    return MetricReport(bleu4=s["bleu4"], meteor=s["meteor"], rouge_l=s["rouge"], cider=s["cider"])
