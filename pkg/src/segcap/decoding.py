"""Decoding strategies over conditional autoregressive token models.

Token ids index ``model.vocabulary``; ``model.bos`` and ``model.eos`` are
reserved ids. A prefix never contains BOS or EOS. Decoding runs for at most
``max_len`` steps and every step emits one token, EOS included, so a
terminated hypothesis carries at most ``max_len - 1`` content tokens.

Ties are always broken toward the lowest token id (lexicographically smallest
token sequence for whole hypotheses).
"""
from __future__ import annotations

import hashlib
import math
from abc import ABC, abstractmethod
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import EmptyCorpus, ModelContract, SegcapError, TooLarge

BOS = "<s>"
EOS = "</s>"
NORM_TOL = 1e-9
BRUTE_FORCE_LIMIT = 10 ** 7

# Target lengths per token domain (fraction of truncated training targets
# stays under 10% at these values).
DEFAULT_MAX_LEN = {
    "word": 18,
    "character": 70,
    "vq3": 100,
    "vq2": 200,
    "wvq": 110,
    "vq3_norle": 160,
    "unit": 100,
}


class SequenceModel(ABC):
    vocabulary: tuple
    bos: int
    eos: int
    max_len: int

    @abstractmethod
    def next_logprobs(self, context: Hashable, prefix: tuple) -> np.ndarray:
        """Log-probabilities of the next token given ``context`` and ``prefix``."""

    @property
    def size(self) -> int:
        return len(self.vocabulary)

    def symbols(self, tokens: Iterable[int]) -> tuple:
        return tuple(self.vocabulary[t] for t in tokens)

    def ids(self, symbols: Iterable[str]) -> tuple:
        index = {s: i for i, s in enumerate(self.vocabulary)}
        return tuple(index[s] for s in symbols)


def checked_logprobs(model: SequenceModel, context, prefix: tuple) -> np.ndarray:
    lp = np.asarray(model.next_logprobs(context, prefix), dtype=np.float64)
    if lp.shape != (model.size,):
        raise ModelContract(f"expected {model.size} log-probabilities, got shape {lp.shape}")
    if np.isnan(lp).any() or np.isposinf(lp).any():
        raise ModelContract("log-probabilities must be finite or -inf")
    total = logsumexp(lp)
    if not abs(math.expm1(total)) <= NORM_TOL:
        raise ModelContract(f"next-token distribution sums to {math.exp(total)!r}, not 1")
    return lp


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple
    logprob: float
    terminated: bool

    def __len__(self):
        return len(self.tokens)


def rescore(model: SequenceModel, context, tokens: Sequence[int], terminated: bool) -> float:
    """Sum of per-step model log-probabilities, EOS step included if terminated."""
    total = 0.0
    prefix = ()
    for t in tokens:
        total += float(checked_logprobs(model, context, prefix)[t])
        prefix += (t,)
    if terminated:
        total += float(checked_logprobs(model, context, prefix)[model.eos])
    return total


def _max_len(model, max_len):
    n = model.max_len if max_len is None else max_len
    if n < 1:
        raise SegcapError("max_len must be >= 1")
    return n


def greedy_decode(model: SequenceModel, context, max_len: Optional[int] = None) -> Hypothesis:
    max_len = _max_len(model, max_len)
    prefix, score = (), 0.0
    for _ in range(max_len):
        lp = checked_logprobs(model, context, prefix)
        tok = int(np.argmax(lp))
        score += float(lp[tok])
        if tok == model.eos:
            return Hypothesis(prefix, score, True)
        prefix += (tok,)
    return Hypothesis(prefix, score, False)


def _rank_key(item):
    score, tokens = item[0], item[1]
    return (-score, tokens)


def beam_search(model: SequenceModel, context, beam_size: int, n_out: int = 1,
                max_len: Optional[int] = None) -> list[Hypothesis]:
    """Plain log-probability beam search with a finished pool.

    Each step ranks every extension of the active beam; EOS extensions
    inside the top ``beam_size`` move to the finished pool and the best
    ``beam_size`` non-EOS extensions form the next beam. Search stops early
    once ``n_out`` finished hypotheses beat every active one (scores only
    fall). If fewer than ``n_out`` hypotheses finish, the best unfinished
    ones at ``max_len`` fill the remainder.
    """
    if beam_size < 1:
        raise SegcapError("beam_size must be >= 1")
    if not 1 <= n_out <= beam_size:
        raise SegcapError("n_out must be in [1, beam_size]")
    max_len = _max_len(model, max_len)
    active = [(0.0, ())]
    finished: list[tuple[float, tuple]] = []
    for _ in range(max_len):
        extensions = []
        for score, prefix in active:
            lp = checked_logprobs(model, context, prefix)
            for tok in np.flatnonzero(np.isfinite(lp)):
                tok = int(tok)
                extensions.append((score + float(lp[tok]), prefix + (tok,)))
        extensions.sort(key=_rank_key)
        active = []
        for rank, (score, tokens) in enumerate(extensions):
            if tokens[-1] == model.eos:
                if rank < beam_size:
                    finished.append((score, tokens[:-1]))
            elif len(active) < beam_size:
                active.append((score, tokens))
            if rank >= beam_size - 1 and len(active) == beam_size:
                break
        finished.sort(key=_rank_key)
        if not active:
            break
        if len(finished) >= n_out and finished[n_out - 1][0] >= active[0][0]:
            break
    out = [Hypothesis(t, s, True) for s, t in finished[:n_out]]
    for s, t in active[: n_out - len(out)]:
        out.append(Hypothesis(t, s, False))
    return out


def _stable_int(value) -> int:
    digest = hashlib.blake2b(repr(value).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def sample_rng(seed: int, context, index: int) -> np.random.Generator:
    """Generator fully determined by (seed, context, sample index)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), _stable_int(context), int(index)]))


def truncated_distribution(lp: np.ndarray, t: float, top_k: Optional[int]):
    """Temperature first, then top-k. Returns (kept ids ascending, probs)."""
    finite = np.isfinite(lp)
    scaled = np.where(finite, lp / t, -np.inf)
    if top_k is not None and top_k < int(finite.sum()):
        order = np.lexsort((np.arange(len(lp)), -scaled))
        keep = np.sort(order[:top_k])
    else:
        keep = np.flatnonzero(finite)
    logits = scaled[keep]
    probs = np.exp(logits - logsumexp(logits))
    return keep, probs / probs.sum()


def _sample_one(model, context, t, top_k, rng, max_len) -> Hypothesis:
    prefix, score = (), 0.0
    for _ in range(max_len):
        lp = checked_logprobs(model, context, prefix)
        if t == 0:
            tok = int(np.argmax(lp))
        else:
            keep, probs = truncated_distribution(lp, t, top_k)
            u = rng.random()
            pos = int(np.searchsorted(np.cumsum(probs), u, side="right"))
            tok = int(keep[min(pos, len(keep) - 1)])
        score += float(lp[tok])
        if tok == model.eos:
            return Hypothesis(prefix, score, True)
        prefix += (tok,)
    return Hypothesis(prefix, score, False)


def sample_decode(model: SequenceModel, context, t: float = 1.0, top_k: Optional[int] = None,
                  n_out: int = 1, seed: int = 0, max_len: Optional[int] = None,
                  start_index: int = 0) -> list[Hypothesis]:
    """Draw ``n_out`` i.i.d. sequences with temperature ``t`` and top-k truncation.

    ``top_k=None`` keeps the full vocabulary; ``t == 0`` decodes greedily.
    Sample ``i`` depends only on ``(seed, context, start_index + i)``.
    """
    if t < 0:
        raise SegcapError("temperature must be >= 0")
    if top_k is not None and top_k < 1:
        raise SegcapError("top_k must be >= 1")
    max_len = _max_len(model, max_len)
    return [
        _sample_one(model, context, t, top_k, sample_rng(seed, context, start_index + i), max_len)
        for i in range(n_out)
    ]


def brute_force_mode(model: SequenceModel, context, max_len: Optional[int] = None) -> Hypothesis:
    """Exact most probable EOS-terminated sequence of at most ``max_len`` steps.

    Depth-first enumeration with bound pruning; the bound is exact because
    log-probabilities never increase a partial score.
    """
    max_len = _max_len(model, max_len)
    content = model.size - 1 - (model.bos != model.eos)
    space = sum(content ** k for k in range(max_len))
    if space > BRUTE_FORCE_LIMIT:
        raise TooLarge(f"{space} sequences exceed the enumeration limit {BRUTE_FORCE_LIMIT}")

    best = [-math.inf, None]

    def visit(prefix, score):
        lp = checked_logprobs(model, context, prefix)
        end = score + float(lp[model.eos])
        if end > best[0] or (end == best[0] and best[1] is not None and prefix < best[1]):
            best[0], best[1] = end, prefix
        if len(prefix) + 1 >= max_len:
            return
        for tok in range(model.size):
            if tok in (model.eos, model.bos) or not np.isfinite(lp[tok]):
                continue
            s = score + float(lp[tok])
            if s < best[0]:
                continue
            visit(prefix + (tok,), s)

    visit((), 0.0)
    if best[1] is None:
        raise SegcapError("model assigns zero probability to every terminated sequence")
    return Hypothesis(best[1], best[0], True)


# Loop diagnostics --------------------------------------------------------------

@dataclass(frozen=True)
class LoopReport:
    looping: bool
    period: int = 0
    repetitions: int = 0
    loop_fraction: float = 0.0
    truncated_at_max_len: bool = False


def detect_loops(seq: Sequence, min_reps: int = 3, max_period: int = 8,
                 max_len: Optional[int] = None) -> LoopReport:
    """Find a trailing cycle: ``min_reps`` or more full copies of a p-gram.

    Among periods ``p <= max_period`` that qualify, the one covering the
    longest suffix wins; equal coverage goes to the smaller period.
    """
    seq = tuple(seq)
    truncated = max_len is not None and len(seq) >= max_len
    best = None
    for p in range(1, min(max_period, len(seq) // max(min_reps, 1)) + 1):
        block = seq[-p:]
        reps = 1
        while (reps + 1) * p <= len(seq) and seq[-(reps + 1) * p: -reps * p] == block:
            reps += 1
        if reps >= min_reps and (best is None or reps * p > best[1] * best[0]):
            best = (p, reps)
    if best is None:
        return LoopReport(False, truncated_at_max_len=truncated)
    p, reps = best
    return LoopReport(True, p, reps, reps * p / len(seq), truncated)


# Add-alpha n-gram model ---------------------------------------------------------

@dataclass(eq=False)
class NGramModel(SequenceModel):
    """Per-context add-alpha n-gram model.

    Contexts unseen at fit time use counts pooled over all contexts. BOS is
    id 0 and EOS the last id, so zero-count ties resolve toward continuing
    rather than stopping.
    """

    order: int
    alpha: float
    vocabulary: tuple
    counts: dict  # context -> {history ids: np.ndarray of counts}
    max_len: int = 100
    pooled: dict = field(init=False, repr=False)
    _cache: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        self.vocabulary = tuple(self.vocabulary)
        if self.vocabulary[0] != BOS or self.vocabulary[-1] != EOS:
            raise SegcapError("vocabulary must start with BOS and end with EOS")
        self.bos, self.eos = 0, len(self.vocabulary) - 1
        pooled = defaultdict(lambda: np.zeros(len(self.vocabulary)))
        for table in self.counts.values():
            for hist, row in table.items():
                pooled[hist] = pooled[hist] + row
        self.pooled = dict(pooled)

    def history(self, prefix: tuple) -> tuple:
        if self.order == 1:
            return ()
        padded = (self.bos,) * (self.order - 1) + tuple(prefix)
        return padded[-(self.order - 1):]

    def next_logprobs(self, context, prefix):
        hist = self.history(prefix)
        key = (context, hist)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        table = self.counts.get(context, self.pooled)
        row = table.get(hist)
        v = len(self.vocabulary) - 1
        probs = np.full(len(self.vocabulary), self.alpha)
        if row is not None:
            probs = probs + row
        probs[self.bos] = 0.0
        with np.errstate(divide="ignore"):
            lp = np.log(probs) - math.log(self.alpha * v + (row.sum() if row is not None else 0.0))
        lp.setflags(write=False)
        self._cache[key] = lp
        return lp

    def to_dict(self) -> dict:
        contexts = {}
        for ctx in sorted(self.counts, key=str):
            rows = []
            for hist in sorted(self.counts[ctx]):
                row = self.counts[ctx][hist]
                nz = {self.vocabulary[i]: int(row[i]) for i in np.flatnonzero(row)}
                rows.append([list(self.symbols(hist)), nz])
            contexts[str(ctx)] = rows
        return {
            "format": "segcap-ngram",
            "order": self.order,
            "alpha": self.alpha,
            "max_len": self.max_len,
            "vocabulary": list(self.vocabulary),
            "contexts": contexts,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NGramModel":
        if data.get("format") != "segcap-ngram":
            raise SegcapError("not a segcap n-gram model file")
        vocab = tuple(data["vocabulary"])
        index = {s: i for i, s in enumerate(vocab)}
        counts = {}
        for ctx, rows in data["contexts"].items():
            table = {}
            for hist, nz in rows:
                row = np.zeros(len(vocab))
                for sym, c in nz.items():
                    row[index[sym]] = c
                table[tuple(index[s] for s in hist)] = row
            counts[ctx] = table
        return cls(int(data["order"]), float(data["alpha"]), vocab, counts,
                   int(data.get("max_len", 100)))


def fit_ngram_model(corpus: Iterable[tuple[Hashable, Sequence[str]]], order: int = 3,
                    alpha: float = 0.01, max_len: int = 100) -> NGramModel:
    """Count-based per-context n-gram model with add-alpha smoothing."""
    if order < 1:
        raise SegcapError("order must be >= 1")
    if alpha <= 0:
        raise SegcapError("alpha must be > 0")
    corpus = [(ctx, tuple(str(t) for t in seq)) for ctx, seq in corpus]
    if not corpus:
        raise EmptyCorpus("cannot fit a model on an empty corpus")
    symbols = sorted({t for _, seq in corpus for t in seq} - {BOS, EOS})
    vocab = (BOS, *symbols, EOS)
    index = {s: i for i, s in enumerate(vocab)}
    counts: dict = {}
    for ctx, seq in corpus:
        table = counts.setdefault(ctx, {})
        ids = (0,) * (order - 1) + tuple(index[t] for t in seq) + (len(vocab) - 1,)
        for i in range(order - 1, len(ids)):
            hist = ids[i - order + 1:i] if order > 1 else ()
            row = table.get(hist)
            if row is None:
                row = table[hist] = np.zeros(len(vocab))
            row[ids[i]] += 1
    return NGramModel(order, alpha, vocab, counts, max_len)


def next_token_entropy(model: SequenceModel, data: Iterable[tuple[Hashable, Sequence[int]]]) -> float:
    """Mean entropy (nats) of the model's next-token distributions along
    teacher-forced prefixes of ``data`` (EOS step included)."""
    values = []
    for ctx, seq in data:
        seq = tuple(seq)
        for i in range(len(seq) + 1):
            lp = model.next_logprobs(ctx, seq[:i])
            p = np.exp(lp)
            values.append(-float(np.sum(p[p > 0] * lp[p > 0])))
    if not values:
        raise EmptyCorpus("no prefixes to measure")
    return math.fsum(values) / len(values)


# Configuration -------------------------------------------------------------------

@dataclass(frozen=True)
class DecodeConfig:
    method: str = "beam"
    beam_size: int = 5
    temperature: float = 1.0
    top_k: Optional[int] = None
    n_out: int = 1
    seed: int = 0
    max_len: Optional[int] = None

    def __post_init__(self):
        if self.method not in ("greedy", "beam", "sample"):
            raise SegcapError(f"unknown decode method {self.method!r}")
        if self.beam_size < 1 or self.n_out < 1:
            raise SegcapError("beam_size and n_out must be >= 1")
        if self.temperature < 0:
            raise SegcapError("temperature must be >= 0")
        if self.top_k is not None and self.top_k < 1:
            raise SegcapError("top_k must be >= 1")
        if self.method == "beam" and self.n_out > self.beam_size:
            raise SegcapError("n_out must not exceed beam_size")

    @property
    def label(self) -> str:
        if self.method == "beam":
            return f"beam{self.beam_size}"
        if self.method == "greedy":
            return "greedy"
        k = "all" if self.top_k is None else self.top_k
        return f"sample_t{self.temperature:g}_k{k}"


def decode(model: SequenceModel, context, config: DecodeConfig) -> list[Hypothesis]:
    if config.method == "greedy":
        return [greedy_decode(model, context, config.max_len)]
    if config.method == "beam":
        return beam_search(model, context, config.beam_size, config.n_out, config.max_len)
    return sample_decode(model, context, config.temperature, config.top_k, config.n_out,
                         config.seed, config.max_len)
