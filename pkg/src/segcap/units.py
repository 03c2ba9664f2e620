"""Token and unit sequence representations, the run-length codec, text
normalization and corpus statistics."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .errors import EmptySequence, MissingDurations, SegcapError

TokenSeq = tuple  # tuple[str, ...]; kept as a plain alias, tokens are strings

DOMAINS = ("word", "character", "unit")
UNK = "<unk>"


@dataclass(frozen=True)
class Vocabulary:
    domain: str
    symbols: tuple
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise SegcapError(f"unknown token domain {self.domain!r}")
        symbols = tuple(self.symbols)
        object.__setattr__(self, "symbols", symbols)
        index = {s: i for i, s in enumerate(symbols)}
        if len(index) != len(symbols):
            raise SegcapError("vocabulary symbols must be unique")
        object.__setattr__(self, "_index", index)

    @property
    def size(self) -> int:
        return len(self.symbols)

    def __len__(self):
        return len(self.symbols)

    def __contains__(self, symbol):
        return symbol in self._index

    def index(self, symbol: str) -> int:
        return self._index[symbol]

    def symbol(self, index: int) -> str:
        return self.symbols[index]


@dataclass(frozen=True)
class FrameSeq:
    """Frame-rate unit indices; ``frame_shift_ms`` is metadata only."""

    tokens: tuple
    frame_shift_ms: int = 40

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        if self.frame_shift_ms <= 0:
            raise SegcapError("frame_shift_ms must be positive")
        if any(t < 0 for t in self.tokens):
            raise SegcapError("unit indices must be nonnegative")

    def __len__(self):
        return len(self.tokens)


@dataclass(frozen=True)
class RleSeq:
    """Runs of ``(unit, duration)``; durations are all ``None`` or all >= 1."""

    runs: tuple

    def __post_init__(self):
        runs = tuple((int(t), None if d is None else int(d)) for t, d in self.runs)
        object.__setattr__(self, "runs", runs)
        for (a, _), (b, _) in zip(runs, runs[1:]):
            if a == b:
                raise SegcapError(f"consecutive runs share unit {a}")
        has = [d is not None for _, d in runs]
        if any(has) and not all(has):
            raise SegcapError("durations must be present on every run or none")
        if any(d is not None and d < 1 for _, d in runs):
            raise SegcapError("run durations must be >= 1")

    @property
    def tokens(self) -> tuple:
        return tuple(t for t, _ in self.runs)

    @property
    def durations(self) -> Optional[tuple]:
        if not self.runs or self.runs[0][1] is None:
            return None
        return tuple(d for _, d in self.runs)

    @property
    def has_durations(self) -> bool:
        return bool(self.runs) and self.runs[0][1] is not None

    def __len__(self):
        return len(self.runs)


def rle_encode(f: FrameSeq | Sequence[int], keep_durations: bool = False) -> RleSeq:
    tokens = f.tokens if isinstance(f, FrameSeq) else tuple(f)
    if not tokens:
        raise EmptySequence("cannot run-length encode an empty sequence")
    runs = []
    current, length = tokens[0], 1
    for t in tokens[1:]:
        if t == current:
            length += 1
        else:
            runs.append((current, length if keep_durations else None))
            current, length = t, 1
    runs.append((current, length if keep_durations else None))
    return RleSeq(tuple(runs))


def rle_expand(r: RleSeq, frame_shift_ms: int = 40) -> FrameSeq:
    if r.runs and not r.has_durations:
        raise MissingDurations("run-length sequence carries no durations")
    out = []
    for t, d in r.runs:
        out.extend([t] * d)
    return FrameSeq(tuple(out), frame_shift_ms)


def collapse_repeats(tokens: Sequence) -> tuple:
    """Drop consecutive duplicates from any token sequence (empty stays empty)."""
    out = []
    for t in tokens:
        if not out or out[-1] != t:
            out.append(t)
    return tuple(out)


def normalize_text(raw: str) -> TokenSeq:
    """Lower-case, delete non-alphanumerics in place, split on whitespace.

    >>> normalize_text("A Man's hat!")
    ('a', 'mans', 'hat')
    """
    kept = "".join(ch for ch in raw.lower() if ch.isalnum() or ch.isspace())
    return tuple(kept.split())


def prune_vocabulary(
    corpus: Iterable[Sequence[str]], min_count: int = 5, domain: str = "unit"
) -> tuple[Vocabulary, list]:
    """Keep symbols seen at least ``min_count`` times; map the rest to UNK.

    UNK always sits at index 0. Retained symbols follow in descending
    frequency, ties broken by symbol.
    """
    if min_count < 1:
        raise SegcapError("min_count must be >= 1")
    corpus = [tuple(str(t) for t in seq) for seq in corpus]
    counts = Counter(t for seq in corpus for t in seq)
    kept = sorted((s for s, c in counts.items() if c >= min_count and s != UNK),
                  key=lambda s: (-counts[s], s))
    vocab = Vocabulary(domain, (UNK, *kept))
    remapped = [tuple(t if t in vocab else UNK for t in seq) for seq in corpus]
    return vocab, remapped


@dataclass(frozen=True)
class Utterance:
    id: str
    tokens: TokenSeq
    duration_s: Optional[float] = None
    speaker_id: Optional[str] = None

    def __post_init__(self):
        if not self.id:
            raise SegcapError("utterance id must be nonempty")
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.duration_s is not None and self.duration_s < 0:
            raise SegcapError(f"utterance {self.id!r} has negative duration")


@dataclass(frozen=True)
class CorpusStats:
    num_utterances: int = 0
    num_speakers: int = 0
    duration_mean_s: float = 0.0
    duration_std_s: float = 0.0
    words_per_utterance: float = 0.0
    words_per_second: float = 0.0
    total_duration_hr: float = 0.0
    vocabulary_size: int = 0


def corpus_stats(
    utterances: Iterable[Utterance], duration_exclusion_s: Optional[float] = None
) -> CorpusStats:
    """Dataset-level statistics in the style of a speech-corpus summary table.

    Counts, word statistics and total duration cover every utterance. The
    duration mean/std and words-per-second only use utterances whose duration
    is known and not above ``duration_exclusion_s``.
    """
    utterances = sorted(utterances, key=lambda u: u.id)
    if not utterances:
        return CorpusStats()
    words = [normalize_text(" ".join(u.tokens)) for u in utterances]
    n_words = sum(len(w) for w in words)
    vocab = {t for w in words for t in w}
    speakers = {u.speaker_id for u in utterances if u.speaker_id is not None}
    total_s = math.fsum(u.duration_s for u in utterances if u.duration_s is not None)

    timed = [
        (u.duration_s, len(w))
        for u, w in zip(utterances, words)
        if u.duration_s is not None
        and (duration_exclusion_s is None or u.duration_s <= duration_exclusion_s)
    ]
    mean = std = wps = 0.0
    if timed:
        durs = [d for d, _ in timed]
        mean = math.fsum(durs) / len(durs)
        std = math.sqrt(math.fsum((d - mean) ** 2 for d in durs) / len(durs))
        rates = [n / d for d, n in timed if d > 0]
        wps = math.fsum(rates) / len(rates) if rates else 0.0

    return CorpusStats(
        num_utterances=len(utterances),
        num_speakers=len(speakers),
        duration_mean_s=mean,
        duration_std_s=std,
        words_per_utterance=n_words / len(utterances),
        words_per_second=wps,
        total_duration_hr=total_s / 3600.0,
        vocabulary_size=len(vocab),
    )
