"""SPICE-style F-scores over pre-parsed proposition sets, including the
multi-candidate union score (M-SPICE) and its average/oracle baselines.

A proposition is a 1-3 tuple of lowercase strings: ``(object,)``,
``(object, attribute)`` or ``(subject, relation, object)``. Bags use set
semantics and elements are matched by exact string equality.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import EmptyCandidates, EmptyReferences, InsufficientCandidates, SegcapError
from .parallel import parallel_map

MODES = ("single", "avg", "oracle", "m_spice")


def proposition(elements: Iterable[str]) -> tuple:
    prop = tuple(str(e).strip().lower() for e in elements)
    if not 1 <= len(prop) <= 3:
        raise SegcapError(f"proposition arity must be 1-3, got {len(prop)}: {prop!r}")
    if any(not e for e in prop):
        raise SegcapError(f"proposition has an empty element: {prop!r}")
    return prop


def bag(props: Iterable[Iterable[str]]) -> frozenset:
    """Build a proposition bag; duplicates collapse and case is folded."""
    return frozenset(proposition(p) for p in props)


def prf(ref: frozenset, cand: frozenset) -> tuple[float, float, float]:
    """(F1, precision, recall); an empty side scores 0."""
    if not ref or not cand:
        return 0.0, 0.0, 0.0
    hit = len(ref & cand)
    if hit == 0:
        return 0.0, 0.0, 0.0
    p, r = hit / len(cand), hit / len(ref)
    return 2 * p * r / (p + r), p, r


def f1(ref: frozenset, cand: frozenset) -> float:
    return prf(ref, cand)[0]


def union_refs(bags: Sequence[frozenset]) -> frozenset:
    if not bags:
        raise EmptyReferences("need at least one reference bag")
    return frozenset().union(*bags)


def _nonempty(candidates) -> list:
    candidates = list(candidates)
    if not candidates:
        raise EmptyCandidates("need at least one candidate bag")
    return candidates


def avg_spice(refs: frozenset, candidates: Sequence[frozenset]) -> float:
    candidates = _nonempty(candidates)
    return math.fsum(f1(refs, c) for c in candidates) / len(candidates)


def oracle_spice(refs: frozenset, candidates: Sequence[frozenset]) -> float:
    return max(f1(refs, c) for c in _nonempty(candidates))


def m_spice(refs: frozenset, candidates: Sequence[frozenset]) -> tuple[float, float, float]:
    """F1, precision and recall of the union of all candidate propositions."""
    return prf(refs, frozenset().union(*_nonempty(candidates)))


def score_candidates(refs: frozenset, candidates: Sequence[frozenset], mode: str):
    """(F1, precision, recall) of one image's candidate set under ``mode``.

    For ``avg`` the precision/recall are means over candidates; for
    ``oracle`` they belong to the first best-scoring candidate.
    """
    candidates = _nonempty(candidates)
    if mode == "single":
        return prf(refs, candidates[0])
    if mode == "m_spice":
        return m_spice(refs, candidates)
    scored = [prf(refs, c) for c in candidates]
    if mode == "avg":
        return tuple(math.fsum(s[k] for s in scored) / len(scored) for k in range(3))
    if mode == "oracle":
        return max(scored, key=lambda s: s[0])
    raise SegcapError(f"unknown SPICE mode {mode!r}; expected one of {MODES}")


@dataclass(frozen=True)
class ImageProps:
    """Reference bags (one per reference sentence) and ordered candidate bags."""

    image_id: str
    references: tuple
    candidates: tuple

    def __post_init__(self):
        object.__setattr__(self, "references", tuple(frozenset(b) for b in self.references))
        object.__setattr__(self, "candidates", tuple(frozenset(b) for b in self.candidates))


@dataclass(frozen=True)
class SpiceResult:
    mode: str
    n: int
    f1: float
    precision: float
    recall: float
    per_image: dict  # image_id -> (f1, precision, recall)


def normalize_mode(mode: str) -> str:
    mode = mode.replace("-", "_").lower()
    if mode == "mspice":
        mode = "m_spice"
    if mode not in MODES:
        raise SegcapError(f"unknown SPICE mode {mode!r}; expected one of {MODES}")
    return mode


def corpus_spice_detail(images: Iterable[ImageProps] | Mapping, mode: str, n: int,
                        threads: int = 1) -> SpiceResult:
    mode = normalize_mode(mode)
    if n < 1:
        raise SegcapError("n must be >= 1")
    if isinstance(images, Mapping):
        images = images.values()
    images = sorted(images, key=lambda im: im.image_id)
    if not images:
        raise EmptyReferences("corpus has no images")
    for im in images:
        if len(im.candidates) < n:
            raise InsufficientCandidates(im.image_id, len(im.candidates), n)

    def one(im):
        return score_candidates(union_refs(im.references), im.candidates[:n], mode)

    scores = parallel_map(one, images, threads)
    mean = [math.fsum(s[k] for s in scores) / len(scores) for k in range(3)]
    return SpiceResult(mode, n, mean[0], mean[1], mean[2],
                       {im.image_id: s for im, s in zip(images, scores)})


def corpus_spice(images: Iterable[ImageProps] | Mapping, mode: str, n: int,
                 threads: int = 1) -> float:
    """Mean per-image score over the first ``n`` candidates of every image."""
    return corpus_spice_detail(images, mode, n, threads).f1
