"""Multi-candidate evaluation: vocabulary-size estimates, score-vs-n curves
and plot-ready report files."""
from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

from . import metrics_ngram, metrics_spice
from .errors import InsufficientCandidates, SegcapError
from .records import write_output
from .units import normalize_text

REPORT_COLUMNS = ("method", "n", "metric", "value")
SPICE_METRICS = {
    "spice": ("single", 0),
    "avg_spice": ("avg", 0),
    "oracle_spice": ("oracle", 0),
    "m_spice": ("m_spice", 0),
    "m_spice_precision": ("m_spice", 1),
    "m_spice_recall": ("m_spice", 2),
}


@dataclass(frozen=True)
class Candidate:
    caption: str
    score: Optional[float] = None
    props: Optional[frozenset] = None


@dataclass(frozen=True)
class CandidateSet:
    """Ordered candidates for one image: rank order for beam, draw order for sampling."""

    image_id: str
    candidates: tuple
    provenance: str = "sample"
    config: Optional[object] = None

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(
            c if isinstance(c, Candidate) else Candidate(c) for c in self.candidates))
        if self.provenance not in ("beam", "sample"):
            raise SegcapError(f"unknown provenance {self.provenance!r}")
        if self.provenance == "beam":
            scores = [c.score for c in self.candidates]
            if all(s is not None for s in scores) and any(
                    a < b for a, b in zip(scores, scores[1:])):
                raise SegcapError(f"beam candidates for {self.image_id!r} are not sorted by score")

    def first(self, n: int) -> tuple:
        if len(self.candidates) < n:
            raise InsufficientCandidates(self.image_id, len(self.candidates), n)
        return self.candidates[:n]


@dataclass(frozen=True, order=True)
class CurvePoint:
    method: str
    n: int
    metric: str
    value: float

    def __post_init__(self):
        if self.n < 1:
            raise SegcapError("curve points need n >= 1")


def vocab_size(caption_sets: Iterable[CandidateSet], n: int, min_count: int = 3) -> int:
    """Distinct normalized words whose pooled frequency over the first ``n``
    candidates of every image reaches ``min_count``."""
    counts = Counter()
    for cs in caption_sets:
        for cand in cs.first(n):
            counts.update(normalize_text(cand.caption))
    return sum(1 for c in counts.values() if c >= min_count)


def _tokens(text: str, domain: str) -> tuple:
    if domain == "word":
        return normalize_text(text)
    if domain in ("char", "character"):
        return tuple(" ".join(normalize_text(text)))
    if domain == "unit":
        return tuple(text.split())
    raise SegcapError(f"unknown token domain {domain!r}")


def multi_candidate_eval(
    methods: Mapping[str, Sequence[CandidateSet]],
    n_list: Sequence[int],
    metrics: Sequence[str],
    references: Optional[Mapping[str, Sequence[str]]] = None,
    reference_props: Optional[Mapping[str, Sequence[frozenset]]] = None,
    domain: str = "word",
    min_count: int = 3,
    threads: int = 1,
) -> list[CurvePoint]:
    """One point per (method, n, metric) over first-``n`` candidate truncations.

    SPICE-family metrics use candidate proposition bags against the union of
    the image's reference bags. An n-gram metric at ``n`` is the mean of the
    corpus metric computed separately for candidate slots ``1..n``. ``vocab``
    is the pooled vocabulary size at threshold ``min_count``.
    """
    if not n_list:
        raise SegcapError("n list must be nonempty")
    points = []
    for method in sorted(methods):
        sets = sorted(methods[method], key=lambda cs: cs.image_id)
        for n in sorted(set(n_list)):
            for metric in metrics:
                points.append(CurvePoint(method, n, metric, _metric_at(
                    metric, sets, n, references, reference_props, domain, min_count, threads)))
    return sorted(points)


def _metric_at(metric, sets, n, references, reference_props, domain, min_count, threads):
    if metric == "vocab":
        return float(vocab_size(sets, n, min_count))
    if metric in SPICE_METRICS:
        if reference_props is None:
            raise SegcapError(f"metric {metric!r} needs reference propositions")
        mode, part = SPICE_METRICS[metric]
        images = []
        for cs in sets:
            cands = cs.first(n)
            if any(c.props is None for c in cands):
                raise SegcapError(f"image {cs.image_id!r} has candidates without propositions")
            images.append(metrics_spice.ImageProps(cs.image_id, reference_props[cs.image_id],
                                                   [c.props for c in cands]))
        res = metrics_spice.corpus_spice_detail(images, mode, n, threads)
        return (res.f1, res.precision, res.recall)[part]
    if metric in metrics_ngram.METRICS:
        if references is None:
            raise SegcapError(f"metric {metric!r} needs reference captions")
        for cs in sets:
            cs.first(n)
        per_slot = []
        for j in range(n):
            instances = [metrics_ngram.EvalInstance(
                cs.image_id, _tokens(cs.candidates[j].caption, domain),
                [_tokens(r, domain) for r in references[cs.image_id]]) for cs in sets]
            per_slot.append(metrics_ngram.METRICS[metric](instances, threads=threads))
        return math.fsum(per_slot) / n
    raise SegcapError(f"unknown metric {metric!r}")


# Report files ----------------------------------------------------------------

def _format_value(v: float) -> str:
    return repr(float(v))


def render_report(points: Iterable[CurvePoint], fmt: str = "csv") -> str:
    """Serialize points with a fixed column order and sorted rows."""
    rows = sorted(points)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for p in rows:
            writer.writerow([p.method, p.n, p.metric, _format_value(p.value)])
        return buf.getvalue()
    if fmt == "json":
        data = [{"method": p.method, "n": p.n, "metric": p.metric, "value": float(p.value)}
                for p in rows]
        return json.dumps(data, indent=2) + "\n"
    raise SegcapError(f"unknown report format {fmt!r}")


def parse_report(text: str, fmt: str = "csv") -> list[CurvePoint]:
    if fmt == "csv":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or tuple(header) != REPORT_COLUMNS:
            raise SegcapError(f"report header must be {','.join(REPORT_COLUMNS)}")
        return [CurvePoint(m, int(n), metric, float(v)) for m, n, metric, v in reader]
    if fmt == "json":
        return [CurvePoint(d["method"], int(d["n"]), d["metric"], float(d["value"]))
                for d in json.loads(text)]
    raise SegcapError(f"unknown report format {fmt!r}")


def emit_report(points: Iterable[CurvePoint], fmt: str, path) -> str:
    """Write the rendered report atomically to ``path`` ('-' for stdout)."""
    text = render_report(points, fmt)
    write_output(path, text)
    return text
