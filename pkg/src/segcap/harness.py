"""Synthetic image-to-unit-to-speech cascade at desk scale.

Scenes stand in for images, a toy lexicon maps each word to a fixed unit
string, and a deterministic lexicon renderer stands in for synthesis plus
recognition. The renderer only ever sees the generated unit sequence, which
keeps the rendered caption conditionally independent of the scene given the
units.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import metrics_ngram, metrics_spice
from .decoding import (DecodeConfig, NGramModel, decode, detect_loops, fit_ngram_model,
                       next_token_entropy)
from .errors import SegcapError
from .parallel import parallel_map
from .units import FrameSeq, collapse_repeats, rle_encode

CONDITIONS = ("rle_clean", "rle_corrupt", "norle_clean")
_CONDITION_ALIASES = {
    "rle+clean": "rle_clean", "rle+corrupt": "rle_corrupt", "norle+clean": "norle_clean",
}


def normalize_condition(name: str) -> str:
    key = name.strip().lower()
    key = _CONDITION_ALIASES.get(key, key.replace("-", "_"))
    if key not in CONDITIONS:
        raise SegcapError(f"unknown condition {name!r}; expected one of {CONDITIONS}")
    return key


@dataclass(frozen=True)
class CorruptionSpec:
    split_prob: float = 1.0
    num_surrogates: int = 2
    speaker_conditioned: bool = False
    num_speakers: int = 4

    def __post_init__(self):
        if not 0.0 <= self.split_prob <= 1.0:
            raise SegcapError("split_prob must be in [0, 1]")
        if self.num_surrogates < 1 or self.num_speakers < 1:
            raise SegcapError("num_surrogates and num_speakers must be >= 1")


@dataclass(frozen=True)
class Template:
    words: tuple
    weight: float


@dataclass
class ToyGrammar:
    lexicon: dict                 # word -> tuple of unit ids
    scenes: dict                  # scene id -> list[Template]
    objects: frozenset = frozenset()
    attributes: frozenset = frozenset()
    relations: frozenset = frozenset()
    duration_default: tuple = (1, 1)
    duration_units: dict = field(default_factory=dict)   # unit -> (lo, hi)
    silence_unit: Optional[int] = None
    silence_at: tuple = ("start", "end")
    frame_shift_ms: int = 40
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)
    name: str = "toy"

    def __post_init__(self):
        self.lexicon = {w: tuple(int(u) for u in p) for w, p in self.lexicon.items()}
        prons = list(self.lexicon.values())
        if len(set(prons)) != len(prons):
            raise SegcapError("ambiguous lexicon: two words share a pronunciation")
        firsts = {p[0] for p in prons if p}
        for word, pron in self.lexicon.items():
            if not pron:
                raise SegcapError(f"word {word!r} has an empty pronunciation")
            if any(a == b for a, b in zip(pron, pron[1:])):
                raise SegcapError(f"word {word!r} repeats a unit back to back")
            if pron[-1] in firsts:
                raise SegcapError(f"word {word!r} ends with a unit that starts a word; "
                                  "run-length collapse would merge the boundary")
            if self.silence_unit is not None and self.silence_unit in pron:
                raise SegcapError(f"word {word!r} uses the silence unit")
        for scene, templates in self.scenes.items():
            if not templates:
                raise SegcapError(f"scene {scene!r} has no templates")
            total = math.fsum(t.weight for t in templates)
            if total <= 0 or any(t.weight < 0 for t in templates):
                raise SegcapError(f"scene {scene!r} has invalid template weights")
            for t in templates:
                missing = [w for w in t.words if w not in self.lexicon]
                if missing:
                    raise SegcapError(f"scene {scene!r} uses words outside the lexicon: {missing}")
            self.scenes[scene] = [Template(t.words, t.weight / total) for t in templates]
        lo, hi = self.duration_default
        if not 1 <= lo <= hi:
            raise SegcapError("duration ranges must satisfy 1 <= lo <= hi")

    @property
    def contexts(self) -> list:
        return sorted(self.scenes)

    @property
    def units(self) -> list:
        inv = {u for p in self.lexicon.values() for u in p}
        if self.silence_unit is not None:
            inv.add(self.silence_unit)
        return sorted(inv)

    def duration_range(self, unit: int) -> tuple:
        return self.duration_units.get(unit, self.duration_default)

    def pronounce(self, words: Sequence[str]) -> tuple:
        units = [u for w in words for u in self.lexicon[w]]
        if self.silence_unit is not None:
            if "start" in self.silence_at:
                units.insert(0, self.silence_unit)
            if "end" in self.silence_at:
                units.append(self.silence_unit)
        return tuple(units)

    def references(self, scene) -> list:
        return [t.words for t in self.scenes[scene]]

    def propositions(self, words: Sequence[str]) -> frozenset:
        """Toy scene-graph parse of a word sequence.

        Attributes attach to the next object, consecutive relation words
        join with '-' and link the previous object to the next one.
        """
        props = set()
        subject, attrs, rel = None, [], []
        for w in words:
            if w in self.attributes:
                attrs.append(w)
            elif w in self.relations:
                rel.append(w)
            elif w in self.objects:
                props.add((w,))
                props.update((w, a) for a in attrs)
                if rel and subject is not None:
                    props.add((subject, "-".join(rel), w))
                subject, attrs, rel = w, [], []
        return frozenset(props)

    def reference_props(self, scene) -> frozenset:
        return metrics_spice.union_refs([self.propositions(r) for r in self.references(scene)])

    @classmethod
    def from_dict(cls, data: dict) -> "ToyGrammar":
        known = {"name", "frame_shift_ms", "silence_unit", "silence_at", "lexicon", "categories", "scenes",
                 "durations", "corruption"}
        unknown = set(data) - known
        if unknown:
            raise SegcapError(f"unknown grammar keys: {sorted(unknown)}")
        cats = data.get("categories", {})
        durations = data.get("durations", {})
        scenes = {}
        for scene, templates in data["scenes"].items():
            scenes[scene] = [
                Template(tuple(t["text"].split()) if isinstance(t, dict) else tuple(t.split()),
                         float(t.get("weight", 1.0)) if isinstance(t, dict) else 1.0)
                for t in templates
            ]
        return cls(
            lexicon=data["lexicon"],
            scenes=scenes,
            objects=frozenset(cats.get("objects", ())),
            attributes=frozenset(cats.get("attributes", ())),
            relations=frozenset(cats.get("relations", ())),
            duration_default=tuple(durations.get("default", (1, 1))),
            duration_units={int(k): tuple(v) for k, v in durations.get("units", {}).items()},
            silence_unit=data.get("silence_unit"),
            silence_at=tuple(data.get("silence_at", ("start", "end"))),
            frame_shift_ms=int(data.get("frame_shift_ms", 40)),
            corruption=CorruptionSpec(**data.get("corruption", {})),
            name=data.get("name", "toy"),
        )


def load_grammar(path: Optional[str | Path] = None) -> ToyGrammar:
    """Load a grammar JSON document; ``None`` or ``"builtin"`` gives the packaged one."""
    if path is None or str(path) == "builtin":
        text = resources.files("segcap").joinpath("data/toy_grammar.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return ToyGrammar.from_dict(json.loads(text))


# Corpus generation ---------------------------------------------------------

@dataclass(frozen=True)
class CorpusItem:
    context: str
    frames: FrameSeq
    words: tuple
    speaker: str


def surrogate_table(grammar: ToyGrammar, corruption: CorruptionSpec,
                    rng: np.random.Generator) -> dict:
    """unit -> tuple of ids standing for it; the original id always comes first."""
    table = {}
    next_id = max(grammar.units) + 1
    for u in grammar.units:
        if corruption.num_surrogates > 1 and rng.random() < corruption.split_prob:
            extra = tuple(range(next_id, next_id + corruption.num_surrogates - 1))
            next_id += len(extra)
            table[u] = (u, *extra)
        else:
            table[u] = (u,)
    return table


def generate_corpus(grammar: ToyGrammar, corruption: Optional[CorruptionSpec],
                    n_per_context: int, with_durations: bool, seed: int):
    """Sample paired (scene, unit frames, words) data.

    Returns the items plus the surrogate table (``{}`` when clean). With
    durations each unit is repeated per the grammar's duration law;
    corruption then swaps every frame for one of its unit's surrogates,
    either at random per frame or fixed per (speaker, unit).
    """
    if n_per_context < 1:
        raise SegcapError("n_per_context must be >= 1")
    # Separate streams keep the clean content identical across corruption settings.
    table_ss, content_ss, noise_ss = np.random.SeedSequence(int(seed)).spawn(3)
    table = surrogate_table(grammar, corruption, np.random.default_rng(table_ss)) if corruption else {}
    rng = np.random.default_rng(content_ss)
    noise = np.random.default_rng(noise_ss)
    n_speakers = corruption.num_speakers if corruption else 1
    items = []
    for scene in grammar.contexts:
        templates = grammar.scenes[scene]
        weights = np.array([t.weight for t in templates])
        for _ in range(n_per_context):
            tmpl = templates[int(rng.choice(len(templates), p=weights))]
            units = grammar.pronounce(tmpl.words)
            if with_durations:
                frames = []
                for u in units:
                    lo, hi = grammar.duration_range(u)
                    frames.extend([u] * int(rng.integers(lo, hi + 1)))
            else:
                frames = list(units)
            speaker = f"spk{int(noise.integers(n_speakers))}"
            if corruption:
                frames = _corrupt(frames, table, corruption, speaker, noise)
            items.append(CorpusItem(scene, FrameSeq(frames, grammar.frame_shift_ms),
                                    tmpl.words, speaker))
    return items, table


def _corrupt(frames, table, corruption, speaker, rng):
    if corruption.speaker_conditioned:
        spk = int(speaker[3:])
        return [table[u][(spk + u) % len(table[u])] for u in frames]
    return [table[u][int(rng.integers(len(table[u])))] if len(table[u]) > 1 else u
            for u in frames]


# Rendering -----------------------------------------------------------------

class LexiconRenderer:
    """Maps unit sequences back to words: undo surrogates, collapse repeats,
    drop silence, then longest-match segmentation against the lexicon.
    Units that start no known word are skipped one at a time."""

    def __init__(self, grammar: ToyGrammar, surrogates: Optional[dict] = None):
        self.grammar = grammar
        self.canonical = {}
        for unit, ids in (surrogates or {}).items():
            for i in ids:
                self.canonical[i] = unit
        self.by_pron = {p: w for w, p in grammar.lexicon.items()}
        self.max_len = max(len(p) for p in self.by_pron)

    def render(self, units: Sequence[int]) -> tuple:
        seq = collapse_repeats(self.canonical.get(int(u), int(u)) for u in units)
        if self.grammar.silence_unit is not None:
            seq = tuple(u for u in seq if u != self.grammar.silence_unit)
        words, i = [], 0
        while i < len(seq):
            for n in range(min(self.max_len, len(seq) - i), 0, -1):
                word = self.by_pron.get(seq[i:i + n])
                if word is not None:
                    words.append(word)
                    i += n
                    break
            else:
                i += 1
        return tuple(words)


# Experiment ---------------------------------------------------------------------

DEFAULT_DECODE_CONFIGS = (
    DecodeConfig(method="beam", beam_size=5, n_out=1),
    DecodeConfig(method="sample", temperature=0.7, top_k=5, n_out=5, seed=0),
)


@dataclass
class ExperimentSettings:
    n_per_context: int = 40
    order: int = 5
    alpha: float = 0.01
    max_len_factor: float = 1.5
    min_reps: int = 3
    max_period: int = 8


def _condition_corpus(grammar, condition, settings, seed):
    corrupt = condition == "rle_corrupt"
    items, table = generate_corpus(grammar, grammar.corruption if corrupt else None,
                                   settings.n_per_context, True, seed)
    if condition.startswith("rle"):
        seqs = [rle_encode(it.frames).tokens for it in items]
    else:
        seqs = [it.frames.tokens for it in items]
    return items, table, seqs


def run_condition(grammar: ToyGrammar, condition: str, configs: Sequence[DecodeConfig],
                  seed: int, settings: ExperimentSettings) -> dict:
    condition = normalize_condition(condition)
    items, table, seqs = _condition_corpus(grammar, condition, settings, seed)
    max_len = int(math.ceil(settings.max_len_factor * max(len(s) for s in seqs)))
    model: NGramModel = fit_ngram_model(
        [(it.context, s) for it, s in zip(items, seqs)], settings.order, settings.alpha, max_len)
    train_ids = [(it.context, model.ids(str(u) for u in s)) for it, s in zip(items, seqs)]
    renderer = LexiconRenderer(grammar, table)
    contexts = grammar.contexts

    report = {
        "condition": condition,
        "num_train": len(items),
        "num_unit_types": len({u for s in seqs for u in s}),
        "mean_train_length": math.fsum(len(s) for s in seqs) / len(seqs),
        "max_len": max_len,
        "next_token_entropy": next_token_entropy(model, train_ids),
        "decoding": {},
    }
    for config in configs:
        hyps = {ctx: decode(model, ctx, config) for ctx in contexts}
        outputs, loops = {}, []
        for ctx in contexts:
            rows = []
            for h in hyps[ctx]:
                units = [int(s) for s in model.symbols(h.tokens)]
                lr = detect_loops(units, settings.min_reps, settings.max_period, max_len)
                # a loop failure cycles until the length limit instead of terminating
                failed = lr.looping and lr.truncated_at_max_len and not h.terminated
                loops.append(failed)
                rows.append({"units": units, "words": renderer.render(units),
                             "logprob": h.logprob, "terminated": h.terminated,
                             "looping": failed, "period": lr.period if failed else 0})
            outputs[ctx] = rows
        report["decoding"][config.label] = _score(grammar, contexts, outputs, loops)
    return report


def _score(grammar, contexts, outputs, loops) -> dict:
    first = [metrics_ngram.EvalInstance(ctx, outputs[ctx][0]["words"], grammar.references(ctx))
             for ctx in contexts]
    word_metrics = metrics_ngram.evaluate(first)
    images = [metrics_spice.ImageProps(ctx, [grammar.propositions(r) for r in grammar.references(ctx)],
                                       [grammar.propositions(o["words"]) for o in outputs[ctx]])
              for ctx in contexts]
    n = min(len(outputs[ctx]) for ctx in contexts)
    mspice = metrics_spice.corpus_spice_detail(images, "m_spice", n)
    return {
        "loop_rate": sum(loops) / len(loops),
        "first_loop_rate": sum(outputs[c][0]["looping"] for c in contexts) / len(contexts),
        "word_bleu4": word_metrics["bleu4"],
        "word_meteor": word_metrics["meteor"],
        "word_rouge_l": word_metrics["rouge"],
        "word_cider": word_metrics["cider"],
        "spice_f1": metrics_spice.corpus_spice(images, "single", 1),
        "m_spice_f1": mspice.f1,
        "m_spice_recall": mspice.recall,
        "n": n,
        "outputs": {ctx: [{"units": o["units"], "words": " ".join(o["words"]),
                           "looping": o["looping"], "period": o["period"],
                           "terminated": o["terminated"]} for o in outputs[ctx]]
                    for ctx in contexts},
    }


def run_cascade_experiment(grammar: ToyGrammar, conditions: Sequence[str] = CONDITIONS,
                           configs: Sequence[DecodeConfig] = DEFAULT_DECODE_CONFIGS,
                           seed: int = 42, settings: Optional[ExperimentSettings] = None,
                           threads: int = 1) -> dict:
    """Fit, decode, render and score every condition under one seed.

    Each condition draws its corpus from the same seed, so conditions differ
    only in encoding and corruption.
    """
    settings = settings or ExperimentSettings()
    conditions = [normalize_condition(c) for c in conditions]
    results = parallel_map(lambda c: run_condition(grammar, c, configs, seed, settings),
                           conditions, threads)
    return {
        "grammar": grammar.name,
        "seed": seed,
        "settings": vars(settings).copy(),
        "configs": [c.label for c in configs],
        "conditions": {r["condition"]: r for r in results},
    }
