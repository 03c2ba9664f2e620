"""Toolkit for captioning with discrete speech units: unit sequence handling,
caption metrics, decoding, multi-candidate evaluation and a synthetic cascade."""
from .errors import (
    DuplicateKey, EmptyCandidates, EmptyCorpus, EmptyReferences, EmptySequence, IdMismatch,
    InsufficientCandidates, MalformedRecord, MissingDurations, ModelContract, SegcapError,
    TooLarge,
)
from .units import (
    CorpusStats, FrameSeq, RleSeq, Utterance, Vocabulary, collapse_repeats, corpus_stats,
    normalize_text, prune_vocabulary, rle_encode, rle_expand,
)
from .metrics_ngram import EvalInstance, bleu4, cider, evaluate, meteor_exact, rouge_l
from .metrics_spice import (
    ImageProps, avg_spice, corpus_spice, f1, m_spice, oracle_spice, proposition, union_refs,
)
from .decoding import (
    DecodeConfig, Hypothesis, LoopReport, NGramModel, SequenceModel, beam_search,
    brute_force_mode, decode, detect_loops, fit_ngram_model, greedy_decode, sample_decode,
)
from .diversity import (
    Candidate, CandidateSet, CurvePoint, emit_report, multi_candidate_eval, vocab_size,
)
from .harness import ToyGrammar, load_grammar, run_cascade_experiment

__version__ = "0.1.0"
