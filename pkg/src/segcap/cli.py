"""``segcap`` command-line entry point.

Exit codes: 0 success, 1 validation error, 2 I/O error. Failures print one
JSON object on stderr, e.g. ``{"error": "MalformedRecord", "line": 3, ...}``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

from . import diversity, metrics_ngram, metrics_spice, records
from .decoding import DecodeConfig, NGramModel, decode, detect_loops, fit_ngram_model
from .errors import MissingDurations, SegcapError
from .harness import CONDITIONS, ExperimentSettings, load_grammar, run_cascade_experiment
from .parallel import default_threads, parallel_map
from .units import RleSeq, Utterance, corpus_stats, normalize_text, rle_encode, rle_expand

log = logging.getLogger("segcap")


class UsageError(SegcapError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# subcommand handlers -------------------------------------------------------------

def cmd_rle(args):
    rows = []
    for rec in records.read_jsonl(args.inp, "units"):
        d = dict(rec.data)
        if args.action == "encode":
            if not d["units"]:
                raise SegcapError(f"{args.inp}:{rec.line}: cannot encode an empty unit sequence")
            r = rle_encode(d["units"], keep_durations=args.keep_durations)
            d["units"] = list(r.tokens)
            if args.keep_durations:
                d["durations"] = list(r.durations)
            else:
                d.pop("durations", None)
        else:
            durations = d.pop("durations", None)
            if durations is None:
                raise MissingDurations(f"{args.inp}:{rec.line}: record {d['id']!r} has no durations")
            shift = d.get("frame_shift_ms", args.frame_shift_ms)
            try:
                r = RleSeq(tuple(zip(d["units"], durations)))
            except SegcapError as exc:
                raise SegcapError(f"{args.inp}:{rec.line}: {exc}") from exc
            if len(durations) != len(d["units"]):
                raise SegcapError(f"{args.inp}:{rec.line}: units and durations differ in length")
            d["units"] = list(rle_expand(r, shift).tokens)
        rows.append(d)
    records.write_output(args.out, records.dumps_jsonl(rows))


def cmd_stats(args):
    utts = []
    for rec in records.read_jsonl(args.inp, "units"):
        d = rec.data
        tokens = normalize_text(d["text"]) if "text" in d else tuple(str(u) for u in d["units"])
        utts.append(Utterance(d["id"], tokens, d.get("duration_s"), d.get("speaker")))
    stats = corpus_stats(utts, args.max_duration)
    records.write_output(args.out, records.dumps_json(vars(stats)))


def _read_references(path):
    refs = defaultdict(list)
    for rec in records.read_jsonl(path, "references"):
        refs[rec.data["image_id"]].append(rec.data["caption"])
    return refs


def _read_candidates(path):
    recs = records.read_jsonl(path, "candidates")
    records.check_unique(recs, ("image_id", "candidate_id"))
    cands = defaultdict(list)
    for rec in recs:
        d = rec.data
        cands[d["image_id"]].append((d["candidate_id"], d["caption"], d.get("score")))
    return {k: sorted(v) for k, v in cands.items()}


def cmd_eval_ngram(args):
    refs = _read_references(args.references)
    cands = _read_candidates(args.candidates)
    records.check_same_ids(cands, refs)
    metrics = [m.strip() for m in args.metric.split(",") if m.strip()]
    domain = "character" if args.domain == "char" else args.domain
    instances = [
        metrics_ngram.EvalInstance(
            image_id,
            diversity._tokens(cands[image_id][0][1], domain),
            [diversity._tokens(r, domain) for r in refs[image_id]])
        for image_id in sorted(cands)
    ]
    scores = metrics_ngram.evaluate(instances, metrics, threads=args.threads)
    out = {"domain": args.domain, "num_images": len(instances), "metrics": scores}
    records.write_output(args.out, records.dumps_json(out))


def _read_props(path):
    recs = records.read_jsonl(path, "props")
    records.check_unique([r for r in recs if r.data["kind"] == "candidate"],
                         ("image_id", "candidate_id"))
    refs, cands = defaultdict(list), defaultdict(list)
    for rec in recs:
        d = rec.data
        b = metrics_spice.bag(d["props"])
        if d["kind"] == "reference":
            refs[d["image_id"]].append((rec.line, b))
        else:
            cands[d["image_id"]].append((d["candidate_id"], b))
    records.check_same_ids(cands, refs)
    return {
        image_id: metrics_spice.ImageProps(
            image_id, [b for _, b in sorted(refs[image_id], key=lambda x: x[0])],
            [b for _, b in sorted(cands[image_id], key=lambda x: x[0])])
        for image_id in sorted(refs)
    }


def cmd_eval_spice(args):
    images = _read_props(args.props)
    res = metrics_spice.corpus_spice_detail(images, args.mode, args.n, threads=args.threads)
    out = {
        "mode": res.mode, "n": res.n, "num_images": len(images),
        "f1": res.f1, "precision": res.precision, "recall": res.recall,
        "per_image": {k: {"f1": v[0], "precision": v[1], "recall": v[2]}
                      for k, v in res.per_image.items()},
    }
    records.write_output(args.out, records.dumps_json(out))


def cmd_fit(args):
    corpus = []
    for rec in records.read_jsonl(args.inp, "units"):
        d = rec.data
        units = d["units"]
        if args.rle and units:
            units = rle_encode(units).tokens
        corpus.append((d.get("image_id", d["id"]), [str(u) for u in units]))
    model = fit_ngram_model(corpus, args.order, args.alpha, args.max_len)
    records.write_output(args.out, records.dumps_json(model.to_dict()))


def cmd_decode(args):
    try:
        data = json.loads(Path(args.model).read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise SegcapError(f"{args.model}: invalid model file ({exc.msg})") from exc
    model = NGramModel.from_dict(data)
    recs = records.read_jsonl(args.contexts, "contexts")
    records.check_unique(recs, ("image_id",))
    contexts = sorted(r.data["image_id"] for r in recs)
    config = DecodeConfig(method=args.method, beam_size=args.beam, temperature=args.t,
                          top_k=None if args.k in (None, 0) else args.k, n_out=args.n,
                          seed=args.seed, max_len=args.max_len)
    max_len = args.max_len or model.max_len

    def run(ctx):
        rows = []
        for i, h in enumerate(decode(model, ctx, config)):
            syms = model.symbols(h.tokens)
            lr = detect_loops(syms, max_len=max_len)
            rows.append({"image_id": ctx, "candidate_id": i, "caption": " ".join(syms),
                         "score": h.logprob, "terminated": h.terminated,
                         "looping": lr.looping, "period": lr.period})
        return rows

    rows = [r for batch in parallel_map(run, contexts, args.threads) for r in batch]
    records.write_output(args.out, records.dumps_jsonl(rows))


def cmd_vocab(args):
    cands = _read_candidates(args.candidates)
    sets = [diversity.CandidateSet(k, [c[1] for c in v]) for k, v in sorted(cands.items())]
    size = diversity.vocab_size(sets, args.n, args.min_count)
    out = {"n": args.n, "min_count": args.min_count, "num_images": len(sets), "vocab_size": size}
    records.write_output(args.out, records.dumps_json(out))


def cmd_report(args):
    points = [diversity.CurvePoint(r.data["method"], r.data["n"], r.data["metric"], r.data["value"])
              for r in records.read_jsonl(args.points, "points")]
    diversity.emit_report(points, args.format, args.out)


def cmd_simulate(args):
    grammar = load_grammar(args.grammar)
    conditions = [c for c in args.conditions.split(",") if c.strip()]
    configs = [
        DecodeConfig(method="beam", beam_size=args.beam, n_out=1),
        DecodeConfig(method="sample", temperature=args.t, top_k=args.k or None,
                     n_out=args.n, seed=args.seed),
    ]
    settings = ExperimentSettings(n_per_context=args.n_per_context, order=args.order,
                                  alpha=args.alpha)
    report = run_cascade_experiment(grammar, conditions, configs, args.seed, settings,
                                    threads=args.threads)
    points = []
    for cond, rep in report["conditions"].items():
        for label, d in rep["decoding"].items():
            for metric, value in d.items():
                if isinstance(value, float):
                    points.append(diversity.CurvePoint(f"{cond}/{label}", d["n"], metric, value))
    if args.out == "-":
        records.write_output("-", records.dumps_json(report))
        return
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records.write_output(out / "report.json", records.dumps_json(report))
    records.write_output(out / "points.csv", diversity.render_report(points, "csv"))


def cmd_validate(args):
    files = {k: getattr(args, k) for k in records.SCHEMAS if getattr(args, k, None)}
    if not files:
        raise UsageError("validate: give at least one input file")
    diags = records.validate_inputs(files)
    records.write_output(args.out, records.dumps_jsonl(d.as_dict() for d in diags))
    if diags:
        raise SegcapError(f"{len(diags)} validation problem(s)")


# parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=default_threads(),
                        help="worker cap (default: $SEGCAP_THREADS or 1)")
    common.add_argument("--config", help="JSON object of option defaults; flags override it")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="segcap", description="Speech-unit caption evaluation and decoding toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("rle", parents=[common], help="run-length encode or expand unit files")
    s.add_argument("action", choices=["encode", "expand"])
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", default="-")
    s.add_argument("--keep-durations", action="store_true")
    s.add_argument("--frame-shift-ms", type=int, default=40)
    s.set_defaults(func=cmd_rle)

    s = sub.add_parser("stats", parents=[common], help="corpus statistics")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--max-duration", type=float, default=None)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_stats)

    ev = sub.add_parser("eval", help="caption metrics")
    evsub = ev.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    s = evsub.add_parser("ngram", parents=[common])
    s.add_argument("--candidates", required=True)
    s.add_argument("--references", required=True)
    s.add_argument("--domain", choices=["word", "char", "unit"], default="word")
    s.add_argument("--metric", default="bleu4,meteor,rouge,cider")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_eval_ngram)
    s = evsub.add_parser("spice", parents=[common])
    s.add_argument("--props", required=True)
    s.add_argument("--mode", default="m-spice",
                   choices=["m-spice", "m_spice", "avg", "oracle", "single"])
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_eval_spice)

    s = sub.add_parser("fit", parents=[common], help="fit an add-alpha n-gram unit model")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--order", type=int, default=5)
    s.add_argument("--alpha", type=float, default=0.01)
    s.add_argument("--max-len", type=int, default=100)
    s.add_argument("--rle", action="store_true", help="collapse repeats before fitting")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("decode", parents=[common], help="decode captions from a fitted model")
    s.add_argument("--model", required=True)
    s.add_argument("--contexts", required=True)
    s.add_argument("--method", choices=["greedy", "beam", "sample"], default="beam")
    s.add_argument("--beam", type=int, default=5)
    s.add_argument("--t", type=float, default=1.0)
    s.add_argument("--k", type=int, default=None, help="top-k; omit or 0 for all")
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-len", type=int, default=None)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("vocab", parents=[common], help="vocabulary size of generated captions")
    s.add_argument("--candidates", required=True)
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--min-count", type=int, default=3)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_vocab)

    s = sub.add_parser("simulate", parents=[common], help="run the synthetic cascade")
    s.add_argument("--grammar", default="builtin")
    s.add_argument("--conditions", default=",".join(CONDITIONS))
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--beam", type=int, default=5)
    s.add_argument("--t", type=float, default=0.7)
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--n", type=int, default=5)
    s.add_argument("--n-per-context", type=int, default=40)
    s.add_argument("--order", type=int, default=5)
    s.add_argument("--alpha", type=float, default=0.01)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("report", parents=[common], help="render curve points as CSV or JSON")
    s.add_argument("--points", required=True)
    s.add_argument("--format", choices=["csv", "json"], default="csv")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("validate", parents=[common], help="check input files")
    for name in records.SCHEMAS:
        s.add_argument(f"--{name}")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_validate)
    return p


def _leaf_parser(parser, argv):
    """The subparser that ``argv`` selects, or None if it names no command."""
    node = parser
    for tok in argv:
        if tok.startswith("-"):
            break
        action = next((a for a in node._actions if isinstance(a, argparse._SubParsersAction)), None)
        if action is None or tok not in action.choices:
            break
        node = action.choices[tok]
    return None if node is parser else node


def parse_args(argv):
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    config_path = pre.parse_known_args(argv)[0].config
    leaf = _leaf_parser(parser, argv)
    if config_path and leaf is not None:
        try:
            config = json.loads(Path(config_path).read_text("utf-8"))
        except json.JSONDecodeError as exc:
            raise SegcapError(f"{config_path}: invalid JSON config ({exc.msg})") from exc
        if not isinstance(config, dict):
            raise SegcapError(f"{config_path}: config must be a JSON object")
        config = {k.replace("-", "_"): v for k, v in config.items()}
        dests = {a.dest for a in leaf._actions} - {"help", "config", "func"}
        unknown = sorted(set(config) - dests)
        if unknown:
            raise SegcapError(f"{config_path}: unknown config keys {unknown}")
        leaf.set_defaults(**config)
        # values supplied by the file satisfy required flags; explicit flags still win
        for a in leaf._actions:
            if a.dest in config:
                a.required = False
    return parser.parse_args(argv)


def _fail(kind, message, code, **extra):
    payload = {"error": kind, "message": message, **extra}
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        args.func(args)
        return 0
    except SegcapError as exc:
        extra = {k: getattr(exc, k) for k in ("path", "line") if hasattr(exc, k)}
        return _fail(type(exc).__name__, str(exc), 1, **extra)
    except OSError as exc:
        return _fail(type(exc).__name__, str(exc), 2, path=getattr(exc, "filename", None))


if __name__ == "__main__":
    sys.exit(main())
