import pytest
from hypothesis import given, strategies as st

from segcap.diversity import (
    Candidate, CandidateSet, CurvePoint, emit_report, multi_candidate_eval, parse_report,
    render_report, vocab_size,
)
from segcap.errors import InsufficientCandidates, SegcapError
from segcap.metrics_ngram import EvalInstance, evaluate
from segcap.metrics_spice import corpus_spice, ImageProps

GIRL, TABLE = ("girl",), ("table",)
YOUNG, SIT = ("girl", "young"), ("girl", "sit-at", "table")
P3 = frozenset({GIRL, TABLE, SIT})
P2 = frozenset({GIRL, YOUNG})
REF_PROPS = {"c1": [P3, P2], "c2": [P3, P2]}


def spice_fixture():
    return {"beam": [
        CandidateSet("c1", [Candidate("a girl sits at a table", -1.0, P3),
                            Candidate("a girl sits at a table", -1.5, P3)], "beam"),
        CandidateSet("c2", [Candidate("a girl sits at a table", -1.0, P3),
                            Candidate("a young girl", -2.0, P2)], "beam"),
    ]}


def test_vocab_size_counting():
    # pooled counts {a: 5, dog: 3, zebra: 2}
    sets = [CandidateSet("1", ["a a a dog zebra", "ignored"]), CandidateSet("2", ["A dog, dog zebra a"])]
    assert vocab_size(sets, 1, min_count=3) == 2
    assert vocab_size(sets, 1, min_count=1) == 3


def test_vocab_size_insufficient():
    with pytest.raises(InsufficientCandidates):
        vocab_size([CandidateSet("1", ["a"])], 2)


def test_vocab_size_table_style_captions():
    sets = [CandidateSet(str(i), [c]) for i, c in enumerate([
        "a man riding a wave on top of a surfboard",
        "a man riding a wave on a surfboard",
        "a group of people standing around a table"])]
    assert vocab_size(sets, 1) == 1  # only "a" reaches three uses


@given(st.lists(st.lists(st.sampled_from(["a", "b", "c d", "E!"]), min_size=3, max_size=3),
                min_size=1, max_size=4), st.integers(1, 4))
def test_vocab_size_monotone(captions, min_count):
    sets = [CandidateSet(str(i), c) for i, c in enumerate(captions)]
    by_n = [vocab_size(sets, n, min_count) for n in (1, 2, 3)]
    assert by_n == sorted(by_n)
    assert vocab_size(sets, 3, min_count) >= vocab_size(sets, 3, min_count + 1)


def test_beam_provenance_requires_sorted_scores():
    with pytest.raises(SegcapError):
        CandidateSet("x", [Candidate("a", -2.0), Candidate("b", -1.0)], "beam")
    CandidateSet("x", [Candidate("a", -2.0), Candidate("b", -1.0)], "sample")
    with pytest.raises(SegcapError):
        CandidateSet("x", ["a"], "mode")


def test_curve_point_n_positive():
    with pytest.raises(SegcapError):
        CurvePoint("m", 0, "x", 1.0)


def test_m_spice_curve_on_worked_example():
    pts = multi_candidate_eval(spice_fixture(), [1, 2], ["m_spice", "m_spice_recall"],
                               reference_props=REF_PROPS)
    vals = {(p.n, p.metric): p.value for p in pts}
    assert vals[(2, "m_spice")] == pytest.approx((6 / 7 + 1.0) / 2)
    assert vals[(2, "m_spice")] > vals[(1, "m_spice")]
    assert vals[(2, "m_spice_recall")] >= vals[(1, "m_spice_recall")]


def test_modes_equal_at_n1():
    pts = multi_candidate_eval(spice_fixture(), [1], ["avg_spice", "oracle_spice", "m_spice", "spice"],
                               reference_props=REF_PROPS)
    assert len({p.value for p in pts}) == 1


def test_recall_curve_non_decreasing():
    bags = [frozenset({("x",)}), frozenset({("y",)}), frozenset({("x",), ("z",)}),
            frozenset(), frozenset({("w",)}), frozenset({("q",)}), frozenset({("y",)}),
            frozenset({("z",)}), frozenset(), frozenset({("v",)})]
    methods = {"s": [CandidateSet("i", [Candidate(str(k), None, b) for k, b in enumerate(bags)])]}
    refs = {"i": [frozenset({("x",), ("y",), ("z",), ("w",)})]}
    pts = multi_candidate_eval(methods, [1, 2, 3, 5, 10], ["m_spice_recall"], reference_props=refs)
    series = [p.value for p in sorted(pts, key=lambda p: p.n)]
    assert series == sorted(series)


def test_single_candidate_matches_plain_metrics():
    refs = {"1": ["a dog runs on grass"], "2": ["a cat sits on a mat"]}
    methods = {"beam": [CandidateSet("1", ["a dog on grass"]), CandidateSet("2", ["the cat sits"])]}
    pts = multi_candidate_eval(methods, [1], ["bleu4", "rouge", "cider", "meteor"], references=refs)
    plain = evaluate([EvalInstance("1", "a dog on grass".split(), [refs["1"][0].split()]),
                      EvalInstance("2", "the cat sits".split(), [refs["2"][0].split()])])
    assert {p.metric: p.value for p in pts} == plain


def test_char_domain_tokens():
    refs = {"1": ["ab c"]}
    methods = {"m": [CandidateSet("1", ["Ab, c!"])]}
    pts = multi_candidate_eval(methods, [1], ["rouge"], references=refs, domain="char")
    assert pts[0].value == 1.0


def test_multi_candidate_errors():
    methods = spice_fixture()
    with pytest.raises(SegcapError):
        multi_candidate_eval(methods, [], ["m_spice"], reference_props=REF_PROPS)
    with pytest.raises(SegcapError):
        multi_candidate_eval(methods, [1], ["m_spice"])
    with pytest.raises(SegcapError):
        multi_candidate_eval(methods, [1], ["bleu4"])
    with pytest.raises(SegcapError):
        multi_candidate_eval(methods, [1], ["nope"], reference_props=REF_PROPS)
    with pytest.raises(InsufficientCandidates):
        multi_candidate_eval(methods, [3], ["m_spice"], reference_props=REF_PROPS)
    no_props = {"m": [CandidateSet("c1", ["a girl"])]}
    with pytest.raises(SegcapError):
        multi_candidate_eval(no_props, [1], ["m_spice"], reference_props=REF_PROPS)


def test_report_csv():
    assert render_report([]) == "method,n,metric,value\n"
    pts = [CurvePoint("sample", 2, "m_spice", 0.5), CurvePoint("beam", 1, "m_spice", 0.25)]
    assert render_report(pts) == "method,n,metric,value\nbeam,1,m_spice,0.25\nsample,2,m_spice,0.5\n"


points = st.lists(st.builds(CurvePoint, st.sampled_from(["beam5", "sample,t=0.7", "x\"y"]),
                            st.integers(1, 10), st.sampled_from(["m_spice", "vocab"]),
                            st.floats(-1e6, 1e6, allow_nan=False)), max_size=12)


@given(points, st.sampled_from(["csv", "json"]))
def test_report_round_trip(pts, fmt):
    text = render_report(pts, fmt)
    assert parse_report(text, fmt) == sorted(pts)
    assert render_report(list(reversed(pts)), fmt) == text
    assert text.endswith("\n")


def test_report_bad_inputs():
    with pytest.raises(SegcapError):
        render_report([], "xml")
    with pytest.raises(SegcapError):
        parse_report("a,b\n")
    with pytest.raises(SegcapError):
        parse_report("[]", "yaml")


def test_emit_report_writes_atomically(tmp_path):
    out = tmp_path / "curve.csv"
    text = emit_report([CurvePoint("beam", 1, "vocab", 3.0)], "csv", out)
    assert out.read_bytes() == text.encode()
    assert [p.name for p in tmp_path.iterdir()] == ["curve.csv"]


def test_emit_report_missing_directory_names_path(tmp_path):
    with pytest.raises(OSError) as exc:
        emit_report([], "csv", tmp_path / "missing" / "x.csv")
    assert "missing" in str(exc.value)


def test_corpus_and_curve_agree():
    images = [ImageProps(cs.image_id, REF_PROPS[cs.image_id], [c.props for c in cs.candidates])
              for cs in spice_fixture()["beam"]]
    pts = multi_candidate_eval(spice_fixture(), [2], ["avg_spice"], reference_props=REF_PROPS)
    assert pts[0].value == corpus_spice(images, "avg", 2)
