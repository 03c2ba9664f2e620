import numpy as np
import pytest

from segcap.decoding import BOS, EOS, SequenceModel


class TableModel(SequenceModel):
    """Bigram table: row ``h`` is the next-token distribution after token ``h``
    (row 0 is the start state). Column 0 (BOS) must be zero."""

    def __init__(self, rows, max_len=6):
        self.rows = np.asarray(rows, dtype=float)
        v = self.rows.shape[1]
        self.vocabulary = (BOS, *[f"w{i}" for i in range(1, v - 1)], EOS)
        self.bos, self.eos = 0, v - 1
        self.max_len = max_len

    def next_logprobs(self, context, prefix):
        last = prefix[-1] if prefix else 0
        with np.errstate(divide="ignore"):
            return np.log(self.rows[last])


class FixedModel(SequenceModel):
    """Same step distribution at every position."""

    def __init__(self, probs, max_len=6):
        probs = np.asarray(probs, dtype=float)
        self.probs = probs
        self.vocabulary = (BOS, *[f"w{i}" for i in range(1, len(probs) - 1)], EOS)
        self.bos, self.eos = 0, len(probs) - 1
        self.max_len = max_len

    def next_logprobs(self, context, prefix):
        with np.errstate(divide="ignore"):
            return np.log(self.probs)


def random_table_model(rng, concentration=0.5, max_vocab=6, max_len=6):
    """Vocabulary of 3..max_vocab ids (BOS and EOS included), Dirichlet rows."""
    v = int(rng.integers(3, max_vocab + 1))
    rows = np.zeros((v, v))
    for h in range(v):
        rows[h, 1:] = rng.dirichlet(np.full(v - 1, concentration))
    return TableModel(rows, int(rng.integers(2, max_len + 1)))


@pytest.fixture
def table_model_family():
    """The frozen family behind the beam-vs-exhaustive checks."""
    rng = np.random.default_rng(0)
    return [random_table_model(rng) for _ in range(100)]


ACCEPTANCE_RESULTS = {}


def record_acceptance(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_RESULTS[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
