import numpy as np
import pytest
from hypothesis import strategies as st

from dbnlab.distributions import Dist
from dbnlab.state_space import StateSpace


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@st.composite
def spaces(draw, max_n=4, max_q=4, max_size=256):
    n = draw(st.integers(1, max_n))
    cards = tuple(draw(st.lists(st.integers(2, max_q), min_size=n, max_size=n)))
    size = int(np.prod(cards))
    if size > max_size:
        cards = cards[:1]
    return StateSpace(cards)


@st.composite
def dists(draw, space=None, allow_zeros=True):
    sp = space if space is not None else draw(spaces())
    w = draw(
        st.lists(
            st.floats(0.0 if allow_zeros else 1e-3, 1.0, allow_nan=False),
            min_size=sp.size,
            max_size=sp.size,
        )
    )
    w = np.asarray(w)
    if w.sum() == 0:
        w[0] = 1.0
    return Dist(sp, w / w.sum())


# acceptance criteria report: one line per criterion, printed after the run
ACCEPTANCE: dict[str, tuple[bool, str, float]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k)):
        ok, detail, secs = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {int(key):2d}: {'PASS' if ok else 'FAIL'}  ({secs:.1f} s)  {detail}")
