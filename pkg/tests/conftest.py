import sys

import numpy as np
import pytest

from rqsim.patterns import Pattern, PatternDatabase, SynthSpec, gen_synthetic_db

RAPECRISIS = Pattern("www.rapecrisis.org.uk", ("twitter.com", "www.rapecrisislondon.org"))
FIRST_BLOCK = frozenset({"cnn.com", "www.rapecrisis.org.uk", "img.feedpress.it"})
ABD_BLOCKS = (
    frozenset({"cnn.com", "www.rapecrisis.org.uk", "img.feedpress.it"}),
    frozenset({"github.com", "twitter.com", "s.ebay.de"}),
    frozenset({"www.rapecrisislondon.org", "ytimg.com", "conn.skype.com"}),
)
REST_UNION = ABD_BLOCKS[1] | ABD_BLOCKS[2]


@pytest.fixture
def rapecrisis_db():
    return PatternDatabase([RAPECRISIS, Pattern("google.com", ("ssl.gstatic.com",))])


@pytest.fixture(scope="session")
def small_synth_db():
    """About 300 patterns with shared secondaries."""
    return gen_synthetic_db(SynthSpec(300, overlap_rate=0.4), np.random.default_rng(2024))


@pytest.fixture(scope="session")
def disjoint_db():
    return gen_synthetic_db(SynthSpec(300, overlap_rate=0.0), np.random.default_rng(99))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.REPORT:
        terminalreporter.write_line(line)
