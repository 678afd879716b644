import sys

import numpy as np
import pytest

from onenas.evolution import EvolutionContext, EvolutionRates, mutate
from onenas.genome import minimal_seed
from onenas.timeseries import SeriesSchema


def random_genome(rng, steps=8, schema=None, cell_types=None, ctx=None):
    """A genome grown from the minimal seed by ``steps`` random mutations.

    Pass ``ctx`` to share innovation numbers with later operations.
    """
    schema = schema or SeriesSchema(("a", "b", "c"), (0, 1, 2), (0, 2))
    ctx = ctx or EvolutionContext(max_recurrent_depth=3)
    if cell_types is not None:
        ctx.cell_types = tuple(cell_types)
    g = minimal_seed(schema, rng, ctx.innovations)
    for _ in range(steps):
        g = mutate(g, rng, ctx)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
