"""Shared fixtures: the base-scenario runs are expensive, so one context
and one report per approach serve every test module that needs them."""

import pytest

from driftguard import runner
from driftguard.scenarios import ScenarioSpec


@pytest.fixture(scope="session")
def base_ctx():
    return runner.prepare_run(ScenarioSpec(seed=1))


@pytest.fixture(scope="session")
def base_reports(base_ctx):
    return {
        approach: runner.run(base_ctx.spec, approach, context=base_ctx)
        for approach in runner.APPROACHES
    }
