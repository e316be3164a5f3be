"""Session-scoped study fixtures shared by the acceptance battery.

Each fixture runs a full desk-scale study once per session; individual
tests only read the aggregated reports.
"""

from dataclasses import replace

import pytest

from lineguard.harness import (
    ScenarioCase,
    external_suite,
    internal_suite,
    normal_suite,
    run_suite,
    sweep_line_params,
    sweep_noise,
    sweep_suite,
)


@pytest.fixture(scope="session")
def internal_report():
    return run_suite(internal_suite())


@pytest.fixture(scope="session")
def external_report():
    return run_suite(external_suite())


@pytest.fixture(scope="session")
def normal_report():
    return run_suite(normal_suite())


@pytest.fixture(scope="session")
def sweep_cases():
    return sweep_suite()


@pytest.fixture(scope="session")
def noise_reports(sweep_cases):
    return dict(sweep_noise(sweep_cases, [30.0, 60.0, 80.0, 110.0]))


@pytest.fixture(scope="session")
def param_reports(sweep_cases):
    return dict(sweep_line_params(sweep_cases, [-10.0, 10.0]))


@pytest.fixture(scope="session")
def sweep_baseline_report(sweep_cases):
    return run_suite(sweep_cases)


@pytest.fixture(scope="session")
def sweep_lossy_report(sweep_cases):
    lossy = [
        ScenarioCase(sid=c.sid, part=c.part,
                     scenario=replace(c.scenario, packet_loss_prob=0.05))
        for c in sweep_cases
    ]
    return run_suite(lossy)
