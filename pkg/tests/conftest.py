from __future__ import annotations

import pytest


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    # One visible pass/fail line per acceptance criterion.
    if report.when == "call" and "test_acceptance.py" in item.nodeid:
        status = "PASS" if report.passed else "FAIL"
        print(f"\nACCEPTANCE {item.name}: {status}")
