import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "scqr",
    max_examples=int(os.environ.get("SCQR_HYPOTHESIS_EXAMPLES", "25")),
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
    derandomize=True,
)
settings.load_profile("scqr")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import re
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None:
        return
    lines = list(mod.REPORT)
    seen = {int(m.group(1)) for m in (re.match(r"criterion\s+(\d+)", s) for s in lines) if m}
    # a criterion that raised before recording still gets a line
    for rep in terminalreporter.stats.get("failed", []) + terminalreporter.stats.get("error", []):
        m = re.search(r"test_acceptance\.py::test_c(\d+)_(\w+)", rep.nodeid)
        if m and int(m.group(1)) not in seen:
            lines.append(f"criterion {int(m.group(1)):>2} FAIL  {m.group(2)}: raised {rep.longrepr.reprcrash.message if hasattr(rep.longrepr, 'reprcrash') else 'error'}")
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
