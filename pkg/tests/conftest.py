import os
import shutil

import numpy as np
import pytest

DATA = os.path.join(os.path.dirname(__file__), "data")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("COLPACK_EXTENDED") == "1":
        return
    skip = pytest.mark.skip(reason="extended run; set COLPACK_EXTENDED=1")
    for item in items:
        if "extended" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def hard_disk_table():
    """Per-pressure hard-disk table: P, phi, phi_sigma, psi6, psi6_sigma."""
    arr = np.genfromtxt(os.path.join(DATA, "hard_disk_table.csv"), delimiter=",", names=True)
    return {name: arr[name] for name in arr.dtype.names}


@pytest.fixture(scope="session")
def bench_fixtures(tmp_path_factory):
    """Pristine benchmark working directories, built once per session."""
    from colpack.bench import fixtures

    return fixtures.generate_fixtures(str(tmp_path_factory.mktemp("bench_fixtures")))


@pytest.fixture
def scratch_fixtures(bench_fixtures, tmp_path):
    """Copy the named fixtures into this test's tmp dir so stage tools can write freely."""
    def copy(names):
        out = {}
        for name in names:
            dst = tmp_path / "fx" / name
            shutil.copytree(bench_fixtures[name], dst, ignore=shutil.ignore_patterns("jobs"))
            out[name] = str(dst)
        return out

    return copy


_VERDICTS = []


@pytest.fixture
def verdict(request):
    """Report one acceptance criterion: prints a PASS/FAIL line, then fails the test if any check failed."""
    reporter = request.config.pluginmanager.getplugin("terminalreporter")

    def report(number, title, checks):
        ok = all(c[1] for c in checks)
        detail = "; ".join(f"{label}: {'ok' if good else 'FAIL'} ({info})" for label, good, info in checks)
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title} | {detail}"
        _VERDICTS.append((number, line))
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        else:
            print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_VERDICTS):
        terminalreporter.write_line(line)
