"""The ten acceptance criteria. The runner executes in fresh interpreters with
FRACMIN_THREADS=1 and FRACMIN_THREADS=4; criteria 1-9 are judged on the
single-thread run and criterion 10 compares the CSV hashes of both."""
import pytest

from fracmin.acceptance import LIMITS, csv_hashes, run_subprocess


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    out = {}
    for threads in (1, 4):
        d = tmp_path_factory.mktemp(f"threads{threads}")
        out[threads] = (str(d), run_subprocess(str(d), threads))
    return out


def _report(config, k, ok, detail=""):
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'}{detail}"
    print(line)
    config.criterion_lines.append(line)


@pytest.mark.parametrize("k", range(1, 10))
def test_criterion(runs, k, pytestconfig):
    summary = runs[1][1][k]
    fast = summary["seconds"] <= LIMITS[k]
    ok = summary["passed"] and fast
    _report(pytestconfig, k, ok, f" ({summary['seconds']:.1f} s, limit {LIMITS[k]} s)")
    assert summary["passed"], f"criterion {k} check failed; see criterion_{k}.csv"
    assert fast, f"criterion {k} took {summary['seconds']:.1f} s"


def test_criterion_10_determinism(runs, pytestconfig):
    a = csv_hashes(runs[1][0])
    b = csv_hashes(runs[4][0])
    ok = len(a) == 9 and a == b
    _report(pytestconfig, 10, ok)
    assert ok, {k: (a.get(k), b.get(k)) for k in set(a) | set(b) if a.get(k) != b.get(k)}
