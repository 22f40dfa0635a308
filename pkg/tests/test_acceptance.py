"""Acceptance criteria, one test per criterion.

Each test prints a single PASS/FAIL line straight to the terminal. Criteria
10 and 11 are known not to hold (see the README); they stay implemented at
full strength and are marked strict xfail, so an unexpected pass is also
reported.
"""
import json

import pytest

from fwescape.acceptance import CRITERIA, NAMES, TOLERANCES, run_acceptance

KNOWN_FAILURES = {
    10: "domination of the precession minimum fails near |eps| -> 0 for D in {3, 20, 50}",
    11: "alpha=5 section distribution at eps_noise=0.05 is flat-topped, not bimodal (dip test)",
}

PARAMS = [pytest.param(cid, marks=pytest.mark.xfail(strict=True, reason=KNOWN_FAILURES[cid]))
          if cid in KNOWN_FAILURES else cid for cid in sorted(CRITERIA)]


@pytest.mark.parametrize("cid", PARAMS)
def test_criterion(cid, capsys):
    (res,) = run_acceptance([cid])
    with capsys.disabled():
        print("\n" + res.line())
        if not res.passed:
            print("    measured: " + json.dumps(res.measured, default=str)[:400])
    assert res.passed, res.line()


def test_tolerances_pinned():
    assert TOLERANCES["c1.max_abs_y"] == 1e-3
    assert TOLERANCES["c2.mirror_dS"] == 1e-6
    assert TOLERANCES["c3.threshold"] == 0.05
    assert TOLERANCES["c4.oracle_rms"] == 1e-2 and TOLERANCES["c4.action_rel"] == 1e-4
    assert TOLERANCES["c5.oracle_rms"] == 5e-2
    assert TOLERANCES["c6.max_crossings"] == 0
    assert (TOLERANCES["c7.energy"], TOLERANCES["c7.speed"]) == (1e-8, 1e-6)
    assert TOLERANCES["c8.action_rel"] == 1e-4
    assert TOLERANCES["c9.agreement"] == 1e-6
    assert TOLERANCES["c10.oracle_rel"] == 1e-3
    assert TOLERANCES["c11.confidence"] == 0.95 and TOLERANCES["c11.min_escapes"] == 500
    assert set(NAMES) == set(CRITERIA) == set(range(1, 12))


if __name__ == "__main__":
    for r in run_acceptance():
        print(r.line())
