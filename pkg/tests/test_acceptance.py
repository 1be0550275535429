"""End-to-end acceptance criteria.

The pipeline runs once per session (twice internally, for the determinism
check) and each criterion is reported as its own test.  Every criterion's
PASS/FAIL line is also printed in the terminal summary.  Run this file
directly to get only those lines: ``python tests/test_acceptance.py``.
"""

import sys

import pytest

from theory_of_machine.acceptance import run_acceptance
from theory_of_machine.config import RunConfig

RESULT_LINES: list[str] = []

NAMES = {
    1: "gradient_fidelity",
    2: "linear_oracle_exactness",
    3: "embedding_necessity",
    4: "held_out_generalization",
    5: "embedding_structure",
    6: "nuisance_rejection",
    7: "stateful_ablation",
    8: "determinism",
    9: "pca_properties",
}


@pytest.fixture(scope="module")
def results(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance")
    res = run_acceptance(RunConfig(threads=4), out, determinism=True, echo=lambda s: None)
    RESULT_LINES.extend(r.line() for r in res)
    return {r.number: r for r in res}


@pytest.mark.acceptance
@pytest.mark.parametrize("number", sorted(NAMES), ids=[f"C{n}_{NAMES[n]}" for n in sorted(NAMES)])
def test_criterion(results, number):
    r = results[number]
    assert r.passed, r.line()


if __name__ == "__main__":
    import tempfile

    with tempfile.TemporaryDirectory() as d:
        res = run_acceptance(RunConfig(threads=4), d, determinism=True)
    sys.exit(0 if all(r.passed for r in res) else 1)
