import json

import numpy as np

from sddeflow.report import Status, VerificationReport, dumps, worst


def test_dumps_sorted_and_full_precision():
    s = dumps({"b": 0.1, "a": [1, np.float64(1 / 3)], "c": Status.PASS}, indent=None)
    assert s == '{"a": [1, 0.33333333333333331], "b": 0.10000000000000001, "c": "PASS"}\n'
    assert json.loads(s)["a"][1] == 1 / 3


def test_dumps_nonfinite_and_arrays():
    out = json.loads(dumps({"x": np.array([np.nan, np.inf, 2.0]), "ok": np.bool_(True)}))
    assert out == {"x": ["NaN", "Infinity", 2.0], "ok": True}


def test_report_truthiness_and_worst():
    r = VerificationReport("c", Status.WARN)
    assert r and not r.passed
    assert not VerificationReport("c", Status.FAIL)
    assert worst(Status.PASS, Status.WARN) is Status.WARN
    assert worst() is Status.PASS
    d = json.loads(r.to_json())
    assert set(d) == {"check", "status", "tolerances", "counterexamples", "statistics", "notes"}
