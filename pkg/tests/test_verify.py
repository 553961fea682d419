import math

from wpstab.verify import Check, observed_order, run_suite, summary


def test_observed_order():
    assert observed_order([1.0, 1 / 16, 1 / 256]) == 4.0
    assert observed_order([1.0, 0.5, 1 / 32]) == 1.0
    assert observed_order([1.0, 0.0]) == math.inf


def test_check_status():
    assert Check("a", "gate", 1.0, 2.0, True).status == "pass"
    assert Check("a", "gate", 3.0, 2.0, False, advisory=True).status == "warn"
    assert Check("a", "gate", 3.0, 2.0, False).status == "fail"
    s = summary([Check("a", "gate", 3.0, 2.0, False, advisory=True), Check("b", "exact", 0.0, 0.0, True)])
    assert s["ok"] and s["counts"] == {"pass": 1, "warn": 1, "fail": 0}


def test_full_suite_passes():
    checks = run_suite(2, 2, full=True)
    bad = [c for c in checks if c.status != "pass"]
    assert not bad, bad
    names = {c.name for c in checks}
    assert "Böhm(2,2)_2 Lap(f Ric) identity order" in names
    assert any("Kim-Kim" in n for n in names)


def test_suite_on_other_dimensions():
    checks = run_suite(3, 2)
    assert summary(checks)["ok"]
