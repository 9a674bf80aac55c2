# tests/test_report_writer.py
import io
import json

from src.core.invariance import check_bvp
from src.core.reduction import reduce_bvp
from src.core.report_writer import (emit, reduced_dict, render_report, report_dict, to_json, write_table)


def test_text_report_lists_every_item(bundled, settings):
    bvp = bundled("table2_case3")
    text = render_report(check_bvp(bvp.operators["T"], bvp, settings=settings), settings)
    for letter in "abcdef":
        assert f"({letter})" in text
    assert "transform:" in text
    assert text.rstrip().endswith("overall: invariant -> PASS")
    assert f"seed={settings.seed}" in text


def test_constraints_are_listed(bundled, settings):
    bvp = bundled("example2")
    text = render_report(check_bvp(bvp.operators["Q"], bvp, settings=settings), settings)
    assert "constraints:" in text
    assert "PASS (constrained)" in text


def test_json_report_is_deterministic(bundled, settings):
    bvp = bundled("table1_case1")
    report = check_bvp(bvp.operators["T"], bvp, settings=settings)
    first = to_json(report_dict(report, settings))
    assert first == to_json(report_dict(report, settings))
    payload = json.loads(first)
    assert payload["settings"]["seed"] == settings.seed
    assert list(payload) == sorted(payload)


def test_reduced_problem_dict(bundled, settings):
    bvp = bundled("power_flux")
    payload = reduced_dict(reduce_bvp(bvp.operators["X1"], bvp, settings=settings))
    assert payload["tag"] == "parabolic"
    assert payload["dependent"] == "phi"
    assert payload["ansatz"].startswith("u = phi")
    assert len(payload["bc"]) == 1


def test_write_table(tmp_path):
    rows = [(0.1, 1.0), (0.2, 1.0 / 3.0)]
    text = write_table(None, ("omega", "phi"), rows)
    assert text.splitlines() == ["omega,phi", "0.1,1", "0.2,0.333333333333"]
    target = tmp_path / "profile.csv"
    write_table(target, ("omega", "phi"), rows, delimiter="\t")
    assert target.read_text(encoding="utf-8").startswith("omega\tphi\n")


def test_emit(tmp_path):
    stream = io.StringIO()
    emit("done", stream=stream)
    assert stream.getvalue() == "done\n"
    target = tmp_path / "report.txt"
    emit("done", output=target)
    assert target.read_text(encoding="utf-8") == "done\n"
