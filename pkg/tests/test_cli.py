import json
from pathlib import Path

import pytest

from hetmix import reference
from hetmix.cli import EXIT_BAD_PARAMS, EXIT_DATA, EXIT_FAILURE, EXIT_OK, build_model, parse_params, parse_points, run
from hetmix.errors import DomainError
from hetmix.fit import KernelModel
from hetmix.mixing import CATALOG
from hetmix.mixtures import FamilyModel
from hetmix.models import DataKind
from hetmix.rng import make_stream


def _csv_rows(text: str) -> list[list[str]]:
    return [line.split(",") for line in text.strip().splitlines()]


def test_parse_params_and_points() -> None:
    assert parse_params("a=1, b=2.5,delta=inf") == {"a": 1.0, "b": 2.5, "delta": float("inf")}
    assert parse_params("") == {}
    with pytest.raises(DomainError):
        parse_params("a")
    with pytest.raises(DomainError):
        parse_params("a=x")
    assert parse_points("0..3", DataKind.counts).tolist() == [0.0, 1.0, 2.0, 3.0]
    assert parse_points("1..2:3", DataKind.losses).tolist() == [1.0, 1.5, 2.0]
    assert parse_points("0.5,2", DataKind.losses).tolist() == [0.5, 2.0]
    with pytest.raises(DomainError):
        parse_points("3..1", DataKind.counts)


def test_build_model_dispatches() -> None:
    assert isinstance(build_model("geometric", {"q": 0.5}), KernelModel)
    with pytest.raises(DomainError):
        build_model("nope", {})


def test_eval_waring(capsys: pytest.CaptureFixture[str]) -> None:
    assert run(["eval", "--family", "waring", "--params", "a=1,b=1", "--at", "0..3"]) == EXIT_OK
    rows = _csv_rows(capsys.readouterr().out)
    assert rows[0] == ["x_or_y", "pmf_or_pdf", "log_density"]
    assert float(rows[2][1]) == pytest.approx(1 / 6, rel=1e-12)
    assert len(rows) == 5


def test_eval_with_oracle(capsys: pytest.CaptureFixture[str]) -> None:
    code = run(["eval", "--family", "pareto2", "--params", "alpha=1,beta=1", "--at", "1,3", "--oracle"])
    assert code == EXIT_OK
    rows = _csv_rows(capsys.readouterr().out)
    assert rows[0][-2:] == ["oracle_value", "abs_diff"]
    assert float(rows[1][1]) == pytest.approx(0.25, rel=1e-12)
    assert float(rows[1][3]) == pytest.approx(0.25, rel=1e-8)


def test_eval_oracle_mismatch_exits_one(monkeypatch: pytest.MonkeyPatch, capsys: pytest.CaptureFixture[str]) -> None:
    monkeypatch.setattr(reference, "quad_mixture_pmf", lambda r, law, x: 0.0)
    code = run(["eval", "--family", "waring", "--params", "a=1,b=1", "--at", "0", "--oracle"])
    assert code == EXIT_FAILURE
    assert "disagree" in capsys.readouterr().err


def test_bad_parameters_exit_two(capsys: pytest.CaptureFixture[str]) -> None:
    assert run(["eval", "--family", "waring", "--params", "a=1", "--at", "0"]) == EXIT_BAD_PARAMS
    assert run(["eval", "--family", "nope", "--at", "0"]) == EXIT_BAD_PARAMS
    assert run(["eval", "--family", "geometric", "--params", "q=0.5", "--at", "0", "--oracle"]) == EXIT_BAD_PARAMS
    assert run(["sample", "--family", "geometric", "--params", "q=0.5", "-n", "0"]) == EXIT_BAD_PARAMS
    assert "error:" in capsys.readouterr().err


def test_missing_data_exits_three(tmp_path: Path) -> None:
    assert run(["fit", "--data", str(tmp_path / "none.csv"), "--kind", "counts"]) == EXIT_DATA
    bad = tmp_path / "bad.csv"
    bad.write_text("1\n-2\n", encoding="utf-8")
    assert run(["fit", "--data", str(bad), "--kind", "counts"]) == EXIT_DATA


def test_sample_is_seeded(capsys: pytest.CaptureFixture[str]) -> None:
    argv = ["--seed", "5", "sample", "--family", "pareto2", "--params", "alpha=3,beta=2", "-n", "20"]
    assert run(argv) == EXIT_OK
    first = capsys.readouterr().out
    assert run(argv) == EXIT_OK
    assert capsys.readouterr().out == first
    rows = _csv_rows(first)
    assert rows[0] == ["value"]
    assert len(rows) == 21
    assert all(float(v[0]) > 0 for v in rows[1:])


def test_families_and_schema(capsys: pytest.CaptureFixture[str]) -> None:
    assert run(["families"]) == EXIT_OK
    assert len(json.loads(capsys.readouterr().out)) == len(CATALOG)
    assert run(["schema", "--name", "report"]) == EXIT_OK
    schema = json.loads(capsys.readouterr().out)
    assert "step1" in schema["properties"]


def test_tailcheck_mixing_laws(capsys: pytest.CaptureFixture[str]) -> None:
    assert run(["tailcheck", "--family", "ihgsg", "--params", "alpha=1.5,beta=2,gamma=1,delta=inf"]) == EXIT_OK
    verdict = json.loads(capsys.readouterr().out)
    assert verdict["heavy"] is True
    assert verdict["power_order"] == pytest.approx(1.5)
    assert verdict["first_infinite_moment"] == 2
    assert run(["tailcheck", "--family", "hgsg", "--params", "alpha=1.5,beta=2,gamma=1,delta=inf"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["heavy"] is False
    assert run(["tailcheck", "--family", "waring", "--params", "a=1,b=2.5", "--method", "numeric-limit"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["power_order"] == pytest.approx(2.5, abs=1e-4)


def test_tailcheck_hill_on_data(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    losses = FamilyModel(family="pareto2", free={"alpha": 1.5, "beta": 1.0}).sample(50_000, make_stream(1, 0))
    path = tmp_path / "losses.csv"
    path.write_text("\n".join(f"{v:.17g}" for v in losses), encoding="utf-8")
    assert run(["tailcheck", "--data", str(path), "--k-fraction", "0.02"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["tail_index"] == pytest.approx(1.5, abs=0.25)


def test_fit_and_report_commands(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    data = tmp_path / "counts.csv"
    data.write_text("count\n0\n1\n2\n3\n1\n0\n", encoding="utf-8")
    curve = tmp_path / "curve.csv"
    code = run(["fit", "--data", str(data), "--kind", "counts", "--families", "geometric", "--curve", str(curve)])
    assert code == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["winner"] == "geometric"
    assert report["estimator"] == "maximum likelihood + AIC"
    assert curve.read_text().startswith("x_or_y,pmf_or_pdf\n")

    out = tmp_path / "report"
    code = run(["report", "--data", str(data), "--kind", "counts", "--families", "geometric", "--out", str(out)])
    assert code == EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    saved = json.loads((out / "report.json").read_text())
    assert printed == saved
    assert saved["step3_status"] == "skipped"
    assert (out / "winner_curve.csv").exists()
