import json
import math
from pathlib import Path

import numpy as np
import pytest

from hetmix.dataio import csv_bytes, dump_json, load_fit_config, parse_values, read_values, write_csv_atomic
from hetmix.errors import DataError
from hetmix.models import DataKind, FitConfig


def test_parse_values_with_header_comments_and_weights() -> None:
    text = "count,weight\n# observed\n0,2\n3,1  # note\n\n5,0.5\n"
    values, weights = parse_values(text, DataKind.counts)
    assert values.tolist() == [0.0, 3.0, 5.0]
    assert weights is not None
    assert weights.tolist() == [2.0, 1.0, 0.5]


def test_parse_values_single_column() -> None:
    values, weights = parse_values("1.5\n2.25\n", DataKind.losses)
    assert values.tolist() == [1.5, 2.25]
    assert weights is None


@pytest.mark.parametrize(
    ("text", "kind", "match"),
    [
        ("", DataKind.counts, "no data rows"),
        ("x\n", DataKind.counts, "no data rows"),
        ("1\nabc\n", DataKind.counts, "not a number"),
        ("-1\n", DataKind.counts, "nonnegative integers"),
        ("1.5\n", DataKind.counts, "nonnegative integers"),
        ("0\n", DataKind.losses, "positive"),
        ("1,2,3\n", DataKind.losses, "columns"),
        ("1,1\n2\n", DataKind.losses, "inconsistent"),
        ("1,-1\n", DataKind.losses, "weights"),
        ("inf\n", DataKind.losses, "finite"),
    ],
)
def test_parse_values_rejects_bad_rows(text: str, kind: DataKind, match: str) -> None:
    with pytest.raises(DataError, match=match):
        parse_values(text, kind)


def test_read_values_reports_missing_file(tmp_path: Path) -> None:
    with pytest.raises(DataError, match="cannot read"):
        read_values(tmp_path / "missing.csv", DataKind.counts)
    path = tmp_path / "ok.csv"
    path.write_text("y\n1.0\n2.0\n", encoding="utf-8")
    values, _ = read_values(path, DataKind.losses)
    assert values.tolist() == [1.0, 2.0]


def test_csv_uses_round_trip_float_format(tmp_path: Path) -> None:
    payload = csv_bytes(["x", "p"], [[1, 0.1], [2, np.float64(1 / 3)]])
    assert payload == b"x,p\n1,0.10000000000000001\n2,0.33333333333333331\n"
    path = tmp_path / "nested" / "curve.csv"
    write_csv_atomic(path, ["x", "p"], [[0, 0.5]])
    assert path.read_text() == "x,p\n0,0.5\n"
    assert [p.name for p in path.parent.iterdir()] == ["curve.csv"]


def test_dump_json_is_sorted_and_handles_infinities() -> None:
    out = dump_json({"b": math.inf, "a": [1.0, -math.inf], "c": np.array([1, 2])})
    assert out.endswith(b"\n")
    assert out.index(b'"a"') < out.index(b'"b"') < out.index(b'"c"')
    assert json.loads(out) == {"a": [1.0, "-inf"], "b": "inf", "c": [1, 2]}


def test_dump_json_uses_schema_alias() -> None:
    from hetmix.models import HillEstimate

    obj = json.loads(dump_json(HillEstimate(tail_index=2.0, k=5, n=100, k_fraction=0.05)))
    assert obj["schema"] == "hetmix/1"


def test_load_fit_config_json_and_toml(tmp_path: Path) -> None:
    assert load_fit_config(None) == FitConfig()
    js = tmp_path / "fit.json"
    js.write_text('{"restarts": 3, "families": ["waring"]}', encoding="utf-8")
    config = load_fit_config(js)
    assert config.restarts == 3
    assert config.families == ["waring"]
    toml = tmp_path / "fit.toml"
    toml.write_text("[fit]\ns_grid = [1.0, 3.0]\nseed = 7\n", encoding="utf-8")
    config = load_fit_config(toml)
    assert config.s_grid == [1.0, 3.0]
    assert config.seed == 7


def test_load_fit_config_errors(tmp_path: Path) -> None:
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(DataError, match="cannot read"):
        load_fit_config(bad)
    invalid = tmp_path / "invalid.json"
    invalid.write_text('{"restarts": 0}', encoding="utf-8")
    with pytest.raises(DataError, match="invalid fit config"):
        load_fit_config(invalid)
