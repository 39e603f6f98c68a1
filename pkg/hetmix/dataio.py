from __future__ import annotations

import csv
import io
import logging
import math
import os
import sys
import tempfile
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any

import numpy as np
import orjson
from pydantic import BaseModel, ValidationError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from hetmix.errors import DataError
from hetmix.models import DataKind, FitConfig

logger = logging.getLogger(__name__)

JSON_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_APPEND_NEWLINE


def _number(token: str) -> float | None:
    try:
        return float(token)
    except ValueError:
        return None


def parse_values(text: str, kind: DataKind, source: str = "<data>") -> tuple[np.ndarray, np.ndarray | None]:
    """Принимает текст CSV и тип данных; возвращает (значения, веса или None).

    Первая строка может быть заголовком, строки с # игнорируются, второй столбец (если есть) содержит веса.
    """
    values: list[float] = []
    weights: list[float] = []
    weighted: bool | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        cells = [c.strip() for c in line.split(",")]
        numbers = [_number(c) for c in cells]
        if any(v is None for v in numbers):
            if not values and weighted is None:
                continue  # заголовок
            raise DataError(f"{source}:{lineno}: not a number: {raw.strip()!r}")
        if len(numbers) > 2:
            raise DataError(f"{source}:{lineno}: expected one value (and an optional weight), got {len(numbers)} columns")
        has_weight = len(numbers) == 2
        if weighted is None:
            weighted = has_weight
        elif weighted != has_weight:
            raise DataError(f"{source}:{lineno}: inconsistent number of columns")
        value = numbers[0]
        assert value is not None
        if not math.isfinite(value):
            raise DataError(f"{source}:{lineno}: value must be finite")
        if kind is DataKind.counts and (value < 0 or value != math.floor(value)):
            raise DataError(f"{source}:{lineno}: counts must be nonnegative integers, got {value:g}")
        if kind is DataKind.losses and not value > 0:
            raise DataError(f"{source}:{lineno}: losses must be positive, got {value:g}")
        values.append(value)
        if has_weight:
            w = numbers[1]
            assert w is not None
            if not w >= 0 or not math.isfinite(w):
                raise DataError(f"{source}:{lineno}: weights must be finite and nonnegative")
            weights.append(w)
    if not values:
        raise DataError(f"{source}: no data rows")
    return np.asarray(values, dtype=float), (np.asarray(weights, dtype=float) if weighted else None)


def read_values(path: Path, kind: DataKind) -> tuple[np.ndarray, np.ndarray | None]:
    """Принимает путь к CSV и тип данных; возвращает (значения, веса или None); DataError при ошибке чтения."""
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    values, weights = parse_values(text, kind, str(path))
    logger.info("data_loaded", extra={"path": str(path), "kind": kind.value, "n": int(values.size)})
    return values, weights


def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def format_float(value: float) -> str:
    return format(float(value), ".17g")


def csv_bytes(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> bytes:
    """Принимает заголовок и строки; возвращает CSV (числа с плавающей точкой в формате .17g)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(v) if isinstance(v, float | np.floating) else v for v in row])
    return buf.getvalue().encode("utf-8")


def write_csv_atomic(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    _atomic_write(path, csv_bytes(header, rows))


def _default(obj: Any) -> Any:
    if isinstance(obj, BaseModel):
        return obj.model_dump(mode="json", by_alias=True)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON-serializable: {type(obj).__name__}")


def _finite(obj: Any) -> Any:
    """Нечисловые значения float (inf, nan) в JSON записываются строками."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list | tuple):
        return [_finite(v) for v in obj]
    return obj


def dump_json(obj: Any) -> bytes:
    """Принимает модель pydantic или JSON-совместимый объект; возвращает байт-стабильный JSON."""
    if isinstance(obj, BaseModel):
        obj = obj.model_dump(mode="json", by_alias=True)
    return orjson.dumps(_finite(obj), option=JSON_OPTIONS, default=_default)


def write_json_atomic(path: Path, obj: Any) -> None:
    _atomic_write(path, dump_json(obj))


def load_fit_config(path: Path | None) -> FitConfig:
    """Принимает путь к JSON или TOML (или None); возвращает FitConfig."""
    if path is None:
        return FitConfig()
    try:
        raw = path.read_bytes()
        data = tomllib.loads(raw.decode("utf-8")) if path.suffix.lower() == ".toml" else orjson.loads(raw)
    except (OSError, UnicodeDecodeError, orjson.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise DataError(f"cannot read fit config {path}: {exc}") from exc
    if isinstance(data, dict) and isinstance(data.get("fit"), dict):
        data = data["fit"]
    try:
        return FitConfig.model_validate(data)
    except ValidationError as exc:
        raise DataError(f"invalid fit config {path}: {exc.errors()[0]['msg']}") from exc
