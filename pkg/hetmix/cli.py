from __future__ import annotations

import argparse
import logging
import math
import sys
from collections.abc import Callable, Sequence
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from hetmix import reference
from hetmix.dataio import csv_bytes, dump_json, load_fit_config, read_values, write_csv_atomic, write_json_atomic
from hetmix.errors import DataError, DomainError, HetmixError
from hetmix.fit import (
    KERNEL_FAMILIES,
    Dataset,
    KernelModel,
    fit_candidates,
    heterogeneity_report,
    model_from_result,
    winner_curve,
)
from hetmix.logging_setup import setup_logging
from hetmix.mixing import FamilyId, freq_params, registry, sev_params
from hetmix.mixtures import FamilyModel
from hetmix.models import (
    DataKind,
    FitConfig,
    FitReport,
    HeterogeneityReport,
    HillEstimate,
    MixingSide,
    StepStatus,
    TailMethod,
    TailVerdict,
)
from hetmix.rng import make_stream
from hetmix.settings import get_settings
from hetmix.tails import classify_freq_mixing, classify_model, classify_sev_mixing, empirical_tail_index

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_BAD_PARAMS = 2
EXIT_DATA = 3

ORACLE_ABS_TOL = 1e-7
ORACLE_REL_TOL = 1e-6
_DEFAULT_RANGE_POINTS = 11

SCHEMAS: dict[str, type[FitReport | HeterogeneityReport | TailVerdict | HillEstimate]] = {
    "fit": FitReport,
    "report": HeterogeneityReport,
    "verdict": TailVerdict,
    "hill": HillEstimate,
}


class OracleMismatch(HetmixError):
    pass


def _emit(payload: bytes) -> None:
    sys.stdout.write(payload.decode("utf-8"))
    sys.stdout.flush()


def parse_params(text: str | None) -> dict[str, float]:
    """Принимает строку вида 'a=1,b=2.5,delta=inf'; возвращает словарь параметров."""
    out: dict[str, float] = {}
    if not text:
        return out
    for item in text.split(","):
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise DomainError(f"bad parameter {item!r}: expected name=value")
        try:
            out[key] = float(value)
        except ValueError as exc:
            raise DomainError(f"bad value for {key}: {value!r}") from exc
    return out


def parse_points(text: str, kind: DataKind) -> np.ndarray:
    """Принимает '0,1,5', '0..10' или 'a..b:n' (для убытков); возвращает массив точек."""
    if ".." in text:
        lo_text, _, rest = text.partition("..")
        hi_text, _, n_text = rest.partition(":")
        try:
            lo, hi = float(lo_text), float(hi_text)
            n = int(n_text) if n_text else _DEFAULT_RANGE_POINTS
        except ValueError as exc:
            raise DomainError(f"bad range {text!r}") from exc
        if hi < lo:
            raise DomainError(f"empty range {text!r}")
        if kind is DataKind.counts:
            return np.arange(math.ceil(lo), math.floor(hi) + 1, dtype=float)
        return np.linspace(lo, hi, n)
    try:
        return np.asarray([float(v) for v in text.split(",") if v.strip()], dtype=float)
    except ValueError as exc:
        raise DomainError(f"bad point list {text!r}") from exc


def build_model(family: str, params: dict[str, float]) -> KernelModel | FamilyModel:
    """Принимает имя семейства (узел каталога или ядро) и параметры; возвращает модель."""
    if family in KERNEL_FAMILIES:
        return KernelModel(name=family, params=params)
    try:
        fid = FamilyId(family)
    except ValueError as exc:
        raise DomainError(f"unknown family: {family}") from exc
    return FamilyModel(family=fid, free=params)


# --- команды --------------------------------------------------------------------------


def cmd_eval(args: argparse.Namespace) -> int:
    model = build_model(args.family, parse_params(args.params))
    points = parse_points(args.at, model.data_kind)
    log_density = np.asarray(model.log_density(points), dtype=float)
    density = np.exp(log_density)
    header = ["x_or_y", "pmf_or_pdf", "log_density"]
    rows: list[list[float]] = [
        [float(p), float(d), float(ld)] for p, d, ld in zip(points, density, log_density, strict=True)
    ]
    mismatches = 0
    if args.oracle:
        if isinstance(model, KernelModel):
            raise DomainError("--oracle needs a mixture family")
        law = model.mixing_law()
        header += ["oracle_value", "abs_diff"]
        for row in rows:
            if law.unit_support:
                oracle = reference.quad_mixture_pmf(model.r, law, int(row[0]))
            else:
                oracle = reference.quad_mixture_pdf(model.r, law, row[0])
            diff = abs(row[1] - oracle)
            row += [oracle, diff]
            if diff > ORACLE_ABS_TOL + ORACLE_REL_TOL * abs(oracle):
                mismatches += 1
                logger.error("oracle_mismatch", extra={"family": args.family, "at": row[0], "abs_diff": diff})
    _emit(csv_bytes(header, rows))
    if mismatches:
        raise OracleMismatch(f"{mismatches} point(s) disagree with the quadrature oracle")
    return EXIT_OK


def cmd_sample(args: argparse.Namespace) -> int:
    model = build_model(args.family, parse_params(args.params))
    if args.n <= 0:
        raise DomainError(f"-n must be positive, got {args.n}")
    draws = model.sample(args.n, make_stream(args.seed, 0))
    _emit(csv_bytes(["value"], ([v] for v in draws.tolist())))
    return EXIT_OK


def _dataset(args: argparse.Namespace) -> Dataset:
    kind = DataKind(args.kind)
    values, weights = read_values(Path(args.data), kind)
    return Dataset(kind=kind, values=values, weights=weights)


def _fit_config(args: argparse.Namespace) -> FitConfig:
    config = load_fit_config(Path(args.config) if args.config else None)
    update: dict[str, object] = {"seed": args.seed}
    if getattr(args, "families", None):
        update["families"] = [f.strip() for f in args.families.split(",") if f.strip()]
    if getattr(args, "s_grid", None):
        update["s_grid"] = [float(s) for s in args.s_grid.split(",") if s.strip()]
    return config.model_copy(update=update)


def cmd_fit(args: argparse.Namespace) -> int:
    data = _dataset(args)
    report = fit_candidates(data, _fit_config(args))
    _emit(dump_json(report))
    if args.curve and report.winner is not None:
        model = model_from_result(report.candidates[0])
        write_csv_atomic(Path(args.curve), ("x_or_y", "pmf_or_pdf"), winner_curve(model, data))
    return EXIT_FAILURE if report.status is StepStatus.failed else EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    data = _dataset(args)
    out = Path(args.out)
    report = heterogeneity_report(data, _fit_config(args), out_dir=out)
    write_json_atomic(out / "report.json", report)
    if report.step1.winner is not None:
        model = model_from_result(report.step1.candidates[0])
        write_csv_atomic(out / "winner_curve.csv", ("x_or_y", "pmf_or_pdf"), winner_curve(model, data))
    _emit(dump_json(report))
    return EXIT_FAILURE if report.step1.status is StepStatus.failed else EXIT_OK


def _mixing_verdict(family: str, params: dict[str, float], method: TailMethod) -> TailVerdict:
    side = MixingSide(family)
    if side in (MixingSide.hgsb, MixingSide.chgsb):
        return classify_freq_mixing(freq_params(**params), side, method=method)
    return classify_sev_mixing(sev_params(**params), side, method=method)


def cmd_tailcheck(args: argparse.Namespace) -> int:
    if args.data:
        values, _ = read_values(Path(args.data), DataKind(args.kind))
        _emit(dump_json(empirical_tail_index(values, args.k_fraction)))
        return EXIT_OK
    if not args.family:
        raise DomainError("tailcheck needs --family or --data")
    method = TailMethod(args.method)
    params = parse_params(args.params)
    if args.family in {s.value for s in MixingSide}:
        verdict = _mixing_verdict(args.family, params, method)
    else:
        model = build_model(args.family, params)
        if isinstance(model, KernelModel):
            verdict = TailVerdict(heavy=False, method=method)
        else:
            verdict = classify_model(model, method)
    _emit(dump_json(verdict))
    return EXIT_OK


def cmd_families(args: argparse.Namespace) -> int:
    _emit(dump_json(registry()))
    return EXIT_OK


def cmd_schema(args: argparse.Namespace) -> int:
    _emit(dump_json(SCHEMAS[args.name].model_json_schema(by_alias=True)))
    return EXIT_OK


# --- разбор аргументов ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hetmix", description="Heavy-tailed NB/Gamma mixtures: evaluate, fit, audit.")
    parser.add_argument("--log-level", default=None, help="Log level (default: LOG_LEVEL or INFO)")
    parser.add_argument("--seed", type=int, default=None, help="Seed for sampling and fit restarts")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="Evaluate a family's pmf/pdf")
    p.add_argument("--family", required=True)
    p.add_argument("--params", default="", help="k=v,... (delta=inf allowed)")
    p.add_argument("--at", required=True, help="0,1,2 | a..b | a..b:n")
    p.add_argument("--oracle", action="store_true", help="Compare with the quadrature oracle")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("sample", help="Draw a seeded sample")
    p.add_argument("--family", required=True)
    p.add_argument("--params", default="")
    p.add_argument("-n", type=int, required=True)
    p.set_defaults(handler=cmd_sample)

    for name, handler, help_text in (
        ("fit", cmd_fit, "Fit candidate families and rank by AIC"),
        ("report", cmd_report, "Three-step heterogeneity report"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--data", required=True)
        p.add_argument("--kind", required=True, choices=[k.value for k in DataKind])
        p.add_argument("--families", default=None, help="Comma-separated candidate whitelist")
        p.add_argument("--config", default=None, help="Fit config (JSON or TOML)")
        p.set_defaults(handler=handler)
    sub.choices["fit"].add_argument("--curve", default=None, help="Write the winner's density curve CSV here")
    sub.choices["report"].add_argument("--s-grid", dest="s_grid", default=None, help="Comma-separated shapes s")
    sub.choices["report"].add_argument("--out", default="report", help="Output directory")

    p = sub.add_parser("tailcheck", help="Tail verdict for a family or Hill estimate for data")
    p.add_argument("--family", default=None, help="Catalog node, kernel or mixing law (hgsb, chgsb, hgsg, ihgsg)")
    p.add_argument("--params", default="")
    p.add_argument("--method", default=TailMethod.analytic.value, choices=[m.value for m in TailMethod])
    p.add_argument("--data", default=None)
    p.add_argument("--kind", default=DataKind.losses.value, choices=[k.value for k in DataKind])
    p.add_argument("--k-fraction", dest="k_fraction", type=float, default=0.05)
    p.set_defaults(handler=cmd_tailcheck)

    p = sub.add_parser("families", help="Print the family registry")
    p.set_defaults(handler=cmd_families)

    p = sub.add_parser("schema", help="Print the JSON schema of an output document")
    p.add_argument("--name", required=True, choices=sorted(SCHEMAS))
    p.set_defaults(handler=cmd_schema)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    """Принимает аргументы командной строки; возвращает код выхода (2: параметры, 3: данные, 1: сбой или оракул)."""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    if args.seed is None:
        args.seed = get_settings().default_seed
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except (DomainError, ValidationError, ValueError) as exc:
        logger.error("bad_parameters", extra={"command": args.command, "error": str(exc)})
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_PARAMS
    except DataError as exc:
        logger.error("bad_data", extra={"command": args.command, "error": str(exc)})
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except HetmixError as exc:
        logger.error("command_failed", extra={"command": args.command, "error": str(exc)})
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
