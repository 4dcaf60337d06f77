"""Batch command-line driver: simulate, estimate, index, trend.

Exit codes: 0 success, 1 I/O error, 2 configuration/validation error,
3 numerical failure. All randomness flows from ``--seed``; outputs are
written atomically so reruns with unchanged inputs are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from datetime import date
from pathlib import Path

from .econ import report
from .econ.analysis import hedonic_index, partition_meta, residual_trend_series
from .econ.design import (
    ModelSpec,
    STANDARD_CONTROLS,
    TOKEN_CONTROLS,
    TREATMENT_CONTINUOUS,
    TREATMENT_DISCRETE,
)
from .econ.estimators import estimate_did
from .errors import (
    ConfigurationError,
    DegenerateDesignError,
    GridHedonicError,
    InvalidInputError,
    NumericalError,
)
from .grid import group_waves, load_waves
from .ioutil import atomic_write_text
from .ledger import (
    MapMetadata,
    RateTable,
    build_event_samples,
    convert_transactions,
    ingest_transactions,
    panel_to_csv,
)
from .synth import DGPConfig, generate_market

log = logging.getLogger("gridhedonic")

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _setup_logging() -> None:
    level = os.environ.get("GRIDHEDONIC_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _parse_groups(raw: str) -> range:
    try:
        lo, hi = raw.split("..")
        return range(int(lo), int(hi) + 1)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected A..B (inclusive group id range), got {raw!r}"
        ) from None


def _parse_date(raw: str) -> date:
    try:
        return date.fromisoformat(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YYYY-MM-DD, got {raw!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridhedonic",
        description="Event-window hedonic analysis of gridded land markets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic market")
    sim.add_argument("--config", type=Path, default=None,
                     help="DGP config JSON (defaults used when omitted)")
    sim.add_argument("--out", type=Path, required=True, help="output directory")
    sim.add_argument("--seed", type=int, default=None,
                     help="override the config seed")

    def add_panel_args(cmd: argparse.ArgumentParser) -> None:
        cmd.add_argument("--transactions", type=Path, required=True)
        cmd.add_argument("--waves", type=Path, required=True)
        cmd.add_argument("--rates", type=Path, required=True)
        cmd.add_argument("--map", type=Path, default=None, dest="map_metadata",
                         help="NFT map metadata JSON; derived from the waves "
                              "file when omitted")
        cmd.add_argument("--out", type=Path, required=True)
        cmd.add_argument("--window-days", type=int, default=7)
        cmd.add_argument("--groups", type=_parse_groups, default=None,
                         help="inclusive group id range A..B to keep")

    est = sub.add_parser("estimate", help="fit the announcement regressions")
    add_panel_args(est)
    est.add_argument("--treatment", choices=["near", "logdist"], default="near")
    est.add_argument("--fe", choices=["week", "day"], default="day",
                     help="time fixed-effect frequency for single-spec batches")
    est.add_argument("--se", choices=["classical", "hc1"], default="classical")
    est.add_argument("--multi", action="store_true",
                     help="triple-differences batch with the multi-wave indicator")
    est.add_argument("--meta-cut", type=_parse_date, default=None,
                     help="partition announcements before/after this date")

    idx = sub.add_parser("index", help="hedonic price index from period effects")
    add_panel_args(idx)
    idx.add_argument("--fe", choices=["week", "day"], default="week",
                     help="index period")

    trend = sub.add_parser("trend", help="event-day residual trends, near vs far")
    add_panel_args(trend)

    return parser


# ---------------------------------------------------------------------------
# shared pipeline
# ---------------------------------------------------------------------------


def _require_inputs(*paths: Path | None) -> None:
    for path in paths:
        if path is not None and not path.exists():
            raise ConfigurationError(f"input file not found: {path}")


def _load_panel(args: argparse.Namespace):
    _require_inputs(args.transactions, args.waves, args.rates, args.map_metadata)
    waves, map_size = load_waves(args.waves)
    groups = group_waves(waves)
    if args.map_metadata is not None:
        metadata = MapMetadata.from_json(args.map_metadata)
    else:
        metadata = MapMetadata.from_waves(waves, map_size)
    rates = RateTable.from_csv(args.rates)
    transactions, rejections = ingest_transactions(args.transactions, metadata)
    converted, conv_rejections = convert_transactions(transactions, rates)
    panel = build_event_samples(
        converted, groups, rates,
        window_days=args.window_days,
        groups_filter=args.groups,
    )
    rejections = rejections + conv_rejections + panel.rejections
    log.info("panel: %d samples, %d rejected records", len(panel.samples), len(rejections))
    return panel.samples, groups, rejections


def _write_rejections(out_dir: Path, rejections) -> None:
    lines = ["tx_id,stage,reason"]
    lines += [f"{r.tx_id},{r.stage},\"{r.reason}\"" for r in rejections]
    atomic_write_text(out_dir / "rejections.csv", "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.config is not None:
        _require_inputs(args.config)
        config = DGPConfig.from_json(args.config)
    else:
        config = DGPConfig()
    if args.seed is not None:
        config.seed = args.seed
    market = generate_market(config)
    out = args.out
    atomic_write_text(out / "waves.json", market.waves_json())
    atomic_write_text(out / "transactions.csv", market.transactions_csv())
    atomic_write_text(out / "rates.csv", market.rates.to_csv())
    atomic_write_text(out / "truth.json", market.truth.to_json())
    print(f"wrote waves.json, transactions.csv, rates.csv, truth.json to {out}")
    return EXIT_OK


def _batch_specs(args: argparse.Namespace) -> dict[str, ModelSpec]:
    """The fitted columns requested by the flags, keyed by output name."""
    se = args.se
    hedonic = ("log_lot_size", "premium")
    full_discrete = dict(treatment=TREATMENT_DISCRETE, controls=hedonic + TOKEN_CONTROLS,
                         fe_dimensions=("day", "mint_wave"), se_type=se)
    full_continuous = dict(full_discrete, treatment=TREATMENT_CONTINUOUS)

    if args.multi:
        return {
            "triple_discrete": ModelSpec(include_multi_interactions=True, **full_discrete),
            "triple_continuous": ModelSpec(include_multi_interactions=True, **full_continuous),
        }
    if args.treatment == "logdist":
        return {
            "did_logdist_1": ModelSpec(treatment=TREATMENT_CONTINUOUS, controls=hedonic,
                                       fe_dimensions=("day", "mint_wave"), se_type=se),
            "did_logdist_2": ModelSpec(**full_continuous),
        }
    return {
        "did_near_1": ModelSpec(treatment=TREATMENT_DISCRETE,
                                controls=STANDARD_CONTROLS,
                                fe_dimensions=("week",), se_type=se),
        "did_near_2": ModelSpec(treatment=TREATMENT_DISCRETE,
                                controls=STANDARD_CONTROLS,
                                fe_dimensions=("week", "mint_wave"), se_type=se),
        "did_near_3": ModelSpec(treatment=TREATMENT_DISCRETE, controls=hedonic,
                                fe_dimensions=("day", "mint_wave"), se_type=se),
        "did_near_4": ModelSpec(**full_discrete),
    }


def cmd_estimate(args: argparse.Namespace) -> int:
    samples, groups, rejections = _load_panel(args)
    out = args.out
    atomic_write_text(out / "panel.csv", panel_to_csv(samples))
    _write_rejections(out, rejections)

    if args.meta_cut is not None:
        pre, post = partition_meta(samples, groups, cut_date=args.meta_cut)
        hedonic = ("log_lot_size", "premium")
        base = dict(controls=hedonic + TOKEN_CONTROLS,
                    fe_dimensions=("day", "mint_wave"), se_type=args.se)
        jobs = {
            "meta_pre_discrete": (pre, ModelSpec(treatment=TREATMENT_DISCRETE, **base)),
            "meta_post_discrete": (post, ModelSpec(treatment=TREATMENT_DISCRETE, **base)),
            "meta_pre_continuous": (pre, ModelSpec(treatment=TREATMENT_CONTINUOUS, **base)),
            "meta_post_continuous": (post, ModelSpec(treatment=TREATMENT_CONTINUOUS, **base)),
        }
    else:
        jobs = {name: (samples, spec) for name, spec in _batch_specs(args).items()}

    results = {}
    problems = {}
    for name, (subset, spec) in jobs.items():
        if not subset:
            log.warning("%s: empty partition, fit skipped", name)
            problems[name] = "empty partition"
            continue
        try:
            results[name] = estimate_did(subset, spec)
        except (DegenerateDesignError, InvalidInputError) as exc:
            log.warning("%s: %s", name, exc)
            problems[name] = str(exc)

    combined = {
        name: report.result_to_dict(res) for name, res in results.items()
    }
    combined["_failures"] = problems
    atomic_write_text(out / "estimates.json",
                      json.dumps(combined, indent=2, sort_keys=True) + "\n")
    for name, res in results.items():
        atomic_write_text(out / f"{name}.csv", report.coefficients_to_csv(res))
        atomic_write_text(out / f"{name}.json", report.result_to_json(res))

    if results:
        print(report.console_table(results))
    for name, why in problems.items():
        print(f"[skipped] {name}: {why}")
    if not results:
        raise NumericalError("no specification could be estimated")
    return EXIT_OK


def cmd_index(args: argparse.Namespace) -> int:
    samples, _, rejections = _load_panel(args)
    out = args.out
    atomic_write_text(out / "panel.csv", panel_to_csv(samples))
    _write_rejections(out, rejections)
    series = hedonic_index(samples, period=args.fe)
    atomic_write_text(out / "index.csv", report.index_to_csv(series))
    if series.gaps:
        log.warning("index has %d empty periods (no interpolation)", len(series.gaps))
    print(f"wrote index.csv ({len(series.periods)} periods, "
          f"{len(series.gaps)} gaps) to {out}")
    return EXIT_OK


def cmd_trend(args: argparse.Namespace) -> int:
    samples, groups, rejections = _load_panel(args)
    out = args.out
    atomic_write_text(out / "panel.csv", panel_to_csv(samples))
    _write_rejections(out, rejections)
    trend = residual_trend_series(samples, groups, window_days=args.window_days)
    atomic_write_text(out / "trend.csv", report.trend_to_csv(trend))
    print(f"wrote trend.csv ({len(trend)} rows) to {out}")
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "index": cmd_index,
    "trend": cmd_trend,
}


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigurationError, InvalidInputError, DegenerateDesignError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except GridHedonicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
