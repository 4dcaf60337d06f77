"""Coefficient-table exports (CSV/JSON) and aligned console rendering."""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Mapping

import pandas as pd

from .analysis import IndexSeries
from .estimators import FitResult


def coefficients_to_csv(result: FitResult) -> str:
    """One row per retained term: term,estimate,std_error,t_stat,stars."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["term", "estimate", "std_error", "t_stat", "stars"])
    for term, coef in result.coefficients.items():
        writer.writerow(
            [term, repr(coef.estimate), repr(coef.std_error), repr(coef.t_stat), coef.stars]
        )
    return buf.getvalue()


def result_to_dict(result: FitResult) -> dict:
    """JSON-ready dict: coefficient block plus the fit metadata."""
    return {
        "coefficients": {
            term: {
                "estimate": coef.estimate,
                "std_error": coef.std_error,
                "t_stat": coef.t_stat,
                "stars": coef.stars,
            }
            for term, coef in result.coefficients.items()
        },
        "metadata": {
            "n_obs": result.n_obs,
            "adj_r2": None if math.isnan(result.adj_r2) else result.adj_r2,
            "fe_dimensions": list(result.fe_dimensions),
            "se_type": result.se_type,
            "dropped_columns": list(result.dropped_columns),
        },
    }


def result_to_json(result: FitResult) -> str:
    return json.dumps(result_to_dict(result), indent=2, sort_keys=True) + "\n"


def console_table(results: Mapping[str, FitResult]) -> str:
    """Side-by-side fitted columns with SEs in parentheses beneath estimates."""
    names = list(results)
    terms: list[str] = []
    for res in results.values():
        for term in res.coefficients:
            if term not in terms:
                terms.append(term)

    col_width = max([18] + [len(n) + 2 for n in names])
    term_width = max([22] + [len(t) + 2 for t in terms])

    def fmt_row(label: str, cells: list[str]) -> str:
        return label.ljust(term_width) + "".join(c.rjust(col_width) for c in cells)

    lines = [fmt_row("", names)]
    lines.append("-" * (term_width + col_width * len(names)))
    for term in terms:
        estimates, errors = [], []
        for res in results.values():
            coef = res.coefficients.get(term)
            if coef is None:
                estimates.append("")
                errors.append("")
            else:
                estimates.append(f"{coef.estimate:.3f}{coef.stars}")
                errors.append(f"({coef.std_error:.3f})")
        lines.append(fmt_row(term, estimates))
        lines.append(fmt_row("", errors))
    lines.append("-" * (term_width + col_width * len(names)))
    lines.append(
        fmt_row("Fixed effects", [",".join(r.fe_dimensions) or "none" for r in results.values()])
    )
    lines.append(fmt_row("Observations", [str(r.n_obs) for r in results.values()]))
    lines.append(
        fmt_row(
            "Adj R-squared",
            ["" if math.isnan(r.adj_r2) else f"{r.adj_r2:.3f}" for r in results.values()],
        )
    )
    return "\n".join(lines) + "\n"


def index_to_csv(series: IndexSeries) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["period", "value"])
    for label, value in series.as_rows():
        writer.writerow([label, repr(value)])
    return buf.getvalue()


def trend_to_csv(trend: pd.DataFrame) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["event_day", "group", "mean_residual", "n"])
    for row in trend.itertuples(index=False):
        mean = "" if isinstance(row.mean_residual, float) and math.isnan(row.mean_residual) \
            else repr(float(row.mean_residual))
        writer.writerow([row.event_day, row.group, mean, row.n])
    return buf.getvalue()
