"""CSV readers and writers for probe traces, experiments and cost tables."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .calibration import CostRow, ExperimentTrace
from .thermal import ProbeSeries

FLOAT = "{:.10g}"


class DataFormatError(ValueError):
    pass


def _fmt(x: float) -> str:
    return FLOAT.format(float(x))


def write_probe_csv(series: ProbeSeries, path) -> None:
    """``time_s,probe1_C,...,probeN_C,mean_C``."""
    n = series.temperatures.shape[1]
    header = ["time_s"] + [f"probe{i + 1}_C" for i in range(n)] + ["mean_C"]
    mean = series.mean
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t, row, m in zip(series.times, series.temperatures, mean):
            w.writerow([_fmt(t)] + [_fmt(v) for v in row] + [_fmt(m)])


def ingest_experiment(path, specimen: str | None = None) -> ExperimentTrace:
    """Read ``time_s,T1,...,Tn`` or ``time_s,mean_C`` (or both) into a trace.

    A column named ``mean_C`` (or ``mean``) is taken as the mean; otherwise
    the mean is the row average of the probe columns.  Times must not
    decrease; the offending line number is reported.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0].lower() not in ("time_s", "time", "t"):
        raise DataFormatError(f"{path}:1: expected header 'time_s,...', got {rows[0]}")
    mean_col = next((i for i, h in enumerate(header) if h.lower() in ("mean_c", "mean")), None)
    probe_cols = [i for i in range(1, len(header)) if i != mean_col]
    times, means, probes = [], [], []
    last = -math.inf
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataFormatError(
                f"{path}:{lineno}: expected {len(header)} fields, found {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in vals):
            raise DataFormatError(f"{path}:{lineno}: non-finite value")
        if vals[0] < last:
            raise DataFormatError(
                f"{path}:{lineno}: time {vals[0]:g} s goes backwards (previous {last:g} s)")
        last = vals[0]
        times.append(vals[0])
        p = [vals[i] for i in probe_cols]
        probes.append(p)
        means.append(vals[mean_col] if mean_col is not None else float(np.mean(p)))
    if not times:
        raise DataFormatError(f"{path}: no data rows")
    probe_arr = np.array(probes) if probe_cols else None
    return ExperimentTrace(specimen or path.stem, np.array(times), np.array(means), probe_arr)


def write_experiment(trace: ExperimentTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if trace.probes is not None and trace.probes.size:
            n = trace.probes.shape[1]
            w.writerow(["time_s"] + [f"T{i + 1}" for i in range(n)] + ["mean_C"])
            for t, p, m in zip(trace.times, trace.probes, trace.mean):
                w.writerow([_fmt(t)] + [_fmt(v) for v in p] + [_fmt(m)])
        else:
            w.writerow(["time_s", "mean_C"])
            for t, m in zip(trace.times, trace.mean):
                w.writerow([_fmt(t), _fmt(m)])


COST_HEADER = ["h_W_m2K", "T_c_side_C", "T_c_top_C", "rmse_C"]


def write_cost_table(rows: Iterable[CostRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COST_HEADER)
        for r in rows:
            w.writerow([_fmt(r.h), _fmt(r.T_c_side), _fmt(r.T_c_top), _fmt(r.cost)])


def read_cost_table(path) -> list[CostRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != COST_HEADER:
            raise DataFormatError(f"{path}:1: expected header {','.join(COST_HEADER)}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(CostRow(*(float(c) for c in row)))
            except (TypeError, ValueError):
                raise DataFormatError(f"{path}:{lineno}: malformed cost row {row}") from None
        return out


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
