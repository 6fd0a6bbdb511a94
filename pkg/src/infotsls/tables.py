"""CSV and JSON persistence for records, panels and reports.

Floats are written with ``repr`` so files round-trip losslessly. Column
layouts are documented in ``docs/schemas.md`` (schema version 1).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import DataSchemaError
from .experiment import ACTIVE_GROUPS, PASSIVE_GROUPS, CounterfactualPanel, Records

SCHEMA_VERSION = 1

REQUIRED_RECORD_COLUMNS = ("group", "signal", "prior_feature", "posterior_feature", "outcome")


def _fmt(x) -> str:
    return repr(float(x))


def _write(path, header, columns) -> None:
    n = len(columns[0]) if columns else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(n):
            w.writerow([c[i] for c in columns])


def _floats(v):
    return [_fmt(x) for x in v]


def _covariate_columns(cov: np.ndarray):
    return [f"x{j + 1}" for j in range(cov.shape[1])], [_floats(cov[:, j]) for j in range(cov.shape[1])]


def write_records(records: Records, path) -> None:
    """Passive files carry the treatment signal in ``signal`` on every row."""
    header = ["id", "group", "signal", "prior_feature", "posterior_feature", "outcome"]
    signal = records.treatment_signal if records.design == "passive" else records.signal
    cols = [[str(int(i)) for i in records.id], [str(g) for g in records.group], _floats(signal),
            _floats(records.prior_feature), _floats(records.posterior_feature), _floats(records.outcome)]
    if records.design == "active":
        header += ["signal_low", "signal_high"]
        cols += [_floats(records.signal_low), _floats(records.signal_high)]
    names, covs = _covariate_columns(records.covariates)
    _write(path, header + names, cols + covs)


def _read_rows(path):
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = [r for r in reader if r]
    except OSError as exc:
        raise DataSchemaError(f"cannot read {path}: {exc}") from exc
    if header is None:
        raise DataSchemaError(f"{path} is empty")
    header = [h.strip() for h in header]
    if len(set(header)) != len(header):
        raise DataSchemaError(f"duplicate columns in {path}")
    bad = [i for i, r in enumerate(rows) if len(r) != len(header)]
    if bad:
        raise DataSchemaError(f"rows {bad[:10]} have the wrong number of fields", rows=bad)
    return header, rows


def _column(header, rows, name, numeric=True, allow_nan=False):
    j = header.index(name)
    raw = [r[j].strip() for r in rows]
    if not numeric:
        return np.array(raw)
    out = np.empty(len(raw))
    bad = []
    for i, s in enumerate(raw):
        try:
            out[i] = float(s) if s != "" else np.nan
        except ValueError:
            bad.append(i)
            continue
        if not np.isfinite(out[i]) and not (allow_nan and np.isnan(out[i])):
            bad.append(i)
    if bad:
        raise DataSchemaError(f"column {name!r} has missing or non-finite values in rows {bad[:10]}",
                              rows=bad)
    return out


def _covariate_names(header):
    names = [h for h in header if h.startswith("x") and h[1:].isdigit()]
    expected = [f"x{j + 1}" for j in range(len(names))]
    if names != expected:
        raise DataSchemaError(f"covariate columns must be x1..xk in order, got {names}")
    return names


def ingest(path, mode: str = "simulated") -> Records:
    """Read a records CSV.

    ``simulated`` requires the exact simulator layout. ``external`` needs the
    columns group, signal, prior_feature, posterior_feature and outcome; id and
    x1..xk are optional. Passive files must carry the treatment signal on
    every row, control rows included.
    """
    if mode not in ("simulated", "external"):
        raise DataSchemaError(f"unknown schema mode {mode!r}")
    header, rows = _read_rows(path)
    missing = [c for c in REQUIRED_RECORD_COLUMNS if c not in header]
    if mode == "simulated" and "id" not in header:
        missing.insert(0, "id")
    if missing:
        raise DataSchemaError(f"missing columns {missing}")
    group = _column(header, rows, "group", numeric=False)
    labels = set(group.tolist())
    if labels <= set(PASSIVE_GROUPS):
        design = "passive"
    elif labels <= set(ACTIVE_GROUPS):
        design = "active"
    else:
        raise DataSchemaError(f"groups must be {PASSIVE_GROUPS} or {ACTIVE_GROUPS}, got {sorted(labels)}")
    known = {"id", *REQUIRED_RECORD_COLUMNS}
    if design == "active":
        known |= {"signal_low", "signal_high"}
    cov_names = _covariate_names(header)
    extra = [h for h in header if h not in known and h not in cov_names]
    if extra:
        raise DataSchemaError(f"unexpected columns {extra}")
    if mode == "simulated" and design == "active" and not {"signal_low", "signal_high"} <= set(header):
        raise DataSchemaError("active simulator files need signal_low and signal_high")
    n = len(rows)
    ids = (_column(header, rows, "id").astype(np.int64) if "id" in header
           else np.arange(n, dtype=np.int64))
    signal = _column(header, rows, "signal", allow_nan=True)
    if design == "passive":
        missing_rows = np.flatnonzero(np.isnan(signal))
        if missing_rows.size:
            raise DataSchemaError(
                f"passive files need the treatment signal on every row; missing in rows "
                f"{missing_rows[:10].tolist()}", rows=missing_rows,
            )
    elif np.isnan(signal).any():
        bad = np.flatnonzero(np.isnan(signal))
        raise DataSchemaError(f"missing signals in rows {bad[:10].tolist()}", rows=bad)
    cov = (np.column_stack([_column(header, rows, c) for c in cov_names]) if cov_names
           else np.zeros((n, 0)))
    kw = {}
    if design == "passive":
        t = group == "T"
        kw["treatment_signal"] = signal
        received = np.where(t, signal, np.nan)
    else:
        received = signal
        if "signal_low" in header:
            kw["signal_low"] = _column(header, rows, "signal_low")
            kw["signal_high"] = _column(header, rows, "signal_high")
    return Records(design, ids, group.astype("<U1"), received,
                   _column(header, rows, "prior_feature"), _column(header, rows, "posterior_feature"),
                   _column(header, rows, "outcome"), cov, **kw)


def _panel_header(panel: CounterfactualPanel):
    g, h = panel.groups
    if panel.design == "passive":
        sig = ["signal"]
        probe = f"feature_{h}_at_prior"
    else:
        sig = ["signal_low", "signal_high"]
        probe = f"feature_{h}_at_low"
    return sig, probe


def write_panel(panel: CounterfactualPanel, path) -> None:
    g, h = panel.groups
    sig, probe = _panel_header(panel)
    header = ["id", "group", "prior_feature", *sig, f"feature_{g}", f"feature_{h}",
              f"outcome_{g}", f"outcome_{h}", "ape"]
    cols = [[str(int(i)) for i in panel.id], [str(x) for x in panel.group], _floats(panel.prior_feature)]
    if panel.design == "passive":
        cols.append(_floats(panel.treatment_signal))
    else:
        cols += [_floats(panel.signal_low), _floats(panel.signal_high)]
    cols += [_floats(panel.feature[g]), _floats(panel.feature[h]), _floats(panel.outcome[g]),
             _floats(panel.outcome[h]), _floats(panel.ape)]
    if panel.design == "passive":
        header.append("perception_gap")
        cols.append(_floats(panel.perception_gap))
    header.append(probe)
    cols.append(_floats(panel.probe_feature))
    names, covs = _covariate_columns(panel.covariates)
    _write(path, header + names, cols + covs)


def read_panel(path) -> CounterfactualPanel:
    header, rows = _read_rows(path)
    design = "passive" if "feature_T" in header else "active"
    g, h = PASSIVE_GROUPS if design == "passive" else ACTIVE_GROUPS
    probe = f"feature_{h}_at_prior" if design == "passive" else f"feature_{h}_at_low"
    need = ["id", "group", "prior_feature", f"feature_{g}", f"feature_{h}", f"outcome_{g}",
            f"outcome_{h}", "ape", probe]
    need += ["signal"] if design == "passive" else ["signal_low", "signal_high"]
    missing = [c for c in need if c not in header]
    if missing:
        raise DataSchemaError(f"panel is missing columns {missing}")
    col = lambda name: _column(header, rows, name)  # noqa: E731
    n = len(rows)
    cov_names = _covariate_names(header)
    cov = np.column_stack([col(c) for c in cov_names]) if cov_names else np.zeros((n, 0))
    kw = ({"treatment_signal": col("signal")} if design == "passive"
          else {"signal_low": col("signal_low"), "signal_high": col("signal_high")})
    group = _column(header, rows, "group", numeric=False).astype("<U1")
    return CounterfactualPanel(
        design, col("id").astype(np.int64), group, col("prior_feature"),
        {g: col(f"feature_{g}"), h: col(f"feature_{h}")},
        {g: col(f"outcome_{g}"), h: col(f"outcome_{h}")},
        col("ape"), col(probe), cov, **kw,
    )


def write_json(obj, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def write_plot_data(reports, path) -> None:
    """Long-format table of bin reports: one row per (report, bin)."""
    header = ["quantity", "kind", "bin", "lower", "upper", "count", "share", "value"]
    rows = []
    for rep in reports:
        for j, (lo, hi, cnt, share, val) in enumerate(rep.plot_rows()):
            rows.append([rep.quantity, rep.kind, str(j), _fmt(lo), _fmt(hi), str(cnt), _fmt(share), _fmt(val)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
