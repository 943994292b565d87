"""File formats: panel CSVs, reports, plot series and run manifests.

Panel CSV layout: header row ``<label column>,<name_1>,...,<name_N>``; each
following row is a period label then one decimal return per strategy.  An
empty cell marks a missing observation.  Period labels are read as integers
when every label parses as one (e.g. 198401) and kept as strings otherwise.

Every float is written with ``repr`` so files round-trip exactly and two
identical runs produce identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import sys
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy

from . import __version__
from .calibrate import ErrorRateReport
from .errors import DuplicateIdentifier, ParseError
from .inject import TruthLabeledPanel
from .panel import FactorPanel, ReturnPanel
from .simstudy import synthetic_panel

NULL = "NA"
TRUTH_SUFFIX = ".truth.csv"


def _fmt(x) -> str:
    if x is None:
        return NULL
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return NULL if math.isnan(x) else repr(x)
    return str(x)


def _read_rows(path) -> list[list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]


def _labels(raw: list[str]) -> tuple:
    try:
        return tuple(int(x) for x in raw)
    except ValueError:
        return tuple(raw)


def load_panel(path, missing: Sequence[str] = ("",)) -> ReturnPanel:
    """Read a panel CSV; raises ParseError or DuplicateIdentifier with coordinates."""
    rows = _read_rows(path)
    if not rows:
        raise ParseError(f"{path}: empty file", row=1)
    header = [h.strip() for h in rows[0]]
    names = header[1:]
    if not names:
        raise ParseError(f"{path}: header has no strategy columns", row=1)
    seen = {}
    for c, name in enumerate(names, start=2):
        if name == "":
            raise ParseError(f"{path}: empty strategy name", row=1, column=c)
        if name in seen:
            raise DuplicateIdentifier(
                f"{path}: duplicate strategy name {name!r} in columns {seen[name]} and {c}"
            )
        seen[name] = c
    raw_labels = []
    data = np.full((len(rows) - 1, len(names)), np.nan)
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"{path}: expected {len(header)} fields, got {len(row)}", row=r)
        label = row[0].strip()
        if label == "":
            raise ParseError(f"{path}: empty period label", row=r, column=1)
        raw_labels.append(label)
        for c, cell in enumerate(row[1:], start=2):
            cell = cell.strip()
            if cell in missing:
                continue
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"{path}: cannot parse {cell!r} as a number", row=r, column=c) from None
            if not math.isfinite(v):
                raise ParseError(f"{path}: non-finite value {cell!r}", row=r, column=c)
            data[r - 2, c - 2] = v
    labels = _labels(raw_labels)
    first = {}
    for r, lab in enumerate(labels, start=2):
        if lab in first:
            raise DuplicateIdentifier(f"{path}: duplicate period {lab!r} in rows {first[lab]} and {r}")
        first[lab] = r
    for r, (a, b) in enumerate(zip(labels, labels[1:]), start=3):
        if not a < b:
            raise ParseError(f"{path}: period {b!r} does not follow {a!r}", row=r, column=1)
    empty = np.isnan(data).all(axis=0)
    if empty.any():
        c = int(np.argmax(empty))
        raise ParseError(f"{path}: strategy {names[c]!r} has no observations", column=c + 2)
    return ReturnPanel(data, np.isfinite(data), labels, tuple(names))


def write_panel(panel: ReturnPanel, path, label_header: str = "period") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([label_header, *panel.names])
        for r, lab in enumerate(panel.period_labels):
            w.writerow(
                [lab]
                + [repr(float(v)) if m else "" for v, m in zip(panel.values[r], panel.mask[r])]
            )


def load_factors(path, panel: Optional[ReturnPanel] = None) -> FactorPanel:
    """Factor CSV in the panel layout; no missing cells allowed."""
    p = load_panel(path)
    if not p.mask.all():
        r, c = np.argwhere(~p.mask)[0]
        raise ParseError(f"{path}: factor files cannot have missing values", row=r + 2, column=c + 2)
    f = FactorPanel(p.values, p.period_labels, p.names)
    if panel is not None:
        f.check_aligned(panel)
    return f


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def write_truth(labeled: TruthLabeledPanel, path) -> None:
    write_csv(
        path,
        ["name", "true", "effect"],
        [(n, bool(t), float(e)) for n, t, e in zip(labeled.panel.names, labeled.truth, labeled.injected_effect)],
    )


def load_truth(path) -> tuple[np.ndarray, np.ndarray]:
    rows = _read_rows(path)[1:]
    truth = np.array([r[1] == "true" for r in rows])
    effect = np.array([float(r[2]) for r in rows])
    return truth, effect


def gen_synthetic(spec: dict, seed: int, path) -> tuple[Path, Path]:
    """Write a synthetic panel CSV and its truth sidecar ``<stem>.truth.csv``.

    ``spec`` keys: D, N, vol, correlation, true_fraction, signal_mean,
    periods_per_year.
    """
    allowed = {"D", "N", "vol", "correlation", "true_fraction", "signal_mean", "periods_per_year"}
    unknown = set(spec) - allowed
    if unknown:
        raise ValueError(f"unknown synthetic spec keys: {sorted(unknown)}")
    labeled = synthetic_panel(seed=seed, **spec)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_panel(labeled.panel, path)
    truth_path = path.with_name(path.stem + TRUTH_SUFFIX)
    write_truth(labeled, truth_path)
    return path, truth_path


# report emission -----------------------------------------------------------

CELL_COLUMNS = (
    "p0", "method", "alpha", "cutoff", "type1", "type2", "oratio", "tpr", "fpr",
    "se_type1", "se_type2", "se_oratio", "I", "J", "valid", "attained", "reason",
)  # fmt: skip


def report_rows(report: ErrorRateReport):
    for c in report.cells:
        yield [getattr(c, k) for k in CELL_COLUMNS]


def load_report(path) -> ErrorRateReport:
    return ErrorRateReport.from_dict(read_json(path))


def emit_report(
    report: ErrorRateReport,
    out_dir,
    formats: Sequence[str] = ("json", "csv", "plotdata"),
    stem: str = "report",
) -> list[Path]:
    """Write the report; invalid cells appear with the NA marker, never dropped."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for fmt in formats:
        if fmt == "json":
            p = out / f"{stem}.json"
            write_json(report.to_dict(), p)
            paths.append(p)
        elif fmt == "csv":
            p = out / f"{stem}.csv"
            write_csv(p, CELL_COLUMNS, report_rows(report))
            paths.append(p)
        elif fmt == "plotdata":
            paths.extend(emit_plotdata(report, out, stem))
        else:
            raise ValueError(f"unknown report format {fmt!r}")
    return paths


def emit_plotdata(report: ErrorRateReport, out_dir, stem: str = "report") -> list[Path]:
    """Error rate vs cutoff and ROC series from the fixed-cutoff cells."""
    out = Path(out_dir)
    p0s = sorted({c.p0 for c in report.cells})
    paths = []
    curve = []
    roc = []
    for p0 in p0s:
        cells = report.fixed_cells(p0)
        if not cells:
            continue
        for c in cells:
            curve.append((p0, c.cutoff, c.type1, c.type2, c.oratio))
        rc = report.roc(p0)
        for cut, f, t in zip(rc.cutoffs, rc.fpr, rc.tpr):
            roc.append((p0, float(cut), float(f), float(t)))
    if curve:
        p = out / f"{stem}_error_vs_cutoff.csv"
        write_csv(p, ["p0", "cutoff", "type1", "type2", "oratio"], curve)
        paths.append(p)
        p = out / f"{stem}_roc.csv"
        write_csv(p, ["p0", "cutoff", "fpr", "tpr"], roc)
        paths.append(p)
    return paths


def emit_cutoffs(solutions: list[dict], out_dir, formats=("json", "csv", "plotdata")) -> list[Path]:
    """Solved cutoffs per (p0, target); plotdata is the cutoff-vs-p0 series."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = ["p0", "alpha_target", "t_star", "achieved_type1", "se_type1", "type2", "attained"]
    rows = [[s[k] for k in header] for s in solutions]
    paths = []
    if "json" in formats:
        write_json({"schema": "doubleboot.cutoffs/1", "solutions": solutions}, out / "cutoffs.json")
        paths.append(out / "cutoffs.json")
    if "csv" in formats:
        write_csv(out / "cutoffs.csv", header, rows)
        paths.append(out / "cutoffs.csv")
    if "plotdata" in formats:
        write_csv(out / "cutoff_vs_p0.csv", ["alpha_target", "p0", "t_star"],
                  sorted((s["alpha_target"], s["p0"], s["t_star"]) for s in solutions))
        paths.append(out / "cutoff_vs_p0.csv")
    return paths


def manifest(command: str, config: dict, seed: int, inputs: dict) -> dict:
    """Provenance record; contains no timestamps or machine-specific values."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return {
        "schema": "doubleboot.manifest/1",
        "command": command,
        "config_sha256": hashlib.sha256(canon.encode()).hexdigest(),
        "seed": int(seed),
        "inputs": {k: sha256_file(v) for k, v in sorted(inputs.items()) if v},
        "versions": {
            "doubleboot": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": ".".join(map(str, sys.version_info[:3])),
        },
    }
