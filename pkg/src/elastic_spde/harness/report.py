"""Check results, reports and run artifacts (CSV tables, plot script, manifest)."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EXIT_PASS = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


@dataclass
class Check:
    name: str
    value: float
    threshold: float | str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {_fmt(self.value)} (threshold {_fmt(self.threshold)}) {self.detail}".rstrip()


@dataclass
class Table:
    header: tuple[str, ...]
    rows: list[tuple]


@dataclass
class Report:
    command: str
    checks: list[Check] = field(default_factory=list)
    tables: dict[str, Table] = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def exit_code(self) -> int:
        return EXIT_PASS if self.passed else EXIT_CHECK_FAILED

    def check(self, name: str, value, threshold, passed: bool, detail: str = "") -> Check:
        c = Check(name, float(value) if _is_number(value) else value, threshold, bool(passed), detail)
        self.checks.append(c)
        return c

    def table(self, name: str, header, rows) -> None:
        self.tables[name] = Table(tuple(header), list(rows))

    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def text(self) -> str:
        lines = [f"{self.command}: {'PASS' if self.passed else 'FAIL'}"]
        lines += ["  " + c.line() for c in self.checks]
        return "\n".join(lines)


def _is_number(v) -> bool:
    return isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool)


def _fmt(v) -> str:
    if _is_number(v):
        return f"{float(v):.6g}"
    return str(v)


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def jsonable(v):
    if isinstance(v, dict):
        return {str(k): jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    if isinstance(v, np.ndarray):
        return jsonable(v.tolist())
    return v


PLOT_TEMPLATE = '''"""Plot the CSV tables of this run (generated; needs matplotlib)."""
import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt

HERE = Path(__file__).resolve().parent
TABLES = {tables!r}


def load(name):
    with open(HERE / (name + ".csv")) as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = list(zip(*body)) if body else [[] for _ in header]
    out = {{}}
    for h, col in zip(header, cols):
        try:
            out[h] = [float(v) for v in col]
        except ValueError:
            out[h] = list(col)
    return out


def main():
    for name, (x, ys) in TABLES.items():
        data = load(name)
        fig, ax = plt.subplots()
        for y in ys:
            ax.plot(data[x], data[y], marker="o", label=y)
        ax.set_xlabel(x)
        ax.set_title(name)
        ax.legend()
        fig.savefig(HERE / (name + ".png"), dpi=120)
        plt.close(fig)


if __name__ == "__main__":
    sys.exit(main())
'''


def _plot_spec(report: Report) -> dict:
    spec = {}
    for name, tab in report.tables.items():
        numeric = [h for h in tab.header if tab.rows and all(_is_number(r[tab.header.index(h)]) for r in tab.rows)]
        if len(numeric) >= 2:
            spec[name] = (numeric[0], numeric[1:4])
    return spec


def write_outputs(report: Report, out_dir, config_echo: dict, version: str, seed: int, runtime: float | None = None) -> Path:
    """Write tables, checks, plot script and manifest.json; returns the manifest path.

    Everything except the manifest's runtime field is a pure function of
    (config, seed), so re-runs reproduce every CSV byte for byte.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, tab in sorted(report.tables.items()):
        p = out / f"{name}.csv"
        write_csv(p, tab.header, tab.rows)
        written.append(p)
    p = out / "checks.csv"
    write_csv(p, ("check", "value", "threshold", "passed", "detail"),
              [(c.name, c.value, c.threshold, c.passed, c.detail) for c in report.checks])
    written.append(p)
    p = out / "plot.py"
    p.write_text(PLOT_TEMPLATE.format(tables=_plot_spec(report)))
    written.append(p)
    manifest = {
        "command": report.command,
        "tool_version": version,
        "seed": seed,
        "passed": report.passed,
        "exit_code": report.exit_code,
        "checks": [jsonable({"name": c.name, "value": c.value, "threshold": c.threshold, "passed": c.passed,
                             "detail": c.detail}) for c in report.checks],
        "config": config_echo,
        "info": jsonable(report.info),
        "outputs": {q.name: sha256(q) for q in written},
    }
    if runtime is not None:
        manifest["runtime_seconds"] = round(runtime, 3)
    mp = out / "manifest.json"
    tmp = out / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, mp)
    return mp
