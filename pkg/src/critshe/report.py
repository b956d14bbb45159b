"""Tabular experiment reports with per-property verdicts."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

from .params import Estimate

CSV_COLUMNS = ("name", "value", "stderr", "n_samples", "method", "seed")
CSV_SCHEMA = "critshe-results/1"
REGIMES = ("clt", "fixed-point", "extinction", "scaling", "none")


@dataclass
class ReportRow:
    x_name: str
    x: float
    statistic: str
    value: float
    stderr: float
    n_samples: int
    method: str
    seed: str

    @property
    def name(self) -> str:
        if self.x_name:
            return f"{self.statistic}[{self.x_name}={self.x:g}]"
        return self.statistic


@dataclass
class Verdict:
    passed: bool
    margin: float
    detail: str = ""


@dataclass
class RegimeReport:
    regime: str
    rows: list = field(default_factory=list)
    verdicts: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def add(self, statistic: str, est, x=None, x_name: str = "", method: str = "closed-form",
            seed: str = "") -> ReportRow:
        """Append a row from an Estimate or a plain deterministic number."""
        if isinstance(est, Estimate):
            row = ReportRow(x_name, math.nan if x is None else float(x), statistic,
                            float(est.value), float(est.stderr), int(est.n_samples),
                            est.method, "" if est.seed is None else f"{est.seed}:{est.stream}")
        else:
            row = ReportRow(x_name, math.nan if x is None else float(x), statistic,
                            float(est), 0.0, 1, method, seed)
        self.rows.append(row)
        return row

    def verdict(self, name: str, passed: bool, margin: float, detail: str = "") -> Verdict:
        v = Verdict(bool(passed), float(margin), detail)
        self.verdicts[name] = v
        return v

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts.values())

    def get(self, statistic: str, x=None) -> ReportRow:
        for r in self.rows:
            if r.statistic == statistic and (x is None or r.x == x):
                return r
        raise KeyError(statistic)

    def series(self, statistic: str) -> list[ReportRow]:
        return [r for r in self.rows if r.statistic == statistic]

    def csv_records(self) -> list[dict]:
        recs = [{"name": r.name, "value": r.value, "stderr": r.stderr,
                 "n_samples": r.n_samples, "method": r.method, "seed": r.seed}
                for r in self.rows]
        for k, v in self.verdicts.items():
            recs.append({"name": f"verdict:{k}", "value": float(v.passed), "stderr": v.margin,
                         "n_samples": 1, "method": "verdict", "seed": ""})
        return recs

    def write_csv(self, path) -> None:
        write_csv(path, self.csv_records())

    def to_dict(self) -> dict:
        return {"schema": CSV_SCHEMA, "regime": self.regime,
                "rows": [asdict(r) | {"name": r.name} for r in self.rows],
                "verdicts": {k: asdict(v) for k, v in self.verdicts.items()},
                "meta": self.meta}

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, default=_json_default)

    def summary(self) -> str:
        lines = [f"regime: {self.regime}"]
        for r in self.rows:
            err = f" +- {r.stderr:.3g}" if r.stderr else ""
            lines.append(f"  {r.name:<40s} {r.value:.6g}{err}  [{r.method}]")
        for k, v in self.verdicts.items():
            lines.append(f"  {'PASS' if v.passed else 'FAIL'} {k} (margin {v.margin:.3g}) {v.detail}")
        return "\n".join(lines)


def write_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for rec in records:
            w.writerow({k: _fmt(rec[k]) for k in CSV_COLUMNS})


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def _json_default(o):
    if isinstance(o, Estimate):
        return asdict(o)
    if hasattr(o, "tolist"):
        return o.tolist()
    if isinstance(o, float):
        return repr(o)
    raise TypeError(f"not serialisable: {type(o)}")
