"""Run records, success-rate aggregation and CSV output."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RECORD_FIELDS = ("method", "budget", "env_id", "goal_id", "success", "final_cost", "wall_time")
REPORT_FIELDS = ("method", "budget", "trials", "successes", "success_rate", "per_env_success_rate")


def fmt(v) -> str:
    """17 significant digits for floats, plain text otherwise."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


@dataclass
class RunRecord:
    method: str
    budget: str  # iteration count, or "" for budget-independent methods
    env_id: int
    goal_id: int
    success: bool
    final_cost: float
    wall_time: float

    def row(self) -> list:
        return [fmt(getattr(self, f)) for f in RECORD_FIELDS]


@dataclass
class Report:
    records: list = field(default_factory=list)

    def add(self, rec: RunRecord) -> None:
        self.records.append(rec)

    def keys(self) -> list:
        seen = []
        for r in self.records:
            k = (r.method, r.budget)
            if k not in seen:
                seen.append(k)
        return seen

    def rates(self) -> list[dict]:
        """One row per (method, budget): pooled rate and mean of per-environment rates."""
        rows = []
        for method, budget in self.keys():
            sel = [r for r in self.records if r.method == method and r.budget == budget]
            succ = sum(int(r.success) for r in sel)
            per_env = {}
            for r in sel:
                per_env.setdefault(r.env_id, []).append(int(r.success))
            env_rates = [sum(v) / len(v) for v in per_env.values()]
            rows.append({
                "method": method,
                "budget": budget,
                "trials": len(sel),
                "successes": succ,
                "success_rate": succ / len(sel),
                "per_env_success_rate": float(np.mean(env_rates)),
            })
        return rows

    def rate(self, method: str, budget) -> float:
        for row in self.rates():
            if row["method"] == method and row["budget"] == str(budget):
                return row["success_rate"]
        raise KeyError((method, budget))

    def write(self, out_dir) -> None:
        if not self.records:
            raise ValueError("empty report")
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "records.csv").write_text(_csv([RECORD_FIELDS] + [r.row() for r in self.records]))
        rows = [[fmt(r[f]) for f in REPORT_FIELDS] for r in self.rates()]
        (out / "report.csv").write_text(_csv([REPORT_FIELDS] + rows))


def _csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


def read_records(path) -> Report:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    rep = Report()
    for r in rows:
        rep.add(RunRecord(r["method"], r["budget"], int(r["env_id"]), int(r["goal_id"]),
                          bool(int(r["success"])), float(r["final_cost"]), float(r["wall_time"])))
    return rep


def read_report(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
