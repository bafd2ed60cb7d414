"""Result tables: raw rows, seed/building aggregates, winners, compression."""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass, field

from .plan import is_learning

COLUMNS = ("building_id", "policy", "seed", "cost", "params", "memory_bytes", "latency_ms", "status")


def _mean(xs):
    return sum(xs) / len(xs)


def _std(xs):
    return statistics.pstdev(xs) if len(xs) > 1 else 0.0


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def ok_rows(self) -> list[dict]:
        return [r for r in self.rows if r.get("status", "ok") == "ok"]

    def per_building(self) -> list[dict]:
        """Mean and std over seeds for each (policy, building)."""
        groups: dict[tuple, list[float]] = {}
        for r in self.ok_rows():
            groups.setdefault((r["policy"], r["building_id"]), []).append(r["cost"])
        return [{"policy": p, "building_id": b, "mean": _mean(c), "std": _std(c), "n_seeds": len(c)}
                for (p, b), c in sorted(groups.items())]

    def aggregate(self) -> list[dict]:
        """Per policy: mean over buildings of the per-building seed means (and of the seed stds)."""
        by_policy: dict[str, list[dict]] = {}
        for row in self.per_building():
            by_policy.setdefault(row["policy"], []).append(row)
        return [{"policy": p, "mean": _mean([r["mean"] for r in rows]), "std": _mean([r["std"] for r in rows]),
                 "n_buildings": len(rows)} for p, rows in sorted(by_policy.items())]

    def cost(self, policy: str, building_id: str, seed: int) -> float:
        for r in self.ok_rows():
            if (r["policy"], r["building_id"], r["seed"]) == (policy, building_id, seed):
                return r["cost"]
        raise KeyError((policy, building_id, seed))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(COLUMNS), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: _fmt(r.get(k)) for k in COLUMNS})
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EvalReport":
        rows = []
        for r in csv.DictReader(io.StringIO(text)):
            rows.append({"building_id": r["building_id"], "policy": r["policy"], "seed": int(r["seed"]),
                         "cost": float(r["cost"]) if r["cost"] else float("nan"),
                         "params": int(r["params"]) if r["params"] else None,
                         "memory_bytes": int(r["memory_bytes"]) if r["memory_bytes"] else None,
                         "latency_ms": float(r["latency_ms"]) if r["latency_ms"] else None,
                         "status": r.get("status") or "ok"})
        return cls(rows)

    def to_markdown(self) -> str:
        """Buildings as rows, policies as columns (seed mean +- std), and a final mean row."""
        pb = self.per_building()
        policies = sorted({r["policy"] for r in pb})
        buildings = sorted({r["building_id"] for r in pb})
        cell = {(r["policy"], r["building_id"]): r for r in pb}
        lines = ["| Building | " + " | ".join(policies) + " |", "|---|" + "---|" * len(policies)]
        for b in buildings:
            vals = []
            for p in policies:
                r = cell.get((p, b))
                vals.append(f"{r['mean']:.2f} ± {r['std']:.2f}" if r else "")
            lines.append(f"| {b} | " + " | ".join(vals) + " |")
        agg = {r["policy"]: r for r in self.aggregate()}
        lines.append("| **Mean** | " + " | ".join(f"**{agg[p]['mean']:.2f} ± {agg[p]['std']:.2f}**"
                                                 for p in policies) + " |")
        return "\n".join(lines) + "\n"


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def best_per_building(report: EvalReport, policies=None) -> list[dict]:
    """Cheapest learning policy per building (seed-mean cost).

    Ties go to fewer parameters, then to the lexicographically smaller name.
    The final row gives each policy's share of wins in percent.
    """
    params: dict[str, int] = {}
    for r in report.ok_rows():
        if r.get("params") is not None:
            params[r["policy"]] = min(params.get(r["policy"], r["params"]), r["params"])
    pool = [r for r in report.per_building()
            if (r["policy"] in policies if policies is not None else is_learning(r["policy"]))]
    by_b: dict[str, list[dict]] = {}
    for r in pool:
        by_b.setdefault(r["building_id"], []).append(r)
    out = []
    wins: dict[str, int] = {}
    for b in sorted(by_b):
        best = min(by_b[b], key=lambda r: (r["mean"], params.get(r["policy"], 0), r["policy"]))
        out.append({"building_id": b, "policy": best["policy"], "cost": best["mean"]})
        wins[best["policy"]] = wins.get(best["policy"], 0) + 1
    n = len(out)
    if n:
        out.append({"building_id": "share", **{p: 100.0 * w / n for p, w in sorted(wins.items())}})
    return out


def reduction(teacher_value: float, student_value: float) -> float:
    return 100.0 * (1.0 - student_value / teacher_value) if teacher_value else 0.0
