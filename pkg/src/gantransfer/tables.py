"""Recompute published per-class and summary metrics from their confusion matrices."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import List, Optional

from .errors import GanTransferError
from .metrics import ConfusionMatrix, metrics_report

FIELDS = ("class_accuracy", "total_accuracy", "precision", "recall", "f1")


class MalformedMatrices(GanTransferError, ValueError):
    """The matrices file could not be parsed; ``location`` says where."""

    def __init__(self, message: str, location: str = ""):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


@dataclass(frozen=True)
class Check:
    model: str
    field: str
    published: float
    computed: float
    tolerance: float
    anomaly: Optional[str] = None

    @property
    def delta(self) -> float:
        return self.computed - self.published

    @property
    def ok(self) -> bool:
        return abs(self.delta) <= self.tolerance + 1e-9


def default_matrices_path() -> Path:
    return Path(str(resources.files("gantransfer.data").joinpath("reference_matrices.json")))


def load_matrices(path=None) -> dict:
    path = Path(path) if path else default_matrices_path()
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedMatrices(exc.msg, f"{path}:{exc.lineno}:{exc.colno}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("models"), dict):
        raise MalformedMatrices("top level must be an object with a 'models' object", str(path))
    for name, entry in doc["models"].items():
        where = f"{path}: models.{name}"
        try:
            ConfusionMatrix(entry["matrix"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedMatrices(f"bad or missing 'matrix' ({exc})", where) from None
        pub = entry.get("published", {})
        if not isinstance(pub, dict):
            raise MalformedMatrices("'published' must be an object", where)
        for key, value in pub.items():
            if key not in FIELDS:
                raise MalformedMatrices(f"unknown published field {key!r}", where)
            vals = value if key == "class_accuracy" else [value]
            if not all(isinstance(v, (int, float)) for v in vals):
                raise MalformedMatrices(f"published.{key} must be numeric", where)
    return doc


def verify(doc: dict) -> List[Check]:
    """One :class:`Check` per published value, in percentage points."""
    tol = float(doc.get("tolerance_pp", 0.05))
    anomalies = {(a["model"], a["field"]): a.get("reason", "") for a in doc.get("known_anomalies", [])}
    checks = []
    for name, entry in doc["models"].items():
        rep = metrics_report(ConfusionMatrix(entry["matrix"]))
        computed = {
            "class_accuracy": [100 * (p or 0.0) for p in rep.precision],
            "total_accuracy": 100 * rep.accuracy,
            "precision": 100 * rep.paper_precision,
            "recall": 100 * rep.paper_recall,
            "f1": 100 * rep.f1,
        }
        for field in FIELDS:
            if field not in entry.get("published", {}):
                continue
            pub = entry["published"][field]
            if field == "class_accuracy":
                for i, (p, c) in enumerate(zip(pub, computed[field])):
                    label = f"{field}[{i}]"
                    checks.append(Check(name, label, float(p), c, tol,
                                        anomalies.get((name, label), anomalies.get((name, field)))))
            else:
                checks.append(Check(name, field, float(pub), computed[field], tol,
                                    anomalies.get((name, field))))
    return checks


def failures(checks: List[Check]) -> List[Check]:
    """Mismatches that are not listed as known anomalies."""
    return [c for c in checks if not c.ok and c.anomaly is None]


def format_checks(checks: List[Check]) -> str:
    lines = [f"{'model':<11}{'field':<18}{'published':>10}{'computed':>10}{'delta':>8}  status"]
    for c in checks:
        if c.ok:
            status = "ok" if c.anomaly is None else "ok (listed as anomaly)"
        else:
            status = "KNOWN ANOMALY" if c.anomaly is not None else "MISMATCH"
        lines.append(f"{c.model:<11}{c.field:<18}{c.published:>10.2f}{c.computed:>10.2f}{c.delta:>+8.2f}  {status}")
    flagged = [c for c in checks if c.anomaly is not None]
    if flagged:
        lines.append("")
        lines.append("known anomalies:")
        for c in flagged:
            lines.append(f"  {c.model}.{c.field}: {c.anomaly}")
    bad = failures(checks)
    lines.append("")
    lines.append(f"{len(checks) - len(bad) - sum(1 for c in flagged if not c.ok)} reproduced, "
                 f"{sum(1 for c in flagged if not c.ok)} flagged, {len(bad)} mismatched")
    return "\n".join(lines) + "\n"
