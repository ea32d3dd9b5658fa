"""Per-iteration metrics rows and their fixed CSV schema."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable

SCHEMA_VERSION = 1


@dataclass
class MetricsRecord:
    """One evaluation row; ``None`` where a quantity does not apply.

    ``lemma2_max_residual`` is relative: the largest matched-pair residual
    divided by that pair's distance. ``k_star`` is the drift-law prediction
    ``w1/rho + 1`` for penalty regularizers.
    """

    iteration: int
    run: str = "main"
    d_loss: float | None = None
    g_loss: float | None = None
    dual_objective: float | None = None
    lipschitz_estimate: float | None = None
    lam: float | None = None
    g_max: float | None = None
    w1: float | None = None
    k_star: float | None = None
    prop1_min_cosine: float | None = None
    prop1_mean_cosine: float | None = None
    lemma2_max_residual: float | None = None
    wall_ms: float | None = None

    def is_finite(self) -> bool:
        return all(
            v is None or math.isfinite(v)
            for k, v in asdict(self).items()
            if k not in ("run", "iteration")
        )


COLUMNS = [f.name for f in fields(MetricsRecord)]
_FLOAT_COLUMNS = COLUMNS[2:]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(records: Iterable[MetricsRecord], path: str | Path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in records:
        w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])
    Path(path).write_text(buf.getvalue())


def read_csv(path: str | Path) -> list[MetricsRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != COLUMNS:
            raise ValueError(f"{path}: unexpected metrics columns {reader.fieldnames}")
        out = []
        for row in reader:
            kw = {c: (float(row[c]) if row[c] != "" else None) for c in _FLOAT_COLUMNS}
            out.append(MetricsRecord(iteration=int(row["iteration"]), run=row["run"], **kw))
    return out
