"""Per-iteration run records and their CSV form."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

__all__ = ["RunLog", "BASE_COLUMNS", "Counters"]

BASE_COLUMNS = ("iter", "wall_ms", "fval", "gap", "grad_samples_cum", "hess_samples_cum",
                "hvp_count_cum", "subsolver_iters", "Et_budget", "flags")

_INT_COLUMNS = {"iter", "grad_samples_cum", "hess_samples_cum", "hvp_count_cum",
                "subsolver_iters"}


@dataclass
class Counters:
    grad_samples: int = 0
    hess_samples: int = 0
    hvp: int = 0


@dataclass
class RunLog:
    """Rows keyed by column name, plus the iterates that produced them."""

    extra_columns: tuple = ()
    rows: List[Dict] = field(default_factory=list)
    iterates: List[np.ndarray] = field(default_factory=list)

    @property
    def columns(self):
        return BASE_COLUMNS + tuple(self.extra_columns)

    def append(self, x, **values):
        row = {name: values.get(name, math.nan) for name in self.columns}
        if row["flags"] is math.nan or row["flags"] is None:
            row["flags"] = ""
        if self.rows:
            prev = self.rows[-1]
            if row["iter"] <= prev["iter"]:
                raise ValueError("iteration numbers must increase")
            for name in ("grad_samples_cum", "hess_samples_cum", "hvp_count_cum"):
                if row[name] < prev[name]:
                    raise ValueError(f"{name} must be non-decreasing")
        if not math.isfinite(row["fval"]):
            raise ValueError("objective value must be finite")
        self.rows.append(row)
        self.iterates.append(np.array(x, dtype=float, copy=True))

    def __len__(self):
        return len(self.rows)

    def column(self, name) -> np.ndarray:
        return np.array([row[name] for row in self.rows])

    @property
    def last(self) -> Dict:
        return self.rows[-1]

    def set_gaps(self, f_star):
        """Fill the gap column from a reference optimal value."""
        for row in self.rows:
            row["gap"] = row["fval"] - f_star if f_star is not None else math.nan

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_fmt(name, row[name]) for name in self.columns])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                fh.write(text)
        return text


def _fmt(name, value):
    if name == "flags":
        return value
    if name in _INT_COLUMNS:
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "NaN"
    return repr(value)
