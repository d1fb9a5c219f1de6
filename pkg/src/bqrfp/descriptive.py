"""Clinical category recoding and contingency-table association measures."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2 as _chi2


@dataclass(frozen=True)
class CategoryScheme:
    """Left-closed intervals ``[lower[k], lower[k+1])`` on ``[lower[0], upper)``."""

    name: str
    lower: tuple[float, ...]
    labels: tuple[str, ...]
    upper: float = math.inf

    def __post_init__(self):
        if len(self.lower) != len(self.labels) or not self.labels:
            raise ValueError("need one label per interval")
        if any(b <= a for a, b in zip(self.lower, self.lower[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("labels must be unique")
        if not self.upper > self.lower[-1]:
            raise ValueError("upper bound must exceed the last breakpoint")

    def contains(self, value: float) -> bool:
        return self.lower[0] <= value < self.upper

    def index(self, value: float) -> int:
        value = float(value)
        if not (math.isfinite(value) and self.contains(value)):
            raise ValueError(f"{self.name}: value {value!r} outside [{self.lower[0]}, {self.upper})")
        return bisect.bisect_right(self.lower, value) - 1


# Integer-printed ranges such as 120-139 are read as [120, 140) so that
# averaged readings like 139.5 still fall in a class.
SBP = CategoryScheme("SBP", (0.0, 120.0, 140.0), ("normal", "pre-hypertension", "hypertension"))
DBP = CategoryScheme("DBP", (0.0, 80.0, 90.0), ("normal", "pre-hypertension", "hypertension"))
BMI = CategoryScheme(
    "BMI",
    (0.0, 18.5, 25.0, 30.0, 35.0, 40.0),
    ("underweight", "healthy", "overweight", "obese", "very obese", "morbidly obese"),
)
AGE = CategoryScheme("Age", (20.0, 30.0, 40.0, 50.0), ("20-29", "30-39", "40-49", ">=50"))

SCHEMES = {s.name: s for s in (SBP, DBP, BMI, AGE)}


def recode(value: float, scheme: CategoryScheme) -> str:
    return scheme.labels[scheme.index(value)]


def recode_many(values, scheme: CategoryScheme) -> list[str]:
    return [recode(v, scheme) for v in np.asarray(values, dtype=float).tolist()]


STRENGTH_THRESHOLDS = ((0.10, "very weak"), (0.20, "weak"), (0.40, "moderate"))


def strength_label(v: float) -> str:
    for cut, label in STRENGTH_THRESHOLDS:
        if v < cut:
            return label
    return "strong"


@dataclass
class AssociationResult:
    table: np.ndarray
    chi2: float
    dof: int
    p_value: float
    cramers_v: float
    strength_label: str

    def to_dict(self) -> dict:
        return {
            "table": self.table.tolist(),
            "chi2": self.chi2,
            "dof": self.dof,
            "p_value": self.p_value,
            "cramers_v": self.cramers_v,
            "strength": self.strength_label,
        }


def association(table) -> AssociationResult:
    """Pearson chi-square test (no continuity correction) and Cramer's V."""
    t = np.asarray(table, dtype=float)
    if t.ndim != 2 or t.shape[0] < 2 or t.shape[1] < 2:
        raise ValueError("need at least a 2x2 table")
    if np.any(t < 0) or np.any(~np.isfinite(t)):
        raise ValueError("counts must be finite and nonnegative")
    rows, cols = t.sum(axis=1), t.sum(axis=0)
    if np.any(rows == 0) or np.any(cols == 0):
        raise ValueError("table has an empty row or column")
    n = t.sum()
    expected = np.outer(rows, cols) / n
    stat = float(np.sum((t - expected) ** 2 / expected))
    r, c = t.shape
    dof = (r - 1) * (c - 1)
    v = math.sqrt(stat / (n * min(r - 1, c - 1)))
    v = min(v, 1.0)
    return AssociationResult(t, stat, dof, float(_chi2.sf(stat, dof)), v, strength_label(v))


def crosstab(row_labels, col_labels, row_levels=None, col_levels=None):
    """Counts table with rows/columns in the given level order (first-seen otherwise)."""
    row_levels = list(row_levels) if row_levels is not None else list(dict.fromkeys(row_labels))
    col_levels = list(col_levels) if col_levels is not None else list(dict.fromkeys(col_labels))
    ri = {k: i for i, k in enumerate(row_levels)}
    ci = {k: i for i, k in enumerate(col_levels)}
    out = np.zeros((len(row_levels), len(col_levels)), dtype=int)
    for a, b in zip(row_labels, col_labels):
        out[ri[a], ci[b]] += 1
    return out, row_levels, col_levels


def describe_table(factor_values, factor_levels, response_values, scheme: CategoryScheme):
    """Table-shaped rows for one factor against a categorised response.

    Empty factor levels are dropped before the test.
    """
    resp = recode_many(response_values, scheme)
    counts, levels, _ = crosstab(list(factor_values), resp, factor_levels, scheme.labels)
    keep = counts.sum(axis=1) > 0
    counts = counts[keep]
    levels = [lev for lev, k in zip(levels, keep) if k]
    result = association(counts[:, counts.sum(axis=0) > 0])
    pct = 100.0 * counts / counts.sum(axis=1, keepdims=True)
    return levels, counts, pct, result
