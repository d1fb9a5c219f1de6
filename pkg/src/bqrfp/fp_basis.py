"""Fractional-polynomial basis expansion and design-matrix assembly."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

POWER_SET = (-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0)
MAX_DEGREE = 3


class DomainError(ValueError):
    """Raised when a transform is evaluated outside its domain."""


@dataclass(frozen=True)
class FPPowers:
    """Powers of one fractional polynomial, kept in non-decreasing order.

    An empty tuple means the predictor is omitted from the model.
    """

    powers: tuple[float, ...] = ()

    def __post_init__(self):
        ps = tuple(float(p) for p in self.powers)
        if len(ps) > MAX_DEGREE:
            raise ValueError(f"FP degree {len(ps)} exceeds {MAX_DEGREE}")
        bad = [p for p in ps if p not in POWER_SET]
        if bad:
            raise ValueError(f"powers {bad} not in the allowed set {POWER_SET}")
        object.__setattr__(self, "powers", tuple(sorted(ps)))

    @property
    def degree(self) -> int:
        return len(self.powers)


@dataclass(frozen=True)
class PredictorSpec:
    """One predictor of the model.

    kind is ``"continuous"`` (expanded by ``powers``) or ``"categorical"``
    (integer codes, one column by default, ``encoding="dummy"`` for
    treatment dummies against the first level).
    """

    name: str
    kind: str = "continuous"
    powers: FPPowers = field(default_factory=FPPowers)
    levels: tuple[int, ...] | None = None
    encoding: str = "integer"
    shift: bool = False

    def __post_init__(self):
        if self.kind not in ("continuous", "categorical"):
            raise ValueError(f"unknown predictor kind {self.kind!r}")
        if self.encoding not in ("integer", "dummy"):
            raise ValueError(f"unknown categorical encoding {self.encoding!r}")
        if not isinstance(self.powers, FPPowers):
            object.__setattr__(self, "powers", FPPowers(tuple(self.powers)))
        if self.levels is not None:
            levels = tuple(sorted(int(c) for c in self.levels))
            if levels != tuple(range(levels[0], levels[0] + len(levels))):
                raise ValueError(f"{self.name}: category codes must be contiguous, got {levels}")
            object.__setattr__(self, "levels", levels)

    @classmethod
    def continuous(cls, name: str, powers: Sequence[float], shift: bool = False) -> "PredictorSpec":
        return cls(name, "continuous", FPPowers(tuple(powers)), shift=shift)

    @classmethod
    def categorical(cls, name: str, levels=None, encoding: str = "integer") -> "PredictorSpec":
        return cls(name, "categorical", levels=None if levels is None else tuple(levels), encoding=encoding)


@dataclass(frozen=True)
class DesignMatrix:
    values: np.ndarray
    column_labels: tuple[tuple[str, str], ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("design values must be a 2-d array")
        if values.shape[1] != len(self.column_labels):
            raise ValueError("one label per column is required")
        if not np.all(np.isfinite(values)):
            raise DomainError("design matrix contains non-finite entries")
        if len(set(self.column_labels)) != len(self.column_labels):
            raise ValueError("column labels must be unique")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def D(self) -> int:
        return self.values.shape[1]

    @property
    def labels(self) -> list[str]:
        return [term for _, term in self.column_labels]

    def subset(self, columns) -> "DesignMatrix":
        idx = np.flatnonzero(np.asarray(columns)) if np.asarray(columns).dtype == bool else list(columns)
        return DesignMatrix(self.values[:, idx], tuple(self.column_labels[i] for i in idx))


def box_tidwell(x, a: float):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("Box-Tidwell transform needs x > 0")
    out = np.log(x) if a == 0 else x ** float(a)
    return out if out.ndim else float(out)


def fp_terms(x, powers: FPPowers | Sequence[float]):
    """Evaluate the FP terms h_1..h_m at ``x``.

    A power equal to its predecessor multiplies the previous term by log(x).
    Returns a list of ``m`` floats for scalar ``x``; for array ``x`` an
    ``(len(x), m)`` array.
    """
    if not isinstance(powers, FPPowers):
        powers = FPPowers(tuple(powers))
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError("fractional polynomial terms need x > 0")
    cols = []
    prev = None
    for p in powers.powers:
        if prev is not None and p == prev:
            cols.append(cols[-1] * np.log(arr))
        else:
            cols.append(box_tidwell(arr, p))
        prev = p
    if arr.ndim == 0:
        return [float(c) for c in cols]
    return np.column_stack(cols) if cols else np.empty((arr.shape[0], 0))


def _fmt_power(p: float) -> str:
    return f"{p:g}"


def term_labels(name: str, powers: FPPowers) -> list[str]:
    labels = []
    base, logs, prev = None, 0, None
    for p in powers.powers:
        if prev is not None and p == prev:
            logs += 1
        else:
            base, logs = p, 0
        if base == 0:
            k = logs + 1
            labels.append(f"log({name})" if k == 1 else f"log({name})^{k}")
        else:
            lab = f"{name}^{_fmt_power(base)}"
            if logs:
                lab += f"*log({name})" if logs == 1 else f"*log({name})^{logs}"
            labels.append(lab)
        prev = p
    return labels


def build_design(
    rows: Mapping[str, Sequence],
    specs: Sequence[PredictorSpec],
    intercept: bool = False,
) -> DesignMatrix:
    """Assemble the design matrix for ``specs`` in order.

    ``rows`` maps column names to equal-length sequences (a DataFrame works).
    """
    columns: list[np.ndarray] = []
    labels: list[tuple[str, str]] = []
    n = None
    for spec in specs:
        col = np.asarray(rows[spec.name], dtype=float)
        if n is None:
            n = col.shape[0]
        elif col.shape[0] != n:
            raise ValueError(f"column {spec.name} has {col.shape[0]} rows, expected {n}")
        if spec.kind == "continuous":
            if spec.powers.degree == 0:
                continue
            x = col
            if spec.shift:
                x = x + (1.0 - np.min(x))
            bad = np.flatnonzero(~(x > 0))
            if bad.size:
                shown = ", ".join(map(str, bad[:20])) + (" ..." if bad.size > 20 else "")
                raise DomainError(f"{spec.name}: nonpositive values at rows [{shown}]")
            block = fp_terms(x, spec.powers)
            columns.extend(block.T)
            labels.extend((spec.name, lab) for lab in term_labels(spec.name, spec.powers))
        else:
            if np.any(col != np.round(col)):
                raise ValueError(f"{spec.name}: categorical codes must be integers")
            codes = col.astype(int)
            if spec.levels is not None:
                unknown = sorted(set(codes.tolist()) - set(spec.levels))
                if unknown:
                    raise ValueError(f"{spec.name}: unknown category codes {unknown}")
                levels = spec.levels
            else:
                levels = tuple(sorted(set(codes.tolist())))
            if spec.encoding == "integer":
                columns.append(codes.astype(float))
                labels.append((spec.name, spec.name))
            else:
                for lev in levels[1:]:
                    columns.append((codes == lev).astype(float))
                    labels.append((spec.name, f"{spec.name}[{lev}]"))
    if n is None:
        raise ValueError("no predictors given")
    if intercept:
        columns.insert(0, np.ones(n))
        labels.insert(0, ("(Intercept)", "(Intercept)"))
    values = np.column_stack(columns) if columns else np.empty((n, 0))
    return DesignMatrix(values, tuple(labels))


def expected_columns(specs: Sequence[PredictorSpec], intercept: bool = False) -> int:
    """Column count implied by ``specs`` with integer-coded categoricals."""
    d = sum(s.powers.degree for s in specs if s.kind == "continuous")
    d += sum(1 for s in specs if s.kind == "categorical")
    return d + int(intercept)


def rank_deficient_columns(B: np.ndarray, tol: float | None = None) -> list[int]:
    """Indices of columns that are (numerically) in the span of earlier ones."""
    B = np.asarray(B, dtype=float)
    scale = np.linalg.norm(B, axis=0)
    scale[scale == 0] = 1.0
    Bs = B / scale
    tol = tol if tol is not None else max(B.shape) * np.finfo(float).eps * 1e3
    bad, kept = [], []
    for j in range(B.shape[1]):
        trial = Bs[:, kept + [j]]
        s = np.linalg.svd(trial, compute_uv=False)
        if s[-1] <= tol * s[0] or not math.isfinite(s[-1]):
            bad.append(j)
        else:
            kept.append(j)
    return bad
