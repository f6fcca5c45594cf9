"""Trial samples, allocation design and the plug-in empirical CDF."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError, ParseError, SchemaError

__all__ = [
    "TrialDataset",
    "EmpiricalCdf",
    "CsvSchema",
    "load_csv",
    "write_csv",
    "empirical_cdf",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TrialDataset:
    """One randomized trial: outcomes, arm labels, covariates and design.

    Parameters
    ----------
    y : array_like, shape (n,)
        Outcomes. Binary outcomes must be coded 0/1.
    z : array_like of int, shape (n,)
        Arm labels in ``0..K``.
    x : array_like, shape (n, d)
        Baseline covariates; ``d`` may be zero.
    pi : array_like, shape (K+1,)
        Known allocation probabilities.
    """

    y: np.ndarray
    z: np.ndarray
    x: np.ndarray
    pi: np.ndarray
    covariate_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        y = _frozen(np.ravel(self.y))
        n = y.shape[0]
        z_raw = np.asarray(self.z)
        if z_raw.ndim != 1 or z_raw.shape[0] != n:
            raise DomainError(f"z must have {n} entries, got shape {z_raw.shape}")
        if z_raw.size and not np.all(np.equal(np.mod(z_raw, 1), 0)):
            raise DomainError("arm labels must be integers")
        z = np.array(z_raw, dtype=np.int64)
        z.setflags(write=False)
        x = np.zeros((n, 0)) if self.x is None else np.asarray(self.x, dtype=float)
        if x.size == 0:
            x = np.zeros((n, 0))
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] != n:
            raise DomainError(f"x must have {n} rows, got {x.shape[0]}")
        x = _frozen(x)
        pi = _frozen(np.ravel(self.pi))

        if pi.size < 2:
            raise DomainError("need at least two arms")
        if np.any(pi <= 0) or np.any(pi >= 1):
            raise DomainError(f"allocation probabilities must lie in (0, 1): {pi}")
        if abs(pi.sum() - 1.0) > 1e-12:
            raise DomainError(f"allocation probabilities sum to {pi.sum()!r}, not 1")
        k_arms = pi.size
        bad = np.flatnonzero((z < 0) | (z >= k_arms))
        if bad.size:
            i = int(bad[0])
            raise DomainError(f"row {i}: arm label {z[i]} outside 0..{k_arms - 1}")
        if n < k_arms + 1:
            raise DomainError(f"n={n} too small for {k_arms} arms (need n >= K+2)")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)):
            raise DomainError("non-finite outcome or covariate value")
        levels = np.unique(y)
        if levels.size == 2 and not np.array_equal(levels, [0.0, 1.0]):
            raise DomainError(
                f"two-valued outcome {levels.tolist()} must be coded exactly as 0/1"
            )
        names = tuple(self.covariate_names) or tuple(f"x{j}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DomainError("covariate_names length does not match x")

        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def k_arms(self) -> int:
        """Number of arms, K+1."""
        return self.pi.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def is_binary(self) -> bool:
        return bool(np.all((self.y == 0) | (self.y == 1)))

    def arm_indicators(self) -> np.ndarray:
        """(n, K) matrix of 1{z_i = k} for k = 1..K."""
        ks = np.arange(1, self.k_arms)
        return (self.z[:, None] == ks[None, :]).astype(float)

    def __repr__(self):
        return f"TrialDataset(n={self.n}, k_arms={self.k_arms}, d={self.d})"


class EmpiricalCdf:
    """Right-continuous empirical distribution function of one sample.

    ``evaluate(t)`` counts ``#{i : x_i <= t} / n`` exactly; ties are not
    broken.
    """

    def __init__(self, values):
        v = np.sort(np.asarray(values, dtype=float).ravel())
        if v.size == 0:
            raise DomainError("empirical CDF of an empty sample")
        v.setflags(write=False)
        self.sorted_values = v
        self.n = v.size

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        counts = np.searchsorted(self.sorted_values, t, side="right")
        out = counts / self.n
        return float(out) if out.ndim == 0 else out

    __call__ = evaluate


def empirical_cdf(data: TrialDataset, col: int) -> EmpiricalCdf:
    if not 0 <= col < data.d:
        raise DomainError(f"covariate index {col} out of range (d={data.d})")
    return EmpiricalCdf(data.x[:, col])


@dataclass
class CsvSchema:
    """Column roles for :func:`load_csv`.

    ``pi`` is either a sequence of allocation probabilities or the string
    ``"from-data"``, in which case observed arm proportions are used.
    ``arm_map`` maps raw arm labels (as written in the file) to 0..K.
    """

    outcome: str
    arm: str
    covariates: Sequence[str] = ()
    pi: Sequence[float] | str | None = None
    arm_map: Mapping[str, int] | None = None
    k_arms: int | None = None

    def resolved_k_arms(self) -> int | None:
        if self.k_arms is not None:
            return int(self.k_arms)
        if self.pi is not None and not isinstance(self.pi, str):
            return len(self.pi)
        if self.arm_map:
            return max(self.arm_map.values()) + 1
        return None


def _parse_float(cell: str, row: int, col: str) -> float:
    s = cell.strip()
    if s == "" or s.upper() in {"NA", "NAN", "NULL"}:
        raise ParseError(f"row {row}: missing value in column {col!r}")
    try:
        v = float(s)
    except ValueError:
        raise ParseError(f"row {row}: non-numeric value {cell!r} in column {col!r}") from None
    if not math.isfinite(v):
        raise ParseError(f"row {row}: non-finite value {cell!r} in column {col!r}")
    return v


def load_csv(path, schema: CsvSchema) -> TrialDataset:
    """Read a header-first UTF-8 CSV into a validated :class:`TrialDataset`.

    Row numbers in error messages count data rows from 1 (the header is
    row 0). Rows with missing values in a used column are rejected, never
    imputed.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        used = [schema.outcome, schema.arm, *schema.covariates]
        for name in used:
            if name not in header:
                raise SchemaError(f"{path}: missing column {name!r} (have {header})")
        idx = {h: j for j, h in enumerate(header)}
        k_arms = schema.resolved_k_arms()

        ys, zs, xs = [], [], []
        for r, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise ParseError(f"row {r}: expected {len(header)} fields, got {len(row)}")
            ys.append(_parse_float(row[idx[schema.outcome]], r, schema.outcome))
            raw_arm = row[idx[schema.arm]].strip()
            if schema.arm_map is not None:
                if raw_arm not in schema.arm_map:
                    raise DomainError(f"row {r}: arm label {raw_arm!r} not in arm map")
                arm = int(schema.arm_map[raw_arm])
            else:
                a = _parse_float(raw_arm, r, schema.arm)
                if a != int(a):
                    raise DomainError(f"row {r}: arm label {raw_arm!r} is not an integer")
                arm = int(a)
            if arm < 0 or (k_arms is not None and arm >= k_arms):
                hi = "K" if k_arms is None else k_arms - 1
                raise DomainError(f"row {r}: arm label {raw_arm!r} outside 0..{hi}")
            zs.append(arm)
            xs.append([_parse_float(row[idx[c]], r, c) for c in schema.covariates])

    z = np.asarray(zs, dtype=np.int64)
    if schema.pi is None:
        raise SchemaError("allocation probabilities not given; pass values or 'from-data'")
    if isinstance(schema.pi, str):
        if schema.pi != "from-data":
            raise SchemaError(f"unknown allocation mode {schema.pi!r}")
        k = k_arms if k_arms is not None else int(z.max()) + 1
        pi = np.bincount(z, minlength=k) / z.size
    else:
        pi = np.asarray(schema.pi, dtype=float)
    x = np.asarray(xs, dtype=float).reshape(len(zs), len(schema.covariates))
    return TrialDataset(y=np.asarray(ys), z=z, x=x, pi=pi,
                        covariate_names=tuple(schema.covariates))


def write_csv(data: TrialDataset, path, outcome: str = "y", arm: str = "z") -> CsvSchema:
    """Serialize ``data`` and return a schema that reloads it exactly."""
    path = Path(path)
    names = list(data.covariate_names)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([outcome, arm, *names])
        for i in range(data.n):
            w.writerow([repr(float(data.y[i])), int(data.z[i]),
                        *(repr(float(v)) for v in data.x[i])])
    return CsvSchema(outcome=outcome, arm=arm, covariates=names,
                     pi=[float(p) for p in data.pi])
