"""Shared containers, the sign score, column loadings, RNG streams and CSV I/O."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DataFormatError, DegenerateColumn


@dataclass(frozen=True)
class Sample:
    """Observed triplet ``(y, d, x)``.

    ``x`` is stored column-major and may contain an all-ones intercept column.
    A control matrix with zero columns is accepted for the no-controls edge case.
    """

    y: np.ndarray
    d: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        d = np.asarray(self.d, dtype=float).ravel()
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise ValueError("x must be a 2-d array")
        n = y.shape[0]
        if n < 2:
            raise ValueError("need at least two observations")
        if d.shape[0] != n or x.shape[0] != n:
            raise ValueError(
                f"row counts differ: y={n}, d={d.shape[0]}, x={x.shape[0]}")
        for name, arr in (("y", y), ("d", d), ("x", x)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains NaN or Inf")
        x = np.asfortranarray(x)
        for arr in (y, d, x):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def xtilde(self) -> np.ndarray:
        """Full design ``(d, x)`` used by the penalized median regression."""
        return np.column_stack([self.d, self.x])


@dataclass(frozen=True)
class PenaltyWeights:
    """Diagonal penalty loadings; entry 0 belongs to ``d``, the rest to ``x``."""

    psi: np.ndarray

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=float).ravel()
        if np.any(psi < 0) or not np.all(np.isfinite(psi)):
            raise ValueError("penalty loadings must be finite and non-negative")
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)

    def __len__(self):
        return self.psi.shape[0]

    def without_intercept(self, sample: Sample) -> "PenaltyWeights":
        """Zero the loading of every constant-one column of ``sample.x``."""
        psi = self.psi.copy()
        ones = np.all(sample.x == 1.0, axis=0)
        psi[1:][ones] = 0.0
        return PenaltyWeights(psi)


@dataclass(frozen=True)
class RngStream:
    """Independent random stream keyed by ``(seed, stream_id)``.

    ``stream_id`` may be a tuple to key nested streams such as
    ``(replication, stage)``.  Equal keys always give bit-identical draws.
    """

    seed: int
    stream_id: int | tuple = 0

    def _key(self):
        sid = self.stream_id if isinstance(self.stream_id, tuple) else (self.stream_id,)
        return tuple(int(s) for s in sid)

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed) & (2**64 - 1), spawn_key=self._key())
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, self._key() + tuple(int(i) for i in ids))


def sign_score(t):
    """Median score ``1/2 - 1{t <= 0}``; vectorizes over arrays."""
    if np.ndim(t) == 0:
        return 0.5 if t > 0 else -0.5
    return np.where(np.asarray(t) > 0, 0.5, -0.5)


def column_loadings(sample: Sample) -> PenaltyWeights:
    """Root-mean-square of ``d`` and of every column of ``x``."""
    xt = sample.xtilde
    psi = np.sqrt(np.mean(xt * xt, axis=0))
    zero = np.flatnonzero(psi == 0)
    if zero.size:
        j = int(zero[0])
        name = "d" if j == 0 else f"x{j}"
        raise DegenerateColumn(name)
    return PenaltyWeights(psi)


def support_of(coef: np.ndarray, rel_tol: float = 1e-7) -> np.ndarray:
    """Indices counted as nonzero: ``|b_j| > rel_tol * max(1, ||b||_inf)``."""
    coef = np.asarray(coef, dtype=float)
    if coef.size == 0:
        return np.zeros(0, dtype=int)
    thresh = rel_tol * max(1.0, float(np.max(np.abs(coef))))
    return np.flatnonzero(np.abs(coef) > thresh)


def _read_numeric_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if len(set(header)) != len(header):
            raise DataFormatError(f"{path}: duplicate column names")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    if not np.all(np.isfinite(data)):
        raise DataFormatError(f"{path}: non-finite value")
    return header, data


def _numbered(header, prefix, path):
    cols = sorted((h for h in header if h.startswith(prefix) and h[len(prefix):].isdigit()),
                  key=lambda h: int(h[len(prefix):]))
    if cols != [f"{prefix}{j}" for j in range(1, len(cols) + 1)]:
        raise DataFormatError(f"{path}: columns {prefix}1..{prefix}k must have no gaps")
    return cols


def _columns(header, data, names):
    idx = {h: i for i, h in enumerate(header)}
    return data[:, [idx[h] for h in names]] if names else np.zeros((data.shape[0], 0))


def read_csv(path: str | Path) -> Sample:
    """Load a sample from a CSV with columns ``y``, ``d`` and ``x1..xp``."""
    header, data = _read_numeric_csv(path)
    if "y" not in header or "d" not in header:
        raise DataFormatError(f"{path}: header must contain 'y' and 'd'")
    xcols = _numbered(header, "x", path)
    unknown = set(header) - {"y", "d", *xcols}
    if unknown:
        raise DataFormatError(f"{path}: unknown columns {sorted(unknown)}")
    idx = header.index
    return Sample(data[:, idx("y")], data[:, idx("d")], _columns(header, data, xcols))


def read_targets_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Load ``(y, D, U)`` from a CSV with columns ``y``, ``d1..dk`` and ``x1..xp``."""
    header, data = _read_numeric_csv(path)
    if "y" not in header:
        raise DataFormatError(f"{path}: header must contain 'y'")
    dcols = _numbered(header, "d", path)
    if not dcols:
        raise DataFormatError(f"{path}: need at least one target column d1")
    xcols = _numbered(header, "x", path)
    unknown = set(header) - {"y", *dcols, *xcols}
    if unknown:
        raise DataFormatError(f"{path}: unknown columns {sorted(unknown)}")
    return (data[:, header.index("y")], _columns(header, data, dcols),
            _columns(header, data, xcols))


def write_csv(sample: Sample, path: str | Path) -> None:
    header = ["y", "d"] + [f"x{j}" for j in range(1, sample.p + 1)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(sample.n):
            w.writerow([repr(float(v)) for v in
                        (sample.y[i], sample.d[i], *sample.x[i])])
