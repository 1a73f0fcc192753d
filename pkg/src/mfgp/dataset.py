"""Multi-fidelity data model, nestedness checking, and training assembly.

The canonical on-disk format is a JSON manifest::

    {"d": 1, "levels": [{"t": 2.5, "X": [[0.1], [0.7]], "y": [1.0, -0.2]}, ...]}

A CSV alternative stores one file per level (columns ``x1..xd,y``) next to a
sidecar CSV listing ``file,t`` pairs.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

NESTED_TOL = 1e-12


class NotNested(Exception):
    """Raised when an operation requires a nested design chain."""


@dataclass(frozen=True)
class FidelityLevel:
    """One fidelity level: tuning value t, design matrix X, outputs y."""

    t: float
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if not np.isfinite(self.t) or self.t <= 0:
            raise ValueError("tuning parameter must be finite and positive")
        if X.shape[0] != y.shape[0]:
            raise ValueError("design matrix and outputs disagree in length")
        if X.shape[0] < 1:
            raise ValueError("a fidelity level needs at least one point")
        if len(np.unique(X, axis=0)) != X.shape[0]:
            raise ValueError("design rows must be distinct")

    @property
    def n(self) -> int:
        return self.X.shape[0]


class MultiFidelityData:
    """Ordered fidelity levels with strictly decreasing tuning values.

    Levels may be supplied in any order; they are sorted by decreasing t.
    Duplicate tuning values are rejected.
    """

    def __init__(self, levels):
        levels = sorted(levels, key=lambda lv: -lv.t)
        if len(levels) < 2:
            raise ValueError("need at least two fidelity levels")
        ts = [lv.t for lv in levels]
        if len(set(ts)) != len(ts):
            raise ValueError("duplicate tuning values")
        dims = {lv.X.shape[1] for lv in levels}
        if len(dims) != 1:
            raise ValueError("all levels must share the input dimension")
        self.levels: list[FidelityLevel] = levels
        self.d: int = dims.pop()

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def t_values(self) -> np.ndarray:
        return np.array([lv.t for lv in self.levels])

    def __eq__(self, other):
        if not isinstance(other, MultiFidelityData):
            return NotImplemented
        return self.d == other.d and len(self.levels) == len(other.levels) and all(
            a.t == b.t and np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
            for a, b in zip(self.levels, other.levels)
        )


@dataclass(frozen=True)
class TrainingAssembly:
    """Stacked training arrays for levels 2..L.

    ``X`` and ``t`` index the stacked design points; ``y_prev`` holds the
    matching outputs of the level above (the augmented y-coordinates) and
    ``y`` the observed responses at the level itself.
    """

    X: np.ndarray
    t: np.ndarray
    y_prev: np.ndarray
    y: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def points(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Augmented kernel points as a (t, X, y_prev) tuple."""
        return self.t, self.X, self.y_prev


def check_nested(data: MultiFidelityData, tol: float = NESTED_TOL) -> bool:
    """True iff each level's design equals the leading rows of the level above."""
    for coarse, fine in zip(data.levels, data.levels[1:]):
        if fine.n > coarse.n:
            return False
        if not np.allclose(coarse.X[: fine.n], fine.X, rtol=0.0, atol=tol):
            return False
    return True


def assemble(data: MultiFidelityData, tol: float = NESTED_TOL) -> TrainingAssembly:
    """Build the stacked arrays used by the augmented-space GP.

    Raises
    ------
    NotNested
        If the design chain is not nested.
    """
    if not check_nested(data, tol):
        raise NotNested("designs are not nested; see the stochastic-EM fitting path")
    xs, ts, prevs, ys = [], [], [], []
    for coarse, fine in zip(data.levels, data.levels[1:]):
        xs.append(fine.X)
        ts.append(np.full(fine.n, fine.t))
        prevs.append(coarse.y[: fine.n])
        ys.append(fine.y)
    return TrainingAssembly(
        X=np.vstack(xs), t=np.concatenate(ts),
        y_prev=np.concatenate(prevs), y=np.concatenate(ys),
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def to_manifest(data: MultiFidelityData) -> dict:
    return {
        "d": data.d,
        "levels": [
            {"t": lv.t, "X": lv.X.tolist(), "y": lv.y.tolist()} for lv in data.levels
        ],
    }


def from_manifest(doc: dict) -> MultiFidelityData:
    levels = [FidelityLevel(t=lv["t"], X=np.array(lv["X"], dtype=float),
                            y=np.array(lv["y"], dtype=float)) for lv in doc["levels"]]
    data = MultiFidelityData(levels)
    if data.d != doc.get("d", data.d):
        raise ValueError("manifest dimension disagrees with level matrices")
    return data


def save_json(data: MultiFidelityData, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(to_manifest(data), fh, indent=1)
        fh.write("\n")


def load_json(path: str) -> MultiFidelityData:
    with open(path) as fh:
        return from_manifest(json.load(fh))


def save_csv(data: MultiFidelityData, directory: str, stem: str = "level") -> str:
    """Write one CSV per level plus a ``<stem>s.csv`` sidecar of file,t rows."""
    os.makedirs(directory, exist_ok=True)
    sidecar = os.path.join(directory, f"{stem}s.csv")
    rows = []
    for i, lv in enumerate(data.levels, start=1):
        name = f"{stem}{i}.csv"
        rows.append((name, lv.t))
        with open(os.path.join(directory, name), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{j + 1}" for j in range(data.d)] + ["y"])
            for x_row, y_val in zip(lv.X, lv.y):
                writer.writerow([repr(v) for v in x_row] + [repr(y_val)])
    with open(sidecar, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "t"])
        for name, t in rows:
            writer.writerow([name, repr(t)])
    return sidecar


def load_csv(sidecar: str) -> MultiFidelityData:
    base = os.path.dirname(sidecar)
    levels = []
    with open(sidecar, newline="") as fh:
        for row in csv.DictReader(fh):
            with open(os.path.join(base, row["file"]), newline="") as lf:
                reader = csv.reader(lf)
                header = next(reader)
                body = np.array([[float(v) for v in r] for r in reader])
            if header[-1] != "y":
                raise ValueError(f"level file {row['file']} must end with a y column")
            levels.append(FidelityLevel(t=float(row["t"]), X=body[:, :-1], y=body[:, -1]))
    return MultiFidelityData(levels)
