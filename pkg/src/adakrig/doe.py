"""Design-of-experiments containers and maximin Latin hypercube designs."""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import ArgumentError, DomainError

__all__ = [
    "Design",
    "Domain",
    "DuplicatePointWarning",
    "augment_design",
    "is_latin",
    "maximin_lhd",
    "min_intersite_distance",
]

PROVENANCE = ("initial-LHD", "ECD", "WIMSE", "MMSE", "manual")


class DuplicatePointWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box ``[lower, upper]`` in input units."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi):
            raise ArgumentError("lower and upper bounds differ in length")
        if any(not a < b for a, b in zip(lo, hi)):
            raise ArgumentError(f"empty domain: lower={lo}, upper={hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, dim: int) -> "Domain":
        return cls((0.0,) * dim, (1.0,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper)

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def bounds(self):
        return self.lo, self.hi

    def to_unit(self, Z) -> np.ndarray:
        return (np.asarray(Z, dtype=float) - self.lo) / self.width

    def from_unit(self, U) -> np.ndarray:
        return self.lo + np.asarray(U, dtype=float) * self.width

    def contains(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return np.all((Z >= self.lo) & (Z <= self.hi), axis=1)

    def subdomain(self, columns) -> "Domain":
        columns = list(columns)
        return Domain(self.lo[columns], self.hi[columns])

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True)
class Design:
    """Ordered design points with optional evaluations and provenance tags."""

    domain: Domain
    points: np.ndarray
    evaluations: np.ndarray | None = None
    tags: tuple = field(default=())

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, self.domain.dim)
        object.__setattr__(self, "points", pts)
        if self.evaluations is not None:
            ev = np.asarray(self.evaluations, dtype=float).reshape(pts.shape[0], -1)
            object.__setattr__(self, "evaluations", ev)
        tags = tuple(self.tags) if self.tags else ("manual",) * pts.shape[0]
        if len(tags) != pts.shape[0]:
            raise ArgumentError("one provenance tag per point is required")
        object.__setattr__(self, "tags", tags)
        if pts.size and not np.all(self.domain.contains(pts)):
            raise DomainError("design points outside the domain")

    def __len__(self):
        return self.points.shape[0]

    @property
    def unit_points(self) -> np.ndarray:
        return self.domain.to_unit(self.points)

    @property
    def has_evaluations(self) -> bool:
        return self.evaluations is not None

    def with_evaluations(self, evaluations) -> "Design":
        return Design(self.domain, self.points, evaluations, self.tags)

    # -- I/O ----------------------------------------------------------------
    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        q = self.domain.dim
        header = [f"z{k + 1}" for k in range(q)]
        if self.has_evaluations:
            header += [f"h{j + 1}" for j in range(self.evaluations.shape[1])]
        writer.writerow(header)
        for i in range(len(self)):
            row = [repr(float(v)) for v in self.points[i]]
            if self.has_evaluations:
                row += [repr(float(v)) for v in self.evaluations[i]]
            writer.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, domain: Domain, tags=()) -> "Design":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            raise ArgumentError("empty design CSV")
        header, body = rows[0], rows[1:]
        q = domain.dim
        if len(header) < q:
            raise ArgumentError(f"CSV has {len(header)} columns, domain needs {q}")
        data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(
            len(body), len(header)
        )
        evaluations = data[:, q:] if len(header) > q else None
        return cls(domain, data[:, :q], evaluations, tuple(tags))

    def to_json(self) -> str:
        doc = {
            "domain": self.domain.to_dict(),
            "points": self.points.tolist(),
            "evaluations": None if self.evaluations is None else self.evaluations.tolist(),
            "tags": list(self.tags),
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Design":
        doc = json.loads(text)
        domain = Domain(doc["domain"]["lower"], doc["domain"]["upper"])
        return cls(domain, doc["points"], doc.get("evaluations"), tuple(doc["tags"]))


def min_intersite_distance(points) -> float:
    """Smallest pairwise Euclidean distance among the rows of ``points``.

    Pass a :class:`Design` to measure in the unit-scaled domain.
    """
    if isinstance(points, Design):
        points = points.unit_points
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] < 2:
        raise ArgumentError("the maximin distance needs at least two points")
    return float(pdist(points).min())


def is_latin(unit_points) -> bool:
    """True when every coordinate has exactly one point in each of N bins."""
    U = np.atleast_2d(np.asarray(unit_points, dtype=float))
    n = U.shape[0]
    bins = np.minimum(np.floor(U * n).astype(int), n - 1)
    return all(np.array_equal(np.sort(bins[:, k]), np.arange(n)) for k in range(U.shape[1]))


def _criterion(dist):
    """Lexicographic maximin key: (delta, -number of pairs at delta)."""
    iu = np.triu_indices(dist.shape[0], 1)
    vals = dist[iu]
    delta = vals.min()
    return delta, -int(np.sum(vals <= delta * (1 + 1e-12)))


def maximin_lhd(n: int, domain: Domain, rng, iterations: int = 1000, return_history=False):
    """Maximin Latin hypercube design of ``n`` points.

    Points sit at bin centres of a random Latin hypercube, which is then
    improved by swapping two entries of one column of the permutation matrix
    (Morris-Mitchell-style exchange). A swap is kept only if it increases the
    minimum distance, or keeps it and reduces the number of pairs attaining
    it. One of the swapped rows is always taken from a closest pair.
    """
    if n < 1:
        raise ArgumentError("maximin_lhd needs n >= 1")
    q = domain.dim
    perms = np.column_stack([rng.permutation(n) for _ in range(q)])
    history = []
    if n > 2:
        U = (perms + 0.5) / n
        dist = squareform(pdist(U))
        np.fill_diagonal(dist, np.inf)
        best = _criterion(dist)
        history.append(best[0])
        for _ in range(iterations):
            i_flat = np.argmin(dist)
            i = rng.choice(np.unravel_index(i_flat, dist.shape))
            j = rng.integers(n - 1)
            j = j + (j >= i)
            k = rng.integers(q)
            perms[[i, j], k] = perms[[j, i], k]
            U_new = (perms + 0.5) / n
            d_i = np.linalg.norm(U_new - U_new[i], axis=1)
            d_j = np.linalg.norm(U_new - U_new[j], axis=1)
            trial = dist.copy()
            trial[i, :] = trial[:, i] = d_i
            trial[j, :] = trial[:, j] = d_j
            trial[i, i] = trial[j, j] = np.inf
            cand = _criterion(trial)
            if cand > best:
                dist, best, U = trial, cand, U_new
            else:
                perms[[i, j], k] = perms[[j, i], k]
            history.append(best[0])
    U = (perms + 0.5) / n
    design = Design(domain, domain.from_unit(U), None, ("initial-LHD",) * n)
    if return_history:
        return design, np.asarray(history)
    return design


def augment_design(design: Design, z_new, evaluation=None, tag: str = "manual") -> Design:
    """Append one point (and its evaluation) to a copy of ``design``."""
    z_new = np.asarray(z_new, dtype=float).reshape(1, design.domain.dim)
    if not design.domain.contains(z_new)[0]:
        raise DomainError(f"point {z_new.ravel().tolist()} outside the domain")
    if tag not in PROVENANCE:
        raise ArgumentError(f"unknown provenance tag {tag!r}")
    if len(design) and np.any(np.all(design.points == z_new, axis=1)):
        warnings.warn(
            f"point {z_new.ravel().tolist()} duplicates an existing design point",
            DuplicatePointWarning,
            stacklevel=2,
        )
    points = np.vstack([design.points, z_new])
    if len(design) == 0:
        evaluations = None if evaluation is None else np.reshape(evaluation, (1, -1))
    elif design.has_evaluations != (evaluation is not None):
        raise ArgumentError("new point must match the design's evaluation status")
    elif evaluation is None:
        evaluations = None
    else:
        ev = np.asarray(evaluation, dtype=float).reshape(1, -1)
        evaluations = np.vstack([design.evaluations, ev])
    return Design(design.domain, points, evaluations, design.tags + (tag,))
