"""Shared domain types: datasets, neighbor orderings and telescoped weights."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class NumericalError(ArithmeticError):
    """Raised when a computation is numerically impossible (singular, non-PD, ...)."""


def as_points(locs, dim=None) -> np.ndarray:
    """Coerce locations to a float array of shape (n, d).

    A 1-D input is read as n scalar locations unless ``dim`` says otherwise.
    """
    a = np.asarray(locs, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1) if dim is not None and dim == a.size and dim > 1 else a[:, None]
    if a.ndim != 2:
        raise ValueError(f"locations must be 1-D or 2-D, got shape {a.shape}")
    return a


def as_location(t, dim=None) -> np.ndarray:
    """Coerce a single location to a float vector of length d."""
    a = np.atleast_1d(np.asarray(t, dtype=float)).ravel()
    if dim is not None and a.size != dim:
        raise ValueError(f"location has dimension {a.size}, expected {dim}")
    if not np.all(np.isfinite(a)):
        raise ValueError("location coordinates must be finite")
    return a


@dataclass(frozen=True)
class Dataset:
    """Observation locations (n, d) paired with scalar responses (n,).

    Locations must be finite and pairwise distinct; duplicates are rejected
    because they make any covariance matrix singular.
    """

    locations: np.ndarray
    responses: np.ndarray

    def __post_init__(self):
        locs = as_points(self.locations)
        z = np.asarray(self.responses, dtype=float).ravel()
        if locs.shape[0] < 1:
            raise ValueError("empty dataset")
        if locs.shape[0] != z.size:
            raise ValueError(
                f"{locs.shape[0]} locations but {z.size} responses"
            )
        if locs.shape[1] not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {locs.shape[1]}")
        if not (np.all(np.isfinite(locs)) and np.all(np.isfinite(z))):
            raise ValueError("locations and responses must be finite")
        if np.unique(locs, axis=0).shape[0] != locs.shape[0]:
            raise ValueError("duplicate locations")
        locs.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "responses", z)

    @property
    def n(self) -> int:
        return self.responses.size

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    def with_responses(self, z) -> "Dataset":
        return Dataset(self.locations, z)


@dataclass(frozen=True)
class NeighborOrdering:
    """Observation indices sorted by distance to ``target``.

    ``perm[i]`` is the (0-based) index of the i-th nearest observation,
    ``dists[i]`` its distance and ``offsets[i]`` the vector target - t_perm[i].
    """

    target: np.ndarray
    perm: np.ndarray
    dists: np.ndarray
    offsets: np.ndarray = field(repr=False)

    def __len__(self):
        return self.perm.size

    def truncate(self, k: int) -> "NeighborOrdering":
        """Keep only the k nearest observations."""
        k = int(k)
        if k < 1:
            raise ValueError("k must be positive")
        return NeighborOrdering(self.target, self.perm[:k], self.dists[:k], self.offsets[:k])


def order_neighbors(data, t) -> NeighborOrdering:
    """Sort observations by Euclidean distance to ``t``.

    Exact distance ties are broken by ascending original index.

    Parameters
    ----------
    data : Dataset or array_like
        Dataset, or raw locations of shape (n, d).
    t : array_like
        Target location of length d.
    """
    locs = data.locations if isinstance(data, Dataset) else as_points(data)
    if locs.shape[0] == 0:
        raise ValueError("empty dataset")
    t = as_location(t, locs.shape[1])
    offsets = t[None, :] - locs
    dists = np.sqrt(np.einsum("ij,ij->i", offsets, offsets))
    perm = np.argsort(dists, kind="stable")
    return NeighborOrdering(t, perm, dists[perm], offsets[perm])


@dataclass(frozen=True)
class WeightVector:
    """Per-neighbor weights and their telescoped form.

    ``wtilde[k] = (w[k] - w[k+1]) / sum(w)`` for all but the last entry and
    ``w[-1] / sum(w)`` for the last one, so that ``sum((k+1) * wtilde[k]) == 1``.
    """

    w: np.ndarray
    wtilde: np.ndarray

    @property
    def total(self) -> float:
        return float(np.sum(self.w))

    def __len__(self):
        return self.w.size

    def effective_size(self) -> int:
        """Index one past the last nonzero weight."""
        nz = np.flatnonzero(self.w)
        return int(nz[-1]) + 1 if nz.size else 0


def telescope_weights(w) -> WeightVector:
    """Build a WeightVector from raw weights."""
    w = np.asarray(w, dtype=float).ravel()
    if w.size == 0 or not np.all(np.isfinite(w)):
        raise ValueError("weights must be a non-empty finite vector")
    total = w.sum()
    if not total > 0:
        raise ValueError("degenerate weights")
    wt = np.empty_like(w)
    wt[:-1] = (w[:-1] - w[1:]) / total
    wt[-1] = w[-1] / total
    return WeightVector(w, wt)


def read_dataset(path) -> Dataset:
    """Read a dataset CSV with header ``x,z`` or ``x,y,z``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header not in (["x", "z"], ["x", "y", "z"]):
            raise ValueError(f"bad dataset header {header!r}; expected x[,y],z")
        rows = [[float(v) for v in row] for row in reader if row]
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    return Dataset(arr[:, :-1], arr[:, -1])


def write_dataset(data: Dataset, path) -> Path:
    """Write a dataset CSV; floats are written with round-trip precision."""
    path = Path(path)
    header = ["x", "z"] if data.dim == 1 else ["x", "y", "z"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for loc, z in zip(data.locations, data.responses):
            writer.writerow([repr(float(v)) for v in loc] + [repr(float(z))])
    return path
