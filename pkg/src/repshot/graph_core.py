"""Dense connectivity-matrix types and the handful of distances used everywhere."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

ASYMMETRY_TOL = 1e-9
# an edge must beat the mean by more than this (relative) margin, so float
# summation order cannot decide ties
THRESHOLD_RTOL = 1e-12


class GraphError(ValueError):
    """Base class for malformed graph data."""


class NonSquare(GraphError):
    pass


class AsymmetryTooLarge(GraphError):
    pass


class NegativeEntry(GraphError):
    pass


class NonFiniteEntry(GraphError):
    pass


class DimensionMismatch(GraphError):
    pass


class InvalidPermutation(GraphError):
    pass


class EmptyPopulation(GraphError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ConnectivityMatrix:
    """Symmetric, zero-diagonal, nonnegative r x r weight matrix.

    Construct through :func:`validate_connectivity` unless the array is
    already known to be well formed; the constructor only checks shape.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise NonSquare(f"expected a square matrix, got shape {w.shape}")
        object.__setattr__(self, "weights", _frozen(w))

    @property
    def num_rois(self) -> int:
        return self.weights.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.weights if dtype is None else self.weights.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, ConnectivityMatrix):
            return NotImplemented
        return np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash(self.weights.tobytes())


@dataclass(frozen=True)
class AdjacencyMask:
    mask: np.ndarray

    def __post_init__(self):
        m = np.array(self.mask, dtype=bool, copy=True)
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    def with_self_loops(self) -> np.ndarray:
        m = self.mask.copy()
        np.fill_diagonal(m, True)
        return m

    def __eq__(self, other):
        if not isinstance(other, AdjacencyMask):
            return NotImplemented
        return np.array_equal(self.mask, other.mask)


@dataclass(frozen=True)
class Population:
    members: tuple
    labels: Optional[tuple] = None

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise EmptyPopulation("population has no members")
        r = members[0].num_rois
        for m in members:
            if m.num_rois != r:
                raise DimensionMismatch(f"mixed ROI counts {r} and {m.num_rois}")
        object.__setattr__(self, "members", members)
        if self.labels is not None:
            labels = tuple(self.labels)
            if len(labels) != len(members):
                raise ValueError("labels must align with members")
            object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.members)

    @property
    def num_rois(self) -> int:
        return self.members[0].num_rois

    def stack(self) -> np.ndarray:
        return np.stack([m.weights for m in self.members])

    def subset(self, indices: Sequence[int]) -> "Population":
        idx = list(indices)
        labels = None if self.labels is None else [self.labels[i] for i in idx]
        return Population([self.members[i] for i in idx], labels)

    def of_class(self, label) -> "Population":
        if self.labels is None:
            raise ValueError("population is unlabeled")
        return self.subset([i for i, l in enumerate(self.labels) if l == label])


@dataclass(frozen=True)
class Trajectory:
    states: tuple
    subject_id: str = ""

    def __post_init__(self):
        states = tuple(self.states)
        if len(states) < 2:
            raise ValueError("a trajectory needs a baseline and at least one follow-up")
        r = states[0].num_rois
        if any(s.num_rois != r for s in states):
            raise DimensionMismatch("trajectory states have mixed ROI counts")
        object.__setattr__(self, "states", states)

    def __len__(self):
        return len(self.states)

    @property
    def num_rois(self) -> int:
        return self.states[0].num_rois


def validate_connectivity(raw) -> ConnectivityMatrix:
    """Check and lightly repair a raw matrix.

    Asymmetry up to 1e-9 is averaged away and the diagonal is forced to zero;
    anything else that breaks the invariants raises.
    """
    if isinstance(raw, ConnectivityMatrix):
        raw = raw.weights
    a = np.array(raw, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NonSquare(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteEntry("matrix contains NaN or infinite entries")
    asym = np.max(np.abs(a - a.T)) if a.size else 0.0
    if asym > ASYMMETRY_TOL:
        raise AsymmetryTooLarge(f"max |a - a.T| = {asym:.3g} exceeds {ASYMMETRY_TOL}")
    a = 0.5 * (a + a.T)
    np.fill_diagonal(a, 0.0)
    if np.any(a < 0):
        raise NegativeEntry(f"minimum entry {a.min():.3g} is negative")
    return ConnectivityMatrix(a)


def _pair(a, b):
    wa = np.asarray(a, dtype=np.float64)
    wb = np.asarray(b, dtype=np.float64)
    if wa.shape != wb.shape:
        raise DimensionMismatch(f"shapes {wa.shape} and {wb.shape} differ")
    return wa, wb


def frobenius_distance(a, b) -> float:
    wa, wb = _pair(a, b)
    d = np.abs(wa - wb)
    top = d.max() if d.size else 0.0
    if top == 0:
        return 0.0
    # scale first so tiny differences do not square to zero
    return float(top * np.sqrt(np.sum((d / top) ** 2)))


def mean_absolute_error(a, b) -> float:
    """MAE over the strict upper triangle."""
    wa, wb = _pair(a, b)
    iu = np.triu_indices(wa.shape[0], k=1)
    if len(iu[0]) == 0:
        return 0.0
    return float(np.mean(np.abs(wa[iu] - wb[iu])))


def threshold_by_mean(a) -> AdjacencyMask:
    """Edges whose weight exceeds the mean strict-upper-triangle weight."""
    w = np.asarray(a, dtype=np.float64)
    r = w.shape[0]
    iu = np.triu_indices(r, k=1)
    if len(iu[0]) == 0:
        return AdjacencyMask(np.zeros((r, r), dtype=bool))
    mean = np.mean(w[iu])
    m = w - mean > THRESHOLD_RTOL * max(1.0, abs(mean))
    np.fill_diagonal(m, False)
    return AdjacencyMask(m)


def permute_nodes(a, perm: Sequence[int]) -> ConnectivityMatrix:
    """Relabel nodes so that ``result[i, j] == a[perm[i], perm[j]]``."""
    w = np.asarray(a, dtype=np.float64)
    p = np.asarray(perm)
    r = w.shape[0]
    if p.shape != (r,) or not np.array_equal(np.sort(p), np.arange(r)):
        raise InvalidPermutation(f"{list(p)} is not a permutation of range({r})")
    return ConnectivityMatrix(w[np.ix_(p, p)])


def minmax_normalize(matrices: Sequence[ConnectivityMatrix]) -> list[ConnectivityMatrix]:
    """Scale a whole dataset into [0, 1] using its global off-diagonal min and max."""
    stack = np.stack([np.asarray(m, dtype=np.float64) for m in matrices])
    r = stack.shape[1]
    off = ~np.eye(r, dtype=bool)
    vals = stack[:, off]
    lo, hi = (float(vals.min()), float(vals.max())) if vals.size else (0.0, 0.0)
    span = hi - lo
    out = []
    for m in stack:
        s = (m - lo) / span if span > 0 else np.zeros_like(m)
        np.fill_diagonal(s, 0.0)
        out.append(ConnectivityMatrix(np.clip(s, 0.0, 1.0)))
    return out
