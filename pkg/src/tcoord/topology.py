"""Static digraphs, switching schedules and integral connectivity certificates.

Edge convention: ``adjacency[i, j] == 1`` means agent ``i`` receives from
agent ``j`` (information flows ``j -> i``).
"""

from __future__ import annotations

import bisect
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

# Absolute slack used when snapping times onto switch instants and when
# comparing integrated weights against delta.
TIME_TOL = 1e-12
WEIGHT_TOL = 1e-12


class CoverageError(ValueError):
    """Requested time or window lies outside a finite schedule."""


@dataclass(frozen=True)
class Digraph:
    adjacency: np.ndarray

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {a.shape}")
        if not np.all((a == 0.0) | (a == 1.0)):
            raise ValueError("adjacency entries must be 0 or 1")
        if np.any(np.diag(a) != 0.0):
            raise ValueError("adjacency must have a zero diagonal")
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence[int]]) -> "Digraph":
        """Build from ``(receiver, transmitter)`` pairs, zero-based."""
        a = np.zeros((n, n))
        for i, j in edges:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i}, {j}) out of range for n={n}")
            if i == j:
                raise ValueError(f"self-loop ({i}, {j}) not allowed")
            a[i, j] = 1.0
        return cls(a)

    def edges(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(self.adjacency)
        return [(int(i), int(j)) for i, j in zip(rows, cols)]

    def neighbors(self, i: int) -> list[int]:
        """Agents that ``i`` receives from."""
        return [int(j) for j in np.nonzero(self.adjacency[i])[0]]

    def __eq__(self, other):
        if not isinstance(other, Digraph):
            return NotImplemented
        return np.array_equal(self.adjacency, other.adjacency)

    def __hash__(self):
        return hash(self.adjacency.tobytes())


def laplacian(g: Digraph) -> np.ndarray:
    a = g.adjacency
    return np.diag(a.sum(axis=1)) - a


@dataclass(frozen=True)
class IntegratedLaplacian:
    window: tuple[float, float]
    matrix: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class DigraphSchedule:
    """Piecewise-constant digraph sequence, right-continuous at switches.

    Segment ``k`` is active on ``[start_k, start_k + dwell_k)``.  When
    ``cycle`` is true the sequence repeats forever.
    """

    segments: tuple[tuple[Digraph, float], ...]
    cycle: bool = True
    _starts: tuple[float, ...] = field(init=False, repr=False, compare=False)
    _laplacians: tuple[np.ndarray, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        segs = tuple((g, float(d)) for g, d in self.segments)
        if not segs:
            raise ValueError("schedule needs at least one segment")
        n = segs[0][0].n
        for k, (g, d) in enumerate(segs):
            if g.n != n:
                raise ValueError(f"segment {k} has n={g.n}, expected {n}")
            if not (d > 0.0 and math.isfinite(d)):
                raise ValueError(f"segment {k} dwell must be positive, got {d}")
        starts = [0.0]
        for _, d in segs[:-1]:
            starts.append(starts[-1] + d)
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "_starts", tuple(starts))
        object.__setattr__(self, "_laplacians", tuple(laplacian(g) for g, _ in segs))

    @classmethod
    def constant(cls, g: Digraph, dwell: float = 1.0) -> "DigraphSchedule":
        return cls(((g, dwell),), cycle=True)

    @property
    def n(self) -> int:
        return self.segments[0][0].n

    @property
    def period(self) -> float:
        return self._starts[-1] + self.segments[-1][1]

    @property
    def dwells(self) -> np.ndarray:
        return np.array([d for _, d in self.segments])

    @property
    def min_dwell(self) -> float:
        return min(d for _, d in self.segments)

    @property
    def horizon(self) -> float:
        """End of covered time (``inf`` when cycling)."""
        return math.inf if self.cycle else self.period

    def _locate(self, t: float) -> tuple[int, int]:
        """Return ``(cycle_number, segment_index)`` active at ``t``."""
        if t < -TIME_TOL:
            raise CoverageError(f"t={t} is negative")
        t = max(t, 0.0)
        tol = TIME_TOL * max(1.0, abs(t))
        P = self.period
        if self.cycle:
            c = math.floor(t / P)
            r = t - c * P
            if r >= P - tol:
                c, r = c + 1, 0.0
            elif r < 0.0:
                r = 0.0
        else:
            if t > P + tol:
                raise CoverageError(f"t={t} beyond schedule end {P}")
            c, r = 0, t
        # the end instant of a finite schedule maps to its last segment
        k = bisect.bisect_right(self._starts, r + tol) - 1
        return c, k

    def segment_index(self, t: float) -> int:
        return self._locate(t)[1]

    def laplacian_at(self, t: float) -> np.ndarray:
        return self._laplacians[self.segment_index(t)]

    def digraph_at(self, t: float) -> Digraph:
        return self.segments[self.segment_index(t)][0]

    def segment_laplacian(self, k: int) -> np.ndarray:
        return self._laplacians[k]

    def switch_times(self, t0: float, t1: float) -> list[float]:
        """Segment start instants in the open interval ``(t0, t1)``."""
        P = self.period
        out = []
        if self.cycle:
            c = max(math.floor(t0 / P) - 1, 0)
            while c * P < t1:
                for s in self._starts:
                    ts = c * P + s
                    if t0 < ts < t1:
                        out.append(ts)
                c += 1
        else:
            out = [s for s in self._starts if t0 < s < t1]
            if t0 < P < t1:
                out.append(P)
        return sorted(out)

    def _segment_weights(self, t0: float, t1: float) -> np.ndarray:
        """Time each segment is active within ``[t0, t1]``."""
        m = len(self.segments)
        dw = self.dwells
        st = np.array(self._starts)
        P = self.period
        w = np.zeros(m)

        def add_cycle(c):
            s = c * P + st
            e = s + dw
            ov = np.minimum(e, t1) - np.maximum(s, t0)
            np.add(w, np.clip(ov, 0.0, None), out=w)

        if not self.cycle:
            add_cycle(0)
            return w
        c0 = math.floor(t0 / P)
        c1 = math.floor(t1 / P)
        if c1 - c0 >= 2:
            w += (c1 - c0 - 1) * dw
            add_cycle(c0)
            add_cycle(c1)
        else:
            for c in range(c0, c1 + 1):
                add_cycle(c)
        return w

    def integrated_laplacian(self, t: float, T: float) -> IntegratedLaplacian:
        if not T > 0.0:
            raise ValueError(f"window length must be positive, got {T}")
        if t < -TIME_TOL:
            raise CoverageError(f"window start {t} is negative")
        t = max(t, 0.0)
        if not self.cycle and t + T > self.period + TIME_TOL * max(1.0, self.period):
            raise CoverageError(
                f"window ({t}, {t + T}) exceeds schedule end {self.period}"
            )
        w = self._segment_weights(t, t + T)
        mat = np.zeros((self.n, self.n))
        for wk, L in zip(w, self._laplacians):
            if wk > 0.0:
                mat += wk * L
        return IntegratedLaplacian((t, t + T), mat)


def laplacian_at(s: DigraphSchedule, t: float) -> np.ndarray:
    return s.laplacian_at(t)


def integrated_laplacian(s: DigraphSchedule, t: float, T: float) -> IntegratedLaplacian:
    return s.integrated_laplacian(t, T)


def _matrix(m) -> np.ndarray:
    return m.matrix if isinstance(m, IntegratedLaplacian) else np.asarray(m, dtype=float)


def is_delta_edge(m, i: int, j: int, delta: float) -> bool:
    """True if the integrated edge ``(i, j)`` carries weight at least ``delta``."""
    if i == j:
        raise ValueError("a delta-edge needs two distinct nodes")
    if not delta > 0.0:
        raise ValueError(f"delta must be positive, got {delta}")
    return bool(-_matrix(m)[i, j] >= delta - WEIGHT_TOL)


def delta_edges(m, delta: float) -> np.ndarray:
    """Boolean matrix of delta-edges (receiver, transmitter)."""
    if not delta > 0.0:
        raise ValueError(f"delta must be positive, got {delta}")
    mat = _matrix(m)
    e = -mat >= delta - WEIGHT_TOL
    np.fill_diagonal(e, False)
    return e


def delta_spanning_tree_root(m, delta: float) -> Optional[int]:
    """Smallest node that reaches every other node along delta-paths.

    A delta-edge ``(i, j)`` carries information ``j -> i``, so the search
    walks from a candidate root to the agents that receive from it.
    Returns ``None`` when no such root exists.
    """
    e = delta_edges(m, delta)
    n = e.shape[0]
    receivers = [np.nonzero(e[:, u])[0] for u in range(n)]
    for r in range(n):
        seen = np.zeros(n, dtype=bool)
        seen[r] = True
        queue = deque([r])
        while queue:
            u = queue.popleft()
            for v in receivers[u]:
                if not seen[v]:
                    seen[v] = True
                    queue.append(v)
        if seen.all():
            return r
    return None


@dataclass(frozen=True)
class Assumption3Report:
    holds: bool
    first_violation: Optional[float]
    samples: int
    T: float
    delta: float

    def to_dict(self) -> dict:
        return {
            "holds": self.holds,
            "first_violation": self.first_violation,
            "samples": self.samples,
            "T": self.T,
            "delta": self.delta,
        }


def verify_assumption3(
    s: DigraphSchedule,
    T: float,
    delta: float,
    horizon: Optional[float] = None,
    stride: Optional[float] = None,
) -> Assumption3Report:
    """Check for a delta-spanning tree in every window ``[t, t + T]``.

    Window starts are sampled at ``stride`` (default a third of the shortest
    dwell) and at every instant where a window edge meets a switch.  Cycling
    schedules are checked over one period; finite ones over
    ``[0, min(horizon, end - T)]``.
    """
    if not (T > 0.0 and delta > 0.0):
        raise ValueError("T and delta must be positive")
    if stride is None:
        stride = s.min_dwell / 3.0
    if not stride > 0.0:
        raise ValueError("stride must be positive")

    if s.cycle:
        last = s.period if horizon is None else min(horizon, s.period)
        closed = False
    else:
        last = s.period - T
        if horizon is not None:
            last = min(last, horizon)
        if last < -TIME_TOL:
            raise CoverageError(f"window length {T} exceeds schedule length {s.period}")
        closed = True

    def inside(t):
        return 0.0 <= t and (t <= last if closed else t < last)

    count = int(math.floor(last / stride + 1e-9))
    ts = {0.0} | {k * stride for k in range(count + 1) if inside(k * stride)}
    for sw in s.switch_times(-1.0, last + T + 1.0):
        ts.update(c for c in (sw, sw - T) if inside(c))
    ts = sorted(ts)

    for t in ts:
        if delta_spanning_tree_root(s.integrated_laplacian(t, T), delta) is None:
            return Assumption3Report(False, float(t), len(ts), T, delta)
    return Assumption3Report(True, None, len(ts), T, delta)
