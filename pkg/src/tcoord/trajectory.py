"""Bezier desired trajectories parameterised by virtual time."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _de_casteljau(ctrl: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Batched de Casteljau.

    ctrl : (N, d+1, D) control points, one curve per row.
    u    : (N,) curve parameters in [0, 1].
    Returns (N, D).
    """
    b = ctrl
    w = u[:, None, None]
    for _ in range(ctrl.shape[1] - 1):
        b = (1.0 - w) * b[:, :-1] + w * b[:, 1:]
    return b[:, 0]


def _hodograph(ctrl: np.ndarray, t_f: float) -> np.ndarray:
    d = ctrl.shape[-2] - 1
    if d == 0:
        return np.zeros_like(ctrl)
    return d * np.diff(ctrl, axis=-2) / t_f


@dataclass(frozen=True)
class BezierTrajectory:
    control_points: np.ndarray
    t_f: float

    def __post_init__(self):
        cp = np.array(self.control_points, dtype=float)
        if cp.ndim != 2 or cp.shape[1] != 3:
            raise ValueError(f"control points must have shape (m, 3), got {cp.shape}")
        if cp.shape[0] < 2:
            raise ValueError("a trajectory needs at least two control points")
        if not self.t_f > 0.0:
            raise ValueError(f"t_f must be positive, got {self.t_f}")
        cp.setflags(write=False)
        object.__setattr__(self, "control_points", cp)
        object.__setattr__(self, "t_f", float(self.t_f))

    @property
    def degree(self) -> int:
        return self.control_points.shape[0] - 1

    def _param(self, gamma):
        g = np.asarray(gamma, dtype=float)
        tol = 1e-12 * max(1.0, self.t_f)
        if not np.all((g >= -tol) & (g <= self.t_f + tol)):
            raise ValueError(f"gamma outside [0, {self.t_f}]: {gamma}")
        return np.clip(g, 0.0, self.t_f) / self.t_f

    def _eval(self, ctrl, gamma):
        u = self._param(gamma)
        flat = u.reshape(-1)
        pts = np.broadcast_to(ctrl, (flat.size,) + ctrl.shape)
        out = _de_casteljau(pts, flat)
        return out.reshape(u.shape + (3,))

    def eval(self, gamma):
        """Desired position at virtual time ``gamma`` (scalar or array)."""
        return self._eval(self.control_points, gamma)

    def eval_derivative(self, gamma):
        """Derivative with respect to virtual time, in m/s."""
        return self._eval(_hodograph(self.control_points, self.t_f), gamma)


def eval(tr: BezierTrajectory, gamma):
    return tr.eval(gamma)


def eval_derivative(tr: BezierTrajectory, gamma):
    return tr.eval_derivative(gamma)


@dataclass(frozen=True)
class TrajectorySet:
    trajectories: tuple[BezierTrajectory, ...]

    def __post_init__(self):
        trs = tuple(self.trajectories)
        if not trs:
            raise ValueError("trajectory set is empty")
        t_f = trs[0].t_f
        for i, tr in enumerate(trs):
            if tr.t_f != t_f:
                raise ValueError(f"trajectory {i} has t_f={tr.t_f}, expected {t_f}")
        object.__setattr__(self, "trajectories", trs)
        degrees = {tr.degree for tr in trs}
        if len(degrees) == 1:
            stack = np.stack([tr.control_points for tr in trs])
            object.__setattr__(self, "_stack", stack)
            object.__setattr__(self, "_dstack", _hodograph(stack, t_f))
        else:
            object.__setattr__(self, "_stack", None)
            object.__setattr__(self, "_dstack", None)

    @classmethod
    def from_control_points(cls, points, t_f: float) -> "TrajectorySet":
        return cls(tuple(BezierTrajectory(p, t_f) for p in points))

    @property
    def n(self) -> int:
        return len(self.trajectories)

    @property
    def t_f(self) -> float:
        return self.trajectories[0].t_f

    def __len__(self):
        return self.n

    def __getitem__(self, i) -> BezierTrajectory:
        return self.trajectories[i]

    def _gammas(self, gammas) -> np.ndarray:
        g = np.asarray(gammas, dtype=float)
        if g.shape != (self.n,):
            raise ValueError(f"expected {self.n} gammas, got shape {g.shape}")
        tol = 1e-12 * max(1.0, self.t_f)
        if not np.all((g >= -tol) & (g <= self.t_f + tol)):
            raise ValueError(f"gamma outside [0, {self.t_f}]: {g}")
        return np.clip(g, 0.0, self.t_f)

    def positions(self, gammas) -> np.ndarray:
        """Desired positions of every agent, one virtual time each, (n, 3)."""
        g = self._gammas(gammas)
        if self._stack is None:
            return np.stack([tr.eval(gi) for tr, gi in zip(self.trajectories, g)])
        return _de_casteljau(self._stack, g / self.t_f)

    def velocities(self, gammas) -> np.ndarray:
        g = self._gammas(gammas)
        if self._dstack is None:
            return np.stack([tr.eval_derivative(gi) for tr, gi in zip(self.trajectories, g)])
        return _de_casteljau(self._dstack, g / self.t_f)


@dataclass(frozen=True)
class SpeedBounds:
    v_min: float          # max over agents of per-agent minima (as printed)
    v_min_lowest: float   # min over agents of per-agent minima
    v_max: float
    per_agent_min: np.ndarray
    per_agent_max: np.ndarray

    def to_dict(self) -> dict:
        return {
            "v_min": self.v_min,
            "v_min_lowest": self.v_min_lowest,
            "v_max": self.v_max,
            "per_agent_min": self.per_agent_min.tolist(),
            "per_agent_max": self.per_agent_max.tolist(),
        }


def speed_bounds(ts: TrajectorySet, samples: int = 10_000) -> SpeedBounds:
    if samples < 2:
        raise ValueError("need at least two samples")
    grid = np.linspace(0.0, ts.t_f, samples)
    mins, maxs = [], []
    for tr in ts.trajectories:
        s = np.linalg.norm(tr.eval_derivative(grid), axis=-1)
        mins.append(s.min())
        maxs.append(s.max())
    mins, maxs = np.array(mins), np.array(maxs)
    return SpeedBounds(float(mins.max()), float(mins.min()), float(maxs.max()), mins, maxs)


def min_separation(ts: TrajectorySet, samples: int = 2_000) -> float:
    """Smallest pairwise distance between desired positions at equal virtual time."""
    if ts.n < 2:
        return float("inf")
    grid = np.linspace(0.0, ts.t_f, samples)
    pos = np.stack([tr.eval(grid) for tr in ts.trajectories])  # (n, samples, 3)
    best = np.inf
    for i in range(ts.n):
        d = np.linalg.norm(pos[i + 1:] - pos[i], axis=-1)
        if d.size:
            best = min(best, float(d.min()))
    return best
