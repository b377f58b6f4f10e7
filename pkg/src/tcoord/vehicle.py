"""First-order path-following error model.

Each agent's tracking error obeys ``de/dt = -k_pf e + d(t)`` and is advanced
with the exact exponential map, so disturbance-free decay carries no
integration error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .trajectory import BezierTrajectory

DISTURBANCE_KINDS = ("none", "constant-bias", "windowed-gust")


@dataclass(frozen=True)
class DisturbanceProfile:
    kind: str = "none"
    vector: tuple[float, float, float] = (0.0, 0.0, 0.0)
    window: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.kind not in DISTURBANCE_KINDS:
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        v = tuple(float(x) for x in self.vector)
        if len(v) != 3:
            raise ValueError("disturbance vector must have 3 components")
        object.__setattr__(self, "vector", v)
        if self.kind == "windowed-gust":
            if self.window is None:
                raise ValueError("windowed-gust disturbance needs a window")
            t0, t1 = (float(x) for x in self.window)
            if not t0 < t1:
                raise ValueError(f"gust window must be ordered, got ({t0}, {t1})")
            object.__setattr__(self, "window", (t0, t1))
        elif self.window is not None:
            raise ValueError(f"{self.kind!r} disturbance takes no window")

    def at(self, t: float) -> np.ndarray:
        if self.kind == "constant-bias":
            return np.array(self.vector)
        if self.kind == "windowed-gust" and self.window[0] <= t < self.window[1]:
            return np.array(self.vector)
        return np.zeros(3)

    def breakpoints(self) -> tuple[float, ...]:
        return self.window if self.kind == "windowed-gust" else ()

    @property
    def magnitude(self) -> float:
        """Upper bound on ``|d(t)|`` over all time."""
        return 0.0 if self.kind == "none" else float(np.linalg.norm(self.vector))

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind != "none":
            out["vector"] = list(self.vector)
        if self.window is not None:
            out["window"] = list(self.window)
        return out


NO_DISTURBANCE = DisturbanceProfile()


@dataclass(frozen=True)
class VehicleState:
    position: np.ndarray
    pf_error: np.ndarray


def pf_error(state: VehicleState, tr: BezierTrajectory, gamma: float) -> np.ndarray:
    return np.asarray(state.position, dtype=float) - tr.eval(gamma)


def propagate_error(e, dt: float, k_pf: float, d) -> np.ndarray:
    """Exact solution of ``de/dt = -k_pf e + d`` after ``dt`` with constant ``d``."""
    e = np.asarray(e, dtype=float)
    decay = math.exp(-k_pf * dt)
    # -expm1 keeps the forcing term accurate for small k_pf * dt
    return decay * e + (-math.expm1(-k_pf * dt) / k_pf) * np.asarray(d, dtype=float)


def step_vehicle(
    state: VehicleState,
    tr: BezierTrajectory,
    gamma: float,
    gamma_next: float,
    dt: float,
    k_pf: float,
    d: DisturbanceProfile,
    t: float,
) -> VehicleState:
    """Advance one vehicle by ``dt``; the disturbance is sampled at ``t``.

    ``gamma`` is accepted for symmetry with the controller step; the new
    position is reconstructed around the desired point at ``gamma_next``.
    """
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not k_pf > 0.0:
        raise ValueError(f"k_pf must be positive, got {k_pf}")
    e = propagate_error(state.pf_error, dt, k_pf, d.at(t))
    return VehicleState(tr.eval(gamma_next) + e, e)
