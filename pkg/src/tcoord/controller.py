"""Distributed time-coordination control law."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class CoordinationGains:
    a: float
    b: float
    epsilon: float

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "epsilon": self.epsilon}


@dataclass
class AgentCoordState:
    gamma: float
    gamma_dot: float


def alpha_bar(p_dot_d, e_pf, epsilon: float) -> float:
    """Path-following coupling: projection of the tracking error on the desired velocity.

    Positive when the vehicle is ahead of its desired point, so the virtual
    time speeds up to catch it.
    """
    p_dot_d = np.asarray(p_dot_d, dtype=float)
    e_pf = np.asarray(e_pf, dtype=float)
    return float(p_dot_d @ e_pf / (np.linalg.norm(p_dot_d) + epsilon))


def alpha_bar_all(p_dot_d: np.ndarray, e_pf: np.ndarray, epsilon: float) -> np.ndarray:
    """Row-wise ``alpha_bar`` for (n, 3) inputs."""
    num = np.einsum("ij,ij->i", p_dot_d, e_pf)
    return num / (np.linalg.norm(p_dot_d, axis=1) + epsilon)


def coordination_accel(
    state: AgentCoordState,
    gamma_dot_d: float,
    neighbor_gammas: Sequence[float],
    alpha: float,
    gains: CoordinationGains,
) -> float:
    coupling = sum(state.gamma - gj for gj in neighbor_gammas)
    return -gains.b * (state.gamma_dot - gamma_dot_d) - gains.a * coupling + alpha


def collective_accel(
    gamma: np.ndarray,
    gamma_dot: np.ndarray,
    gamma_dot_d: float,
    lap: np.ndarray,
    alpha: np.ndarray,
    gains: CoordinationGains,
) -> np.ndarray:
    """Stacked form of :func:`coordination_accel` for all agents at once."""
    return -gains.b * (gamma_dot - gamma_dot_d) - gains.a * (lap @ gamma) + alpha


@dataclass
class GainReport:
    ok: bool
    messages: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"ok": self.ok, "messages": list(self.messages)}


def validate_gains(
    gains: CoordinationGains,
    v_min: float,
    v_max: float,
    v_min_lowest: float | None = None,
) -> GainReport:
    """Check positivity and the coupling-regulariser condition ``epsilon > v_max - v_min``.

    ``v_min`` is the aggregate used by the stability argument (largest of the
    per-agent minima).  If ``v_min_lowest`` (smallest per-agent minimum) is
    given and it changes the verdict, that is flagged too.  The speed
    condition is sufficient only, so violating it warns without failing.
    """
    report = GainReport(True)
    for name in ("a", "b", "epsilon"):
        v = getattr(gains, name)
        if not v > 0.0:
            report.ok = False
            report.messages.append(f"error: {name} must be positive, got {v}")
    spread = v_max - v_min
    if not gains.epsilon > spread:
        report.messages.append(
            f"warning: epsilon={gains.epsilon} does not exceed v_max - v_min = {spread:.6g}"
        )
    if v_min_lowest is not None:
        alt = v_max - v_min_lowest
        if (gains.epsilon > spread) != (gains.epsilon > alt):
            report.messages.append(
                f"note: with v_min taken as the smallest per-agent minimum "
                f"(v_max - v_min = {alt:.6g}) the speed condition verdict flips"
            )
    return report
