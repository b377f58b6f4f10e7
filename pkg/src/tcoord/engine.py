"""Fixed-step closed-loop simulation of coordinated path following.

The coordination states ``(gamma, gamma_dot)`` are advanced with classical
RK4; vehicle tracking errors with their exact exponential map.  Every step
is split at topology switches, desired-pace changes and gust edges so that
the integrand is smooth on each sub-step.
"""

from __future__ import annotations

import bisect
import io
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .controller import CoordinationGains, alpha_bar_all, collective_accel
from .coordmath import ConvergenceConstants
from .topology import DigraphSchedule, verify_assumption3
from .trajectory import TrajectorySet
from .vehicle import NO_DISTURBANCE, DisturbanceProfile

# breakpoints closer than this to a grid instant are merged into it
SPLIT_TOL = 1e-9


class ScenarioError(ValueError):
    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class PaceProfile:
    """Piecewise-constant desired pace ``gamma_dot_d(t)``, right-continuous."""

    steps: tuple[tuple[float, float], ...] = ((0.0, 1.0),)

    def __post_init__(self):
        steps = tuple((float(t), float(r)) for t, r in self.steps)
        object.__setattr__(self, "steps", steps)

    def problems(self) -> list[str]:
        out = []
        if not self.steps:
            return ["gamma_dot_d: profile is empty"]
        if self.steps[0][0] != 0.0:
            out.append("gamma_dot_d: first step must start at t=0")
        for k in range(1, len(self.steps)):
            if not self.steps[k][0] > self.steps[k - 1][0]:
                out.append(f"gamma_dot_d[{k}]: start times must be strictly increasing")
        for k, (_, r) in enumerate(self.steps):
            if r < 0.0:
                out.append(f"gamma_dot_d[{k}]: rate must be non-negative, got {r}")
        return out

    def at(self, t: float) -> float:
        times = [ts for ts, _ in self.steps]
        k = bisect.bisect_right(times, t + SPLIT_TOL * max(1.0, abs(t))) - 1
        return self.steps[max(k, 0)][1]

    def breakpoints(self) -> list[float]:
        return [t for t, _ in self.steps[1:]]

    def max_jump(self) -> float:
        rates = [r for _, r in self.steps]
        return max((abs(b - a) for a, b in zip(rates, rates[1:])), default=0.0)

    def sup_accel(self, ramp: float) -> float:
        """Sup of ``|d gamma_dot_d / dt|`` when each step is spread over ``ramp`` seconds."""
        if not ramp > 0.0:
            raise ValueError(f"ramp must be positive, got {ramp}")
        return self.max_jump() / ramp


@dataclass(frozen=True)
class VehicleSpec:
    initial_pf_error: tuple[float, float, float] = (0.0, 0.0, 0.0)
    k_pf: float = 1.0
    disturbance: DisturbanceProfile = NO_DISTURBANCE


@dataclass(frozen=True)
class BoundsOptions:
    c3: float = 1.0
    beta: Optional[float] = None
    lambda_tc: Optional[float] = None
    ramp: float = 0.5


@dataclass(frozen=True)
class Scenario:
    trajectories: TrajectorySet
    schedule: DigraphSchedule
    gains: CoordinationGains
    vehicles: tuple[VehicleSpec, ...]
    gamma0: tuple[float, ...]
    gamma_dot0: tuple[float, ...]
    gamma_dot_d: PaceProfile = PaceProfile()
    dt: float = 0.005
    t_end: float = 20.0
    seed: int = 0
    qos: Optional[tuple[float, float]] = None
    pf_error_noise: float = 0.0
    bounds: BoundsOptions = BoundsOptions()
    name: str = ""

    @property
    def n(self) -> int:
        return self.trajectories.n


def validate_scenario(sc: Scenario, waive_connectivity: bool = False) -> list[str]:
    """Every violated precondition of :func:`run`, as readable messages."""
    errs = []
    n = sc.trajectories.n
    if sc.schedule.n != n:
        errs.append(f"schedule: digraphs have n={sc.schedule.n}, trajectories n={n}")
    if len(sc.vehicles) != n:
        errs.append(f"vehicles: expected {n} entries, got {len(sc.vehicles)}")
    for name in ("gamma0", "gamma_dot0"):
        if len(getattr(sc, name)) != n:
            errs.append(f"{name}: expected {n} entries, got {len(getattr(sc, name))}")
    if not sc.dt > 0.0:
        errs.append(f"dt: must be positive, got {sc.dt}")
    elif sc.dt > sc.schedule.min_dwell / 3.0 * (1 + 1e-12):
        errs.append(
            f"dt: {sc.dt} exceeds a third of the smallest dwell ({sc.schedule.min_dwell})"
        )
    if not sc.t_end > 0.0:
        errs.append(f"t_end: must be positive, got {sc.t_end}")
    g = sc.gains
    if not g.a >= 0.0:
        errs.append(f"gains.a: must be non-negative, got {g.a}")
    if not g.b > 0.0:
        errs.append(f"gains.b: must be positive, got {g.b}")
    if not g.epsilon > 0.0:
        errs.append(f"gains.epsilon: must be positive, got {g.epsilon}")
    errs.extend(sc.gamma_dot_d.problems())
    t_f = sc.trajectories.t_f
    for i, v in enumerate(sc.gamma0):
        if not 0.0 <= v <= t_f:
            errs.append(f"gamma0[{i}]: {v} outside [0, {t_f}]")
    for i, v in enumerate(sc.gamma_dot0):
        if v < 0.0:
            errs.append(f"gamma_dot0[{i}]: must be non-negative, got {v}")
    for i, v in enumerate(sc.vehicles):
        if not v.k_pf > 0.0:
            errs.append(f"vehicles[{i}].k_pf: must be positive, got {v.k_pf}")
    if sc.pf_error_noise < 0.0:
        errs.append(f"pf_error_noise: must be non-negative, got {sc.pf_error_noise}")
    if not sc.schedule.cycle and sc.t_end > sc.schedule.period:
        errs.append(
            f"schedule: covers [0, {sc.schedule.period}] but t_end is {sc.t_end}"
        )
    if not waive_connectivity and not errs:
        if sc.qos is None:
            errs.append("qos: needed to verify connectivity (or waive the check)")
        else:
            T, delta = sc.qos
            if not (T > 0.0 and 0.0 < delta <= T):
                errs.append(f"qos: need T > 0 and 0 < delta <= T, got T={T}, delta={delta}")
            else:
                rep = verify_assumption3(sc.schedule, T, delta, horizon=sc.t_end)
                if not rep.holds:
                    errs.append(
                        f"schedule: no {delta}-spanning tree in the window starting "
                        f"at t={rep.first_violation} (T={T})"
                    )
    return errs


@dataclass
class SimLog:
    t: np.ndarray
    gamma: np.ndarray
    gamma_dot: np.ndarray
    epf: np.ndarray          # per-agent tracking error norms
    gamma_ddot: np.ndarray
    gamma_dot_d: np.ndarray
    xi_tc_norm: np.ndarray
    segment: np.ndarray
    events: list[dict] = field(default_factory=list)
    final_pf_error: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.gamma.shape[1]

    def to_csv(self) -> str:
        n = self.n
        cols = (
            ["t"]
            + [f"gamma_{i}" for i in range(n)]
            + [f"gammadot_{i}" for i in range(n)]
            + [f"epf_{i}" for i in range(n)]
            + ["xi_tc_norm", "segment"]
        )
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        for k in range(len(self.t)):
            row = [self.t[k], *self.gamma[k], *self.gamma_dot[k], *self.epf[k], self.xi_tc_norm[k]]
            buf.write(",".join(repr(float(v)) for v in row))
            buf.write(f",{int(self.segment[k])}\n")
        return buf.getvalue()


def _record_count(dt: float, t_end: float) -> int:
    return int(math.floor(t_end / dt + 1e-9)) + 1


def _substeps(dt: float, t_end: float, breakpoints: Sequence[float]) -> Iterator[tuple[int, list[float]]]:
    """Yield ``(k, [t_k, b_1, ..., t_{k+1}])`` for each grid step."""
    bps = sorted(breakpoints)
    j = 0
    for k in range(_record_count(dt, t_end) - 1):
        t0, t1 = k * dt, (k + 1) * dt
        cuts = [t0]
        while j < len(bps) and bps[j] <= t0 + SPLIT_TOL:
            j += 1
        while j < len(bps) and bps[j] < t1 - SPLIT_TOL:
            cuts.append(bps[j])
            j += 1
        cuts.append(t1)
        yield k, cuts


def _rk4(f, y, h):
    k1 = f(0.0, y)
    k2 = f(h / 2, y + h / 2 * k1)
    k3 = f(h / 2, y + h / 2 * k2)
    k4 = f(h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _disagreement_sq(gamma: np.ndarray) -> np.ndarray:
    """``|Q gamma|^2`` along the last axis, via ``Q^T Q = I - 11^T / n``.

    Shifting by the first entry before centring makes exact consensus give
    exactly zero, which ``Q @ gamma`` does not.
    """
    x = gamma - gamma[..., :1]
    x = x - x.mean(axis=-1, keepdims=True)
    return np.sum(x**2, axis=-1)


def _xi_norm(n, gamma, gamma_dot, rate):
    xi2 = gamma_dot - rate
    xi1_sq = _disagreement_sq(gamma) if n >= 2 else 0.0
    return float(math.sqrt(xi1_sq + np.sum(xi2**2)))


def run(sc: Scenario, waive_connectivity: bool = False) -> SimLog:
    errs = validate_scenario(sc, waive_connectivity)
    if errs:
        raise ScenarioError(errs)

    n, ts, sched, gains = sc.n, sc.trajectories, sc.schedule, sc.gains
    t_f = ts.t_f
    kpf = np.array([v.k_pf for v in sc.vehicles])
    dist = [v.disturbance for v in sc.vehicles]

    gamma = np.array(sc.gamma0, dtype=float)
    gdot = np.array(sc.gamma_dot0, dtype=float)
    e = np.array([v.initial_pf_error for v in sc.vehicles], dtype=float)
    if sc.pf_error_noise > 0.0:
        rng = np.random.default_rng(sc.seed)
        e = e + rng.normal(0.0, sc.pf_error_noise, size=e.shape)
    frozen = gamma >= t_f
    gdot[frozen] = 0.0

    bps = set(sc.gamma_dot_d.breakpoints())
    for d in dist:
        bps.update(d.breakpoints())
    bps.update(sched.switch_times(0.0, sc.t_end))
    bps = [b for b in bps if 0.0 < b < sc.t_end]

    N = _record_count(sc.dt, sc.t_end)
    out_t = np.empty(N)
    out_g = np.empty((N, n))
    out_gd = np.empty((N, n))
    out_e = np.empty((N, n))
    out_gdd = np.empty((N, n))
    out_rate = np.empty(N)
    out_xi = np.empty(N)
    out_seg = np.empty(N, dtype=int)
    events: list[dict] = []

    def accel(gam, gd, err, lap, rate):
        v = ts.velocities(np.clip(gam, 0.0, t_f))
        acc = collective_accel(gam, gd, rate, lap, alpha_bar_all(v, err, gains.epsilon), gains)
        acc[frozen] = 0.0
        return acc

    def record(k, t):
        seg = sched.segment_index(t)
        rate = sc.gamma_dot_d.at(t)
        out_t[k] = t
        out_g[k] = gamma
        out_gd[k] = gdot
        out_e[k] = np.linalg.norm(e, axis=1)
        out_gdd[k] = accel(gamma, gdot, e, sched.segment_laplacian(seg), rate)
        out_rate[k] = rate
        out_xi[k] = _xi_norm(n, gamma, gdot, rate)
        out_seg[k] = seg

    record(0, 0.0)
    for k, cuts in _substeps(sc.dt, sc.t_end, bps):
        for s0, s1 in zip(cuts, cuts[1:]):
            h = s1 - s0
            mid = s0 + h / 2
            lap = sched.laplacian_at(mid)
            rate = sc.gamma_dot_d.at(mid)
            dvec = np.array([d.at(mid) for d in dist])
            e0 = e

            def e_at(tau):
                decay = np.exp(-kpf * tau)[:, None]
                forced = (-np.expm1(-kpf * tau) / kpf)[:, None]
                return decay * e0 + forced * dvec

            def f(tau, y):
                gam, gd = y[:n], y[n:]
                dg = np.where(frozen, 0.0, gd)
                return np.concatenate([dg, accel(gam, gd, e_at(tau), lap, rate)])

            g_prev = gamma
            y = _rk4(f, np.concatenate([gamma, gdot]), h)
            gamma, gdot = y[:n].copy(), y[n:].copy()
            e = e_at(h)

            clamp = (gdot < 0.0) | (gamma < g_prev)
            if np.any(clamp & ~frozen):
                for i in np.nonzero(clamp & ~frozen)[0]:
                    events.append({"t": s1, "kind": "rate_clamp", "agent": int(i)})
                gdot = np.maximum(gdot, 0.0)
                gamma = np.maximum(gamma, g_prev)
            sat = (gamma >= t_f) & ~frozen
            if np.any(sat):
                for i in np.nonzero(sat)[0]:
                    events.append({"t": s1, "kind": "saturation", "agent": int(i)})
                frozen = frozen | sat
                gamma[sat] = t_f
                gdot[sat] = 0.0
        record(k + 1, (k + 1) * sc.dt)

    for tb, _ in sc.gamma_dot_d.steps[1:]:
        if tb < sc.t_end:
            events.append({"t": tb, "kind": "pace_step", "agent": None})
    events.sort(key=lambda ev: (ev["t"], ev["kind"], -1 if ev["agent"] is None else ev["agent"]))

    return SimLog(
        t=out_t,
        gamma=out_g,
        gamma_dot=out_gd,
        epf=out_e,
        gamma_ddot=out_gdd,
        gamma_dot_d=out_rate,
        xi_tc_norm=out_xi,
        segment=out_seg,
        events=events,
        final_pf_error=e,
    )


@dataclass
class ConsensusLog:
    t: np.ndarray
    x: np.ndarray
    segment: np.ndarray


def run_auxiliary_consensus(
    s: DigraphSchedule, a_over_b: float, x0, dt: float, t_end: float
) -> ConsensusLog:
    """Integrate ``dx/dt = -(a/b) L(t) x`` with the same stepping as :func:`run`."""
    x = np.array(x0, dtype=float)
    errs = []
    if x.shape != (s.n,):
        errs.append(f"x0: expected {s.n} entries, got shape {x.shape}")
    if not dt > 0.0:
        errs.append(f"dt: must be positive, got {dt}")
    elif dt > s.min_dwell / 3.0 * (1 + 1e-12):
        errs.append(f"dt: {dt} exceeds a third of the smallest dwell ({s.min_dwell})")
    if not t_end > 0.0:
        errs.append(f"t_end: must be positive, got {t_end}")
    if not a_over_b > 0.0:
        errs.append(f"a_over_b: must be positive, got {a_over_b}")
    if not s.cycle and t_end > s.period:
        errs.append(f"schedule: covers [0, {s.period}] but t_end is {t_end}")
    if errs:
        raise ScenarioError(errs)

    N = _record_count(dt, t_end)
    ts = np.empty(N)
    xs = np.empty((N, s.n))
    seg = np.empty(N, dtype=int)
    ts[0], xs[0], seg[0] = 0.0, x, s.segment_index(0.0)
    bps = s.switch_times(0.0, t_end)
    for k, cuts in _substeps(dt, t_end, bps):
        for s0, s1 in zip(cuts, cuts[1:]):
            m = -a_over_b * s.laplacian_at((s0 + s1) / 2)
            x = _rk4(lambda _tau, y: m @ y, x, s1 - s0)
        t = (k + 1) * dt
        ts[k + 1], xs[k + 1], seg[k + 1] = t, x, s.segment_index(t)
    return ConsensusLog(ts, xs, seg)


@dataclass
class CoordinationMetrics:
    t: np.ndarray
    gamma_spread: np.ndarray   # max_ij |gamma_i - gamma_j|
    rate_error: np.ndarray     # max_i |gamma_dot_i - gamma_dot_d|
    xi_tc_norm: np.ndarray
    decay_rate: float
    decay_window: tuple[float, float]
    final_window: tuple[float, float]
    final_residuals: dict

    def summary(self) -> dict:
        return {
            "t_end": float(self.t[-1]),
            "peak_gamma_spread": float(self.gamma_spread.max()),
            "peak_rate_error": float(self.rate_error.max()),
            "peak_xi_tc_norm": float(self.xi_tc_norm.max()),
            "xi_tc_norm_initial": float(self.xi_tc_norm[0]),
            "decay_rate": self.decay_rate,
            "decay_window": list(self.decay_window),
            "final_window": list(self.final_window),
            "final_residuals": dict(self.final_residuals),
            "gamma_spread_settle_0.01": settling_time(self.t, self.gamma_spread, 0.01),
            "rate_error_settle_0.01": settling_time(self.t, self.rate_error, 0.01),
        }


def settling_time(t, series, threshold: float, t_start: float = 0.0, t_stop: float = math.inf):
    """First instant in ``[t_start, t_stop]`` after which ``series`` stays below ``threshold``.

    ``None`` if it never settles inside the window.
    """
    t = np.asarray(t)
    series = np.asarray(series)
    sel = (t >= t_start) & (t <= t_stop)
    tt, ss = t[sel], series[sel]
    if tt.size == 0 or ss[-1] >= threshold:
        return None
    above = np.nonzero(ss >= threshold)[0]
    return float(tt[0] if above.size == 0 else tt[above[-1] + 1])


def _fit_decay(t, y, t0, t1, floor=1e-10):
    sel = (t >= t0) & (t <= t1) & (y > floor)
    if np.count_nonzero(sel) < 2:
        return 0.0
    slope = np.polyfit(t[sel], np.log(y[sel]), 1)[0]
    return float(-slope)


def extract_metrics(
    log: SimLog,
    q: Optional[np.ndarray],
    profile: PaceProfile,
    final_fraction: float = 0.1,
) -> CoordinationMetrics:
    """Coordination-error series from a log.

    ``q`` is the disagreement projection (``None`` for a single agent).  Its
    norm is evaluated through ``Q^T Q = I - 11^T / n`` so that exact
    consensus reads as exactly zero.
    """
    if len(log.t) == 0:
        raise ValueError("empty log")
    if q is not None and np.shape(q) != (log.n - 1, log.n):
        raise ValueError(f"q has shape {np.shape(q)}, expected {(log.n - 1, log.n)}")
    t = log.t
    rates = np.array([profile.at(tk) for tk in t])
    spread = log.gamma.max(axis=1) - log.gamma.min(axis=1)
    rate_err = np.abs(log.gamma_dot - rates[:, None]).max(axis=1)
    xi2 = log.gamma_dot - rates[:, None]
    xi_sq = np.sum(xi2**2, axis=1)
    if q is not None:
        xi_sq = xi_sq + _disagreement_sq(log.gamma)
    xi = np.sqrt(xi_sq)

    # transient window: from the peak to the next pace change (or the end)
    t_peak = float(t[int(np.argmax(xi))])
    later = [b for b in profile.breakpoints() if b > t_peak]
    t_stop = min(later) if later else float(t[-1])
    rate = _fit_decay(t, xi, t_peak, t_stop)

    t_fin = float(t[-1] - final_fraction * (t[-1] - t[0]))
    fin = t >= t_fin
    residuals = {
        "gamma_spread": float(spread[fin].max()),
        "rate_error": float(rate_err[fin].max()),
        "xi_tc_norm": float(xi[fin].max()),
    }
    return CoordinationMetrics(
        t=t,
        gamma_spread=spread,
        rate_error=rate_err,
        xi_tc_norm=xi,
        decay_rate=rate,
        decay_window=(t_peak, t_stop),
        final_window=(t_fin, float(t[-1])),
        final_residuals=residuals,
    )


def disturbance_sup(log: SimLog, profile: PaceProfile, ramp: float) -> tuple[float, float]:
    """``(sup ||e_PF||, sup |gamma_ddot_d|)`` for the ISS bound.

    ``||e_PF||`` is the norm of the stacked error of all agents; pace steps
    are treated as ramps of length ``ramp``.
    """
    sup_epf = float(np.sqrt(np.sum(log.epf**2, axis=1)).max())
    return sup_epf, profile.sup_accel(ramp)


@dataclass
class IssReport:
    holds: bool
    min_margin: float
    margin: np.ndarray
    bound: np.ndarray

    def to_dict(self) -> dict:
        return {"holds": self.holds, "min_margin": self.min_margin}


def check_iss_bound(
    metrics: CoordinationMetrics,
    constants: ConvergenceConstants,
    sup_epf: float,
    sup_gamma_dd: float,
) -> IssReport:
    xi = metrics.xi_tc_norm
    bound = (
        constants.kappa1 * xi[0] * np.exp(-constants.lambda_tc * metrics.t)
        + constants.kappa2 * (sup_epf + sup_gamma_dd)
    )
    margin = bound - xi
    return IssReport(bool(np.all(margin >= 0.0)), float(margin.min()), margin, bound)
