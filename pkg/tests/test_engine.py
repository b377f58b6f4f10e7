import dataclasses
import math

import numpy as np
import pytest

from tcoord.controller import CoordinationGains
from tcoord.coordmath import build_q, consensus_constants, diam, iss_bounds
from tcoord.engine import (
    BoundsOptions,
    PaceProfile,
    Scenario,
    ScenarioError,
    SimLog,
    VehicleSpec,
    check_iss_bound,
    disturbance_sup,
    extract_metrics,
    run,
    run_auxiliary_consensus,
    settling_time,
    validate_scenario,
)
from tcoord.scenario import load_bundled
from tcoord.topology import Digraph, DigraphSchedule
from tcoord.trajectory import TrajectorySet
from tcoord.vehicle import DisturbanceProfile, propagate_error

from conftest import random_connected_schedule


def lines(n, t_f=20.0, length=100.0):
    return TrajectorySet.from_control_points(
        [[[20.0 * i, 0, 0], [20.0 * i, length, 0]] for i in range(n)], t_f
    )


def make(n=2, edges=None, dwell=1.0, a=1.0, b=2.0, eps=1.0, gamma0=None, gamma_dot0=None,
         pace=((0.0, 1.0),), dt=0.01, t_end=5.0, errors=None, qos=(1.0, 1.0), ts=None, **kw):
    if edges is None:
        edges = [(i, j) for i in range(n) for j in range(n) if i != j]
    sched = DigraphSchedule(((Digraph.from_edges(n, edges), dwell),))
    errors = errors if errors is not None else [(0.0, 0.0, 0.0)] * n
    return Scenario(
        trajectories=ts or lines(n),
        schedule=sched,
        gains=CoordinationGains(a, b, eps),
        vehicles=tuple(VehicleSpec(tuple(e)) for e in errors),
        gamma0=tuple(gamma0 if gamma0 is not None else [0.0] * n),
        gamma_dot0=tuple(gamma_dot0 if gamma_dot0 is not None else [1.0] * n),
        gamma_dot_d=PaceProfile(tuple(pace)),
        dt=dt,
        t_end=t_end,
        qos=qos,
        **kw,
    )


class TestRunExamples:
    def test_single_agent(self):
        sc = make(n=1, edges=[], pace=((0.0, 0.8),), gamma_dot0=[0.8], t_end=30.0, qos=None)
        log = run(sc, waive_connectivity=True)
        sat = 20.0 / 0.8
        pre = log.t < sat - 1e-9
        np.testing.assert_allclose(log.gamma[pre, 0], 0.8 * log.t[pre], rtol=1e-12, atol=1e-12)
        assert (log.gamma[~pre, 0] == 20.0).all()
        assert (log.gamma_dot[~pre, 0] == 0.0).all()
        assert [ev["kind"] for ev in log.events] == ["saturation"]
        assert log.events[0]["t"] == pytest.approx(sat)

    def test_zero_gain_equilibrium(self):
        sc = make(n=4, a=0.0, gamma_dot0=[0.9] * 4, pace=((0.0, 0.9),))
        log = run(sc)
        for i in range(4):
            np.testing.assert_allclose(log.gamma[:, i], 0.9 * log.t, atol=1e-12)
        np.testing.assert_allclose(log.gamma_dot, 0.9, atol=1e-14)

    def test_two_agent_closed_form(self):
        # d = gamma_1 - gamma_0 obeys d'' = -b d' - 2a d; with a=1, b=2 the roots are -1 +- i
        sc = load_bundled("two_agent_analytic")
        log = run(sc)
        t = log.t
        d0 = sc.gamma0[1] - sc.gamma0[0]
        dd0 = sc.gamma_dot0[1] - sc.gamma_dot0[0]
        d = np.exp(-t) * (d0 * np.cos(t) + (dd0 + d0) * np.sin(t))
        np.testing.assert_allclose(log.gamma[:, 1] - log.gamma[:, 0], d, atol=1e-9)
        # sum s obeys s'' = -b (s' - 2)
        sdot = 2.0 + (sum(sc.gamma_dot0) - 2.0) * np.exp(-2.0 * t)
        np.testing.assert_allclose(log.gamma_dot.sum(axis=1), sdot, atol=1e-9)

    def test_sec5_coordination_converges(self):
        sc = load_bundled("paper_sec5")
        log = run(sc)
        m = extract_metrics(log, build_q(sc.n), sc.gamma_dot_d)
        assert m.gamma_spread[-1] < 1e-3
        assert m.final_residuals["rate_error"] < 1e-2
        assert not [ev for ev in log.events if ev["kind"] != "pace_step"]


class TestLogShape:
    def test_grid_and_count(self):
        sc = make(dt=0.03, t_end=1.0)
        log = run(sc)
        assert len(log.t) == math.floor(1.0 / 0.03) + 1
        np.testing.assert_allclose(np.diff(log.t), 0.03, rtol=1e-12)
        assert (np.diff(log.t) > 0).all()

    def test_exact_multiple(self):
        log = run(make(dt=0.01, t_end=0.3))
        assert len(log.t) == 31 and log.t[-1] == pytest.approx(0.3)

    def test_csv_header(self):
        text = run(make(n=3, t_end=0.05)).to_csv()
        header = text.splitlines()[0]
        assert header == (
            "t,gamma_0,gamma_1,gamma_2,gammadot_0,gammadot_1,gammadot_2,"
            "epf_0,epf_1,epf_2,xi_tc_norm,segment"
        )
        assert len(text.splitlines()) == 1 + 6

    def test_determinism(self):
        sc = make(n=3, errors=[(1, 0, 0)] * 3, pf_error_noise=0.3, seed=7)
        assert run(sc).to_csv() == run(sc).to_csv()
        other = dataclasses.replace(sc, seed=8)
        assert run(other).to_csv() != run(sc).to_csv()


class TestStepping:
    def test_pf_errors_follow_exact_map(self):
        errs = [(1.0, -2.0, 0.5), (0.0, 3.0, 0.0)]
        sc = make(errors=errs, dt=0.01, t_end=2.0)
        log = run(sc)
        e = np.array(errs)
        for k in range(1, len(log.t)):
            e = np.array([propagate_error(x, 0.01, 1.0, np.zeros(3)) for x in e])
            np.testing.assert_allclose(log.epf[k], np.linalg.norm(e, axis=1), rtol=1e-12)

    def test_gust_matches_exact_map(self):
        gust = DisturbanceProfile("windowed-gust", (0.0, 1.0, 0.0), (0.333, 0.777))
        sc = make(n=2, dt=0.01, t_end=1.5)
        sc = dataclasses.replace(sc, vehicles=(VehicleSpec((0, 0, 0), 2.0, gust), VehicleSpec()))
        log = run(sc)
        e = np.zeros(3)
        for s0, s1, d in [(0.0, 0.333, 0.0), (0.333, 0.777, 1.0), (0.777, 1.5, 0.0)]:
            e = propagate_error(e, s1 - s0, 2.0, [0.0, d, 0.0])
        assert log.epf[-1, 0] == pytest.approx(np.linalg.norm(e), rel=1e-12)

    def test_off_grid_switch_is_split(self):
        # alternating connected / empty graph with dwells that never land on the grid
        full = Digraph.from_edges(2, [(0, 1), (1, 0)])
        empty = Digraph.from_edges(2, [])
        sched = DigraphSchedule(((full, 0.137), (empty, 0.137)))
        base = make(gamma0=[0.0, 1.0], t_end=2.0, dt=0.01, qos=None)
        sc = dataclasses.replace(base, schedule=sched)
        coarse = run(sc, waive_connectivity=True)
        fine = run(dataclasses.replace(sc, dt=0.0025), waive_connectivity=True)
        # splitting at switches keeps high order despite the non-smooth forcing
        diff = np.abs(coarse.gamma[-1] - fine.gamma[-1]).max()
        assert diff < 1e-8

    def test_pace_step_event_and_rate(self):
        sc = make(pace=((0.0, 1.0), (1.2345, 0.5)), t_end=3.0)
        log = run(sc)
        kinds = [(ev["kind"], ev["t"]) for ev in log.events]
        assert kinds == [("pace_step", 1.2345)]
        assert (log.gamma_dot_d[log.t < 1.2345] == 1.0).all()
        assert (log.gamma_dot_d[log.t >= 1.2345] == 0.5).all()

    def test_rate_clamp(self):
        # strong consensus pull on a leader that is far ahead drives its rate negative
        sc = make(gamma0=[5.0, 0.0], gamma_dot0=[0.0, 0.0], a=20.0, b=0.5, pace=((0.0, 0.0),),
                  t_end=1.0)
        log = run(sc)
        assert any(ev["kind"] == "rate_clamp" for ev in log.events)
        assert (log.gamma_dot >= 0.0).all()
        assert (np.diff(log.gamma, axis=0) >= 0.0).all()

    def test_frozen_agent_stays_put(self):
        sc = make(gamma0=[20.0, 19.0], t_end=3.0)
        log = run(sc)
        assert (log.gamma[:, 0] == 20.0).all()
        assert (log.gamma_dot[:, 0] == 0.0).all()
        assert log.gamma[-1, 1] == 20.0


class TestValidation:
    def test_enumerates_all(self):
        sc = make(dt=0.5, t_end=-1.0, b=0.0, gamma0=[-1.0, 0.0], gamma_dot0=[-1.0, 1.0])
        errs = validate_scenario(sc)
        joined = "\n".join(errs)
        for key in ("dt:", "t_end:", "gains.b", "gamma0[0]", "gamma_dot0[0]"):
            assert key in joined
        with pytest.raises(ScenarioError) as exc:
            run(sc)
        assert len(exc.value.errors) == len(errs)

    def test_dt_boundary(self):
        assert validate_scenario(make(dwell=0.03, dt=0.01)) == []
        assert validate_scenario(make(dwell=0.03, dt=0.0101))

    def test_connectivity_and_waiver(self):
        sc = make(n=3, edges=[(1, 0)])
        assert any("spanning tree" in e for e in validate_scenario(sc))
        assert validate_scenario(sc, waive_connectivity=True) == []

    def test_missing_qos(self):
        assert any(e.startswith("qos") for e in validate_scenario(make(qos=None)))

    def test_pace_problems(self):
        assert PaceProfile(((0.5, 1.0),)).problems()
        assert PaceProfile(((0.0, 1.0), (0.0, 0.9))).problems()
        assert PaceProfile(((0.0, -1.0),)).problems()
        assert PaceProfile(()).problems()

    def test_finite_schedule_coverage(self):
        sc = make(t_end=5.0)
        sched = DigraphSchedule(sc.schedule.segments, cycle=False)
        errs = validate_scenario(dataclasses.replace(sc, schedule=sched), True)
        assert any("covers" in e for e in errs)


class TestAuxiliaryConsensus:
    def test_consensus_invariant(self):
        s = load_bundled("paper_sec5").schedule
        log = run_auxiliary_consensus(s, 0.8, np.full(5, 3.3), 0.005, 2.0)
        np.testing.assert_allclose(log.x, 3.3, atol=1e-12)

    def test_constant_connected_monotone(self):
        s = DigraphSchedule(((Digraph.from_edges(4, [(1, 0), (2, 1), (3, 2), (0, 3)]), 1.0),))
        log = run_auxiliary_consensus(s, 1.0, [0.0, 1.0, -2.0, 4.0], 0.01, 20.0)
        d = log.x.max(axis=1) - log.x.min(axis=1)
        assert (np.diff(d) <= 1e-12).all()
        assert d[-1] < 1e-3

    def test_envelope(self, rng):
        for _ in range(10):
            n = rng.randint(2, 6)
            s, T, delta = random_connected_schedule(rng, n)
            cc = consensus_constants(n, T, delta, 1.0, 1.0)
            x0 = np.array([rng.uniform(-5, 5) for _ in range(n)])
            log = run_auxiliary_consensus(s, 1.0, x0, s.min_dwell / 3, 5.0)
            env = diam(x0) * cc.k * np.exp(-cc.lam * log.t)
            assert (log.x.max(axis=1) - log.x.min(axis=1) <= env + 1e-9).all()

    def test_rejects(self):
        s = DigraphSchedule(((Digraph.from_edges(2, [(0, 1)]), 0.3),))
        with pytest.raises(ScenarioError):
            run_auxiliary_consensus(s, 1.0, [0, 1], 0.2, 1.0)
        with pytest.raises(ScenarioError):
            run_auxiliary_consensus(s, 1.0, [0, 1, 2], 0.1, 1.0)

    def test_phi_is_q_x(self):
        # phi = Q x obeys the reduced dynamics -(a/b) Q L Q^T phi when 1 is in ker L
        s = DigraphSchedule(((Digraph.from_edges(3, [(1, 0), (2, 1), (0, 2), (0, 1)]), 1.0),))
        q = build_q(3)
        log = run_auxiliary_consensus(s, 0.5, [1.0, -1.0, 2.0], 0.01, 3.0)
        lap = s.laplacian_at(0.0)
        phi = q @ log.x[0]
        m = -0.5 * q @ lap @ q.T
        for _ in range(300):
            k1 = m @ phi
            k2 = m @ (phi + 0.005 * k1)
            k3 = m @ (phi + 0.005 * k2)
            k4 = m @ (phi + 0.01 * k3)
            phi = phi + 0.01 / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        np.testing.assert_allclose(q @ log.x[-1], phi, atol=1e-12)


def fake_log(t, gamma, gamma_dot, rate=1.0):
    t = np.asarray(t, dtype=float)
    N, n = np.shape(gamma)
    return SimLog(t, np.asarray(gamma, float), np.asarray(gamma_dot, float), np.zeros((N, n)),
                  np.zeros((N, n)), np.full(N, rate), np.zeros(N), np.zeros(N, dtype=int))


class TestMetrics:
    def test_consensus_log_is_zero(self):
        t = np.linspace(0, 5, 51)
        g = np.stack([t, t, t], axis=1)
        m = extract_metrics(fake_log(t, g, np.ones_like(g)), build_q(3), PaceProfile())
        assert not m.gamma_spread.any() and not m.rate_error.any()
        assert np.abs(m.xi_tc_norm).max() < 1e-13

    def test_constant_offset(self):
        t = np.linspace(0, 5, 51)
        g = np.stack([t, t + 0.1], axis=1)
        m = extract_metrics(fake_log(t, g, np.ones_like(g)), build_q(2), PaceProfile())
        np.testing.assert_allclose(m.gamma_spread, 0.1, atol=1e-12)
        assert m.final_residuals["gamma_spread"] == pytest.approx(0.1)

    def test_series_non_negative_and_decay_fit(self):
        t = np.linspace(0, 5, 501)
        g = np.stack([np.zeros_like(t), np.exp(-0.7 * t)], axis=1)
        gd = np.ones_like(g)
        m = extract_metrics(fake_log(t, g, gd), build_q(2), PaceProfile())
        assert m.decay_rate == pytest.approx(0.7, rel=1e-9)
        for s in (m.gamma_spread, m.rate_error, m.xi_tc_norm):
            assert (s >= 0).all()

    def test_settling_time(self):
        t = np.arange(6.0)
        assert settling_time(t, [1, 0.5, 0.001, 0.5, 0.001, 0.0], 0.01) == 4.0
        assert settling_time(t, [0, 0, 0, 0, 0, 0], 0.01) == 0.0
        assert settling_time(t, [0, 0, 0, 0, 0, 1], 0.01) is None
        assert settling_time(t, [1, 0.5, 0.001, 0.5, 0.001, 0.0], 0.01, t_stop=3.0) is None

    def test_sec5_rate_spike(self):
        sc = load_bundled("paper_sec5")
        m = extract_metrics(run(sc), build_q(5), sc.gamma_dot_d)
        before = m.rate_error[(m.t > 14.0) & (m.t < 15.3)]
        after = m.rate_error[(m.t >= 15.3) & (m.t < 16.0)]
        assert before.max() < 0.01
        assert after.max() > 0.05
        assert settling_time(m.t, m.rate_error, 0.01, t_start=15.3) < sc.trajectories.t_f


class TestIss:
    def constants(self, sc):
        T, delta = sc.qos
        cap = iss_bounds(sc.n, T, delta, sc.gains.a, sc.gains.b).lambda_tc_max
        return iss_bounds(sc.n, T, delta, sc.gains.a, sc.gains.b, lambda_tc=cap)

    def check(self, sc):
        log = run(sc)
        m = extract_metrics(log, build_q(sc.n), sc.gamma_dot_d)
        sup = disturbance_sup(log, sc.gamma_dot_d, sc.bounds.ramp)
        return check_iss_bound(m, self.constants(sc), *sup), m

    def test_zero_initial_error(self):
        sc = make(t_end=3.0)
        rep, m = self.check(sc)
        assert rep.holds
        assert np.abs(m.xi_tc_norm).max() < 1e-13
        assert rep.min_margin >= 0.0

    def test_two_agent_analytic(self):
        rep, m = self.check(load_bundled("two_agent_analytic"))
        assert rep.holds
        assert (rep.bound >= m.xi_tc_norm).all()

    def test_margin_grows_with_pf_errors(self):
        base = load_bundled("two_agent_analytic")
        with_err = dataclasses.replace(
            base, vehicles=(VehicleSpec((0.0, 1.0, 0.0)), VehicleSpec((0.0, -0.5, 0.0)))
        )
        r0, _ = self.check(base)
        r1, _ = self.check(with_err)
        assert r0.holds and r1.holds
        # the kappa_2 term scales with sup |e_PF|, so the bound loosens
        assert r1.bound[-1] > r0.bound[-1]

    def test_sup_terms(self):
        sc = make(errors=[(3.0, 4.0, 0.0), (0.0, 0.0, 0.0)], pace=((0.0, 1.0), (1.0, 0.9)), t_end=2.0)
        log = run(sc)
        sup_epf, sup_gdd = disturbance_sup(log, sc.gamma_dot_d, 0.5)
        assert sup_epf == pytest.approx(5.0)
        assert sup_gdd == pytest.approx(0.2)


def test_random_scenarios_converge(rng):
    for _ in range(20):
        n = rng.randint(2, 6)
        s, T, delta = random_connected_schedule(rng, n)
        sc = make(n=n, gamma0=[rng.uniform(0, 1) for _ in range(n)],
                  gamma_dot0=[rng.uniform(0.8, 1.2) for _ in range(n)],
                  a=4.0, b=2.0, dt=s.min_dwell / 3, t_end=19.0, qos=(T, delta))
        sc = dataclasses.replace(sc, schedule=s)
        log = run(sc)
        spread = log.gamma.max(axis=1) - log.gamma.min(axis=1)
        assert spread[-1] < 1e-3, (n, spread[-1])
