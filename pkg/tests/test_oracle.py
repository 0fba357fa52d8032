import numpy as np
import pytest

from cams.errors import ConfigError
from cams.game import GameSpec, make_hexner
from cams.oracle import (
    HexnerOracle,
    analytic_game_value,
    analytic_p1_strategy,
    analytic_p2_strategy,
    complete_info_action,
    complete_info_value,
    discrete_riccati,
    nonrevealing_action,
    revelation_scan,
    revelation_time,
    solve_riccati,
)


@pytest.fixture(scope="module")
def orc():
    return HexnerOracle(make_hexner())


@pytest.fixture(scope="module")
def orc_steep():
    # steeper terminal penalties move the reveal time strictly inside (0, T)
    return HexnerOracle(make_hexner(K1=4 * np.eye(2), K2=4 * np.eye(2)))


class TestSolveRiccati:
    def test_zero_terminal_penalty(self):
        A = np.array([[0.0, 1.0], [0.0, 0.0]])
        B = np.array([[0.0], [1.0]])
        sol = solve_riccati(A, B, np.eye(1), np.zeros((2, 2)), 1.0, 0.01)
        assert np.abs(sol.P).max() == 0.0
        assert np.abs(sol.L).max() == 0.0

    def test_scalar_closed_form(self):
        # Pdot = P^2, P(T)=1  =>  P(t) = 1/(1 + (T - t))
        sol = solve_riccati(
            np.zeros((1, 1)), np.eye(1), np.eye(1), np.eye(1), 1.0, 0.0025
        )
        assert abs(sol.P_at(0.0)[0, 0] - 0.5) < 1e-6
        for t in (0.0, 0.3, 0.77, 1.0):
            assert abs(sol.P_at(t)[0, 0] - 1.0 / (2.0 - t)) < 1e-6

    def test_terminal_condition_exact(self):
        K = np.array([[2.0, 0.5], [0.5, 1.0]])
        A = np.zeros((2, 2))
        B = np.eye(2)
        sol = solve_riccati(A, B, np.eye(2), K, 0.5, 0.005)
        assert np.abs(sol.P[-1] - K).max() == 0.0

    def test_symmetry_preserved(self, orc):
        for P in orc.ric1.P[:: 40]:
            assert np.abs(P - P.T).max() < 1e-12

    def test_non_pd_rejected(self):
        with pytest.raises(ConfigError):
            solve_riccati(np.zeros((1, 1)), np.eye(1), -np.eye(1), np.eye(1), 1.0, 0.01)


class TestDiscreteRiccati:
    def test_zoh_matches_continuous(self, orc):
        _, Pz, _ = discrete_riccati(orc.A1, orc.B1, orc.R1, orc.K1_tilde, 1.0, 1e-3,
                                    zoh=True)
        P0 = orc.ric1.P_at(0.0)
        assert np.abs(Pz[0] - P0).max() / np.abs(P0).max() < 1e-4

    def test_euler_converges_linearly(self, orc):
        P0 = orc.ric1.P_at(0.0)
        errs = []
        for tau in (0.1, 0.05, 0.025):
            _, Pe, _ = discrete_riccati(orc.A1, orc.B1, orc.R1, orc.K1_tilde, 1.0, tau)
            errs.append(np.abs(Pe[0] - P0).max())
        assert errs[0] > errs[1] > errs[2]
        assert errs[0] / errs[2] > 3.0  # roughly O(tau)

    def test_bad_horizon(self, orc):
        with pytest.raises(ConfigError):
            discrete_riccati(orc.A1, orc.B1, orc.R1, orc.K1_tilde, 1.0, 0.3)


class TestCompleteInfo:
    def test_at_target_with_harmless_opponent(self):
        spec = make_hexner(K2=np.zeros((2, 2)))
        o = HexnerOracle(spec)
        x = np.array([1.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0])  # pos1 = theta_0
        assert complete_info_value(0.0, x, 0, o) == pytest.approx(0.0, abs=1e-12)
        u = complete_info_action(0.0, x, 0, 1, o)
        assert np.abs(u).max() < 1e-10

    def test_value_vs_fine_discrete_recursion(self, orc):
        rng = np.random.default_rng(0)
        _, P1z, _ = discrete_riccati(orc.A1, orc.B1, orc.R1, orc.K1_tilde, 1.0, 1e-3,
                                     zoh=True)
        _, P2z, _ = discrete_riccati(orc.A2, orc.B2, orc.R2, orc.K2_tilde, 1.0, 1e-3,
                                     zoh=True)
        for _ in range(30):
            x = rng.uniform(-2, 2, size=8)
            i = int(rng.integers(2))
            e1 = x[:4] - orc.embed(orc.targets[i])
            e2 = x[4:] - orc.embed(orc.targets[i])
            ref = e1 @ P1z[0] @ e1 - e2 @ P2z[0] @ e2
            got = complete_info_value(0.0, x, i, orc)
            assert abs(got - ref) <= 1e-4 * max(1.0, abs(ref))

    def test_closed_loop_rollout_matches_value(self, orc):
        rng = np.random.default_rng(1)
        dt = 1e-3
        for _ in range(5):
            x = rng.uniform(-1.5, 1.5, size=8)
            i = int(rng.integers(2))
            th = orc.targets[i]
            cost = 0.0
            s1, s2 = (part.copy() for part in orc.split_state(x))
            for k in range(int(round(1.0 / dt))):
                t = k * dt
                u = orc.tracking_action(1, t, s1, th)
                v = orc.tracking_action(2, t, s2, th)
                cost += dt * (u @ orc.R1 @ u - v @ orc.R2 @ v)
                s1 = _rk4_step(orc.A1, orc.B1, s1, u, dt)
                s2 = _rk4_step(orc.A2, orc.B2, s2, v, dt)
            cost += (s1[:2] - th) @ (s1[:2] - th) - (s2[:2] - th) @ (s2[:2] - th)
            val = complete_info_value(0.0, x, i, orc)
            assert abs(cost - val) <= 1e-3 * max(1.0, abs(val))

    def test_vertex_value_equals_game_family_value(self, orc):
        rng = np.random.default_rng(2)
        for _ in range(20):
            x = rng.uniform(-2, 2, size=8)
            i = int(rng.integers(2))
            p = np.eye(2)[i]
            fam = analytic_game_value(0.0, x, p, orc, mode="euler")
            assert fam == pytest.approx(orc.discrete_vertex_value(0.0, x, i), abs=1e-12)
            famc = analytic_game_value(0.0, x, p, orc, mode="continuous")
            assert famc == pytest.approx(complete_info_value(0.0, x, i, orc), abs=1e-9)


def _rk4_step(A, B, s, a, dt):
    def f(z):
        return A @ z + B @ a

    k1 = f(s)
    k2 = f(s + 0.5 * dt * k1)
    k3 = f(s + 0.5 * dt * k2)
    k4 = f(s + dt * k3)
    return s + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


class TestNonrevealing:
    def test_symmetric_mean_target(self, orc):
        x = np.array([0.3, -0.2, 0.1, 0.0, -0.5, 0.4, 0.0, 0.2])
        u = nonrevealing_action(0.5, x, [0.5, 0.5], 1, orc)
        # mean target is the origin: feedback acts on the raw state
        e = x[:4]
        assert np.allclose(u, -orc.ric1.L_at(0.5) @ e, atol=1e-12)

    def test_vertex_collapse(self, orc):
        rng = np.random.default_rng(3)
        for i in (0, 1):
            p = np.eye(2)[i]
            for _ in range(10):
                x = rng.uniform(-2, 2, size=8)
                t = float(rng.uniform(0, 1))
                assert np.allclose(
                    nonrevealing_action(t, x, p, 1, orc),
                    complete_info_action(t, x, i, 1, orc),
                    atol=1e-12,
                )

    def test_continuous_in_p(self, orc):
        rng = np.random.default_rng(4)
        x = rng.uniform(-2, 2, size=8)
        for q in np.linspace(0.0, 1.0, 21):
            u1 = nonrevealing_action(0.3, x, [q, 1 - q], 1, orc)
            u2 = nonrevealing_action(0.3, x, [q + 1e-5, 1 - q - 1e-5], 1, orc)
            assert np.linalg.norm(u2 - u1) < 1e-3


class TestRevelationTime:
    def test_harmless_opponent_reveals_immediately(self):
        o = HexnerOracle(make_hexner(K2=np.zeros((2, 2))))
        assert revelation_time(o) == 0.0

    def test_default_instance_scan_monotone(self, orc):
        # identity penalties put the Riccati inflection past the horizon, so
        # the reveal objective only grows: revealing immediately is optimal
        s, J = revelation_scan(orc)
        assert revelation_time(orc) == 0.0
        assert (np.diff(J) >= -1e-12).all()

    def test_interior_for_steeper_penalties(self, orc_steep):
        tr = revelation_time(orc_steep)
        assert 0.0 < tr < 1.0
        s, J = revelation_scan(orc_steep)
        assert J.min() < J[0] - 1e-4 and J.min() < J[-1] - 1e-4

    def test_target_weight_scaling_reveals_earlier(self, orc_steep):
        hot = HexnerOracle(make_hexner(K1=400 * np.eye(2), K2=4 * np.eye(2)))
        assert revelation_time(hot) < revelation_time(orc_steep)

    def test_grid_refinement_stable(self, orc_steep):
        t1 = revelation_time(orc_steep, resolution=1e-3)
        t2 = revelation_time(orc_steep, resolution=5e-4)
        assert abs(t1 - t2) <= 2 * 5e-4 + 1e-12

    def test_zero_lag_symmetric_scan_is_flat(self, orc):
        s, J = revelation_scan(orc, lag=0.0)
        assert np.ptp(J) < 1e-10
        assert revelation_time(orc, lag=0.0) == 0.0


class TestStrategies:
    def test_nonrevealing_phase_type_independent(self, orc_steep):
        tr = revelation_time(orc_steep)
        rng = np.random.default_rng(5)
        x = rng.uniform(-1, 1, size=8)
        p = np.array([0.5, 0.5])
        u0 = analytic_p1_strategy(tr / 2, x, p, 0, orc_steep, t_r=tr)
        u1 = analytic_p1_strategy(tr / 2, x, p, 1, orc_steep, t_r=tr)
        assert np.array_equal(u0, u1)

    def test_revealing_phase_diverges(self, orc_steep):
        tr = revelation_time(orc_steep)
        x = np.zeros(8)
        p = np.array([0.5, 0.5])
        u0 = analytic_p1_strategy(tr + 0.1, x, p, 0, orc_steep, t_r=tr)
        u1 = analytic_p1_strategy(tr + 0.1, x, p, 1, orc_steep, t_r=tr)
        assert np.linalg.norm(u0 - u1) > 0.1

    def test_rollout_splits_at_reveal_time(self):
        o = HexnerOracle(make_hexner(K1=8 * np.eye(2), K2=8 * np.eye(2)))
        tr = revelation_time(o)
        assert 0.0 < tr < 1.0
        dt = 1e-3
        p = np.array([0.5, 0.5])
        xs = {i: np.zeros(8) for i in (0, 1)}
        pre_gap, post_gap = [], []
        for k in range(int(round(1.0 / dt))):
            t = k * dt
            gap = np.linalg.norm(xs[0][:2] - xs[1][:2])
            (pre_gap if t < tr else post_gap).append(gap)
            for i in (0, 1):
                u = analytic_p1_strategy(t, xs[i], p, i, o, t_r=tr)
                v = analytic_p2_strategy(t, xs[i], p, i, o, t_r=tr)
                s1 = _rk4_step(o.A1, o.B1, xs[i][:4], u, dt)
                s2 = _rk4_step(o.A2, o.B2, xs[i][4:], v, dt)
                xs[i] = np.concatenate([s1, s2])
        inter_target = np.linalg.norm(o.targets[0] - o.targets[1])
        assert max(pre_gap) < 0.05 * inter_target
        assert post_gap[-1] > 0.2 * inter_target
        # each type ends nearer its own target than the other's
        for i in (0, 1):
            own = np.linalg.norm(xs[i][:2] - o.targets[i])
            other = np.linalg.norm(xs[i][:2] - o.targets[1 - i])
            assert own < other

    def test_game_value_modes_close_for_small_tau(self):
        spec = make_hexner(step=0.05)
        o = HexnerOracle(spec)
        x = np.array([0.0, 0.5, -0.3, 0.0, 0.2, 0.0, 0.0, -0.4])
        p = np.array([0.5, 0.5])
        ve = analytic_game_value(0.0, x, p, o, mode="euler")
        vc = analytic_game_value(0.0, x, p, o, mode="continuous")
        assert abs(ve - vc) < 0.1 * max(1.0, abs(vc))


class TestOracleConstruction:
    def test_requires_homing_spec(self):
        spec = GameSpec(
            num_types=1,
            horizon=1.0,
            step=0.5,
            state_dim=1,
            u_dim=1,
            v_dim=1,
            u_box=[[-1, 1]],
            v_box=[[-1, 1]],
            state_box=[[-1, 1]],
            dynamics=lambda x, u, v: np.zeros(1),
            running_cost=lambda u, v: np.zeros(1),
            terminal_cost=lambda x: np.zeros(1),
            prior=[1.0],
        )
        with pytest.raises(ConfigError):
            HexnerOracle(spec)

    def test_dt_cap(self):
        with pytest.raises(ConfigError):
            HexnerOracle(make_hexner(), dt=0.1)

    def test_off_grid_time_rejected(self, orc):
        with pytest.raises(ConfigError):
            orc.stage_index(0.1)
